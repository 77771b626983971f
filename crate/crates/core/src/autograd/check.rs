//! Central finite-difference gradient checking.
//!
//! The analytic side seeds backward with a random projection `r` of the
//! output, so every output entry contributes; the numeric side perturbs one
//! input entry at a time and re-evaluates `L = <r, f(x)>` from scratch.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DiffTensor, Graph, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Absolute floor of the relative-error denominator.
    pub floor: f64,
    /// Entries checked per input tensor (all entries when the tensor is smaller).
    pub entries_per_input: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { step: 1e-4, floor: 1e-3, entries_per_input: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl CheckOutcome {
    pub fn merge(&mut self, other: &CheckOutcome) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn projection(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn entries(len: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= cap {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, cap).into_vec();
        v.sort_unstable();
        v
    }
}

/// Check a graph-building function `f` against finite differences with
/// respect to every tensor in `inputs`.
pub fn check_graph_fn<F>(inputs: &[DiffTensor<f64>], f: F, seed: u64, cfg: &CheckConfig) -> Result<CheckOutcome>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |ins: &[DiffTensor<f64>], track: bool| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> =
            ins.iter().map(|t| if track { g.leaf(t.clone()) } else { g.constant(t.clone()) }).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, vars, out))
    };

    let (mut g, vars, out) = eval(inputs, true)?;
    let r = projection(g.shape(out).len(), &mut rng);
    g.backward(out, &r)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.shape().len()]))
        .collect();

    let objective = |ins: &[DiffTensor<f64>]| -> Result<f64> {
        let (g, _, out) = eval(ins, false)?;
        Ok(g.value(out).iter().zip(&r).map(|(a, b)| a * b).sum())
    };

    let mut outcome = CheckOutcome { max_rel_err: 0.0, checked: 0 };
    let mut work = inputs.to_vec();
    for (j, grads) in analytic.iter().enumerate() {
        for e in entries(inputs[j].shape().len(), cfg.entries_per_input, &mut rng) {
            let orig = inputs[j].value()[e];
            work[j].value_mut()[e] = orig + cfg.step;
            let lp = objective(&work)?;
            work[j].value_mut()[e] = orig - cfg.step;
            let lm = objective(&work)?;
            work[j].value_mut()[e] = orig;
            let numeric = (lp - lm) / (2.0 * cfg.step);
            outcome.max_rel_err = outcome.max_rel_err.max(rel_err(grads[e], numeric, cfg.floor));
            outcome.checked += 1;
        }
    }
    Ok(outcome)
}

/// Check a scalar function that reports its own analytic gradient.
pub fn check_scalar_fn<F>(x: &[f64], f: F, seed: u64, cfg: &CheckConfig) -> CheckOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grad) = f(x);
    let mut work = x.to_vec();
    let mut outcome = CheckOutcome { max_rel_err: 0.0, checked: 0 };
    for e in entries(x.len(), cfg.entries_per_input, &mut rng) {
        work[e] = x[e] + cfg.step;
        let lp = f(&work).0;
        work[e] = x[e] - cfg.step;
        let lm = f(&work).0;
        work[e] = x[e];
        let numeric = (lp - lm) / (2.0 * cfg.step);
        outcome.max_rel_err = outcome.max_rel_err.max(rel_err(grad[e], numeric, cfg.floor));
        outcome.checked += 1;
    }
    outcome
}
