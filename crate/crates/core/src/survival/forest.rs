//! Bagged regression trees with variance-reduction splits.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means `ceil(p / 3)`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn resolved_features(&self, p: usize) -> Result<usize> {
        let m = self.features_per_split.unwrap_or(p.div_ceil(3));
        if m == 0 || m > p {
            return Err(Error::Config(format!("features_per_split {m} must be in 1..={p}")));
        }
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

/// Nodes in an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right }
                }
                Node::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    m: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let value = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value, samples: idx.len() });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, idx: &mut [usize]) -> Option<BestSplit> {
        let p = self.x[0].len();
        let n = idx.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<BestSplit> = None;
        for feature in sample(&mut self.rng, p, self.m).into_iter() {
            idx.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.y[idx[k]];
                let (nl, nr) = (k + 1, n - k - 1);
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let (a, b) = (self.x[idx[k]][feature], self.x[idx[k + 1]][feature]);
                if a == b {
                    continue;
                }
                // SSE reduction up to a constant: sum_l^2/n_l + sum_r^2/n_r - total^2/n.
                let right_sum = total - left_sum;
                let gain =
                    left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - total * total / n as f64;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit { feature, threshold, gain });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2 * self.cfg.min_samples_leaf {
            return self.leaf(idx);
        }
        let Some(split) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0, samples: 0 });
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let l = self.grow(&mut left, depth + 1);
        let r = self.grow(&mut right, depth + 1);
        self.nodes[slot] = Node::Split { feature: split.feature, threshold: split.threshold, left: l, right: r };
        slot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

fn check_matrix(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} feature rows but {} targets", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 training samples".into()));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(Error::InvalidArgument("feature rows are empty".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != p {
            return Err(Error::Shape(format!("row {i} has {} features, expected {p}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("row {i} has a non-finite feature")));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite target".into()));
    }
    Ok(p)
}

pub fn fit_forest(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate()?;
    let p = check_matrix(x, y)?;
    if x.len() < cfg.min_samples_leaf {
        return Err(Error::InvalidArgument(format!(
            "{} samples is fewer than min_samples_leaf {}",
            x.len(),
            cfg.min_samples_leaf
        )));
    }
    let m = cfg.resolved_features(p)?;
    let n = x.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            let mut idx: Vec<usize> =
                if cfg.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            let mut b = Builder { x, y, cfg, m, rng, nodes: Vec::new() };
            b.grow(&mut idx, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { config: *cfg, n_features: p, trees })
}

impl Forest {
    /// Mean of the tree outputs.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!("expected {} features, got {}", self.n_features, x.len())));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict_many(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.par_iter().map(|r| self.predict(r)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Forest> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let forest: Forest = serde_json::from_reader(std::io::BufReader::new(f))?;
        if forest.trees.is_empty() || forest.n_features == 0 {
            return Err(Error::Format(format!("{}: empty forest", path.display())));
        }
        Ok(forest)
    }
}
