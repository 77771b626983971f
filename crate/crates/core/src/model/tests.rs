use super::*;
use crate::phantom::{generate_case, PhantomConfig};
use crate::preprocess::{extract_patch, normalize_stack};

fn tiny() -> ModelConfig {
    ModelConfig { widths: vec![2, 3, 4], bottleneck_width: 5, seed: 1, ..ModelConfig::default() }
}

pub(crate) fn phantom_patch(p: usize, seed: u64) -> (Vec<f32>, Vec<u8>) {
    let cfg = PhantomConfig { dims: [p, p, p], tumor_radius: (0.3, 0.35), ..PhantomConfig::default() };
    let case = generate_case("patch", &cfg, seed).unwrap();
    let stack = normalize_stack(&case.stack).unwrap();
    let patch = extract_patch(&stack, Some(&case.labels), [0, 0, 0], p);
    (patch.data, patch.labels.unwrap())
}

#[test]
fn desk_config_output_shape_and_normalization() {
    let m = Model::<f32>::new(ModelConfig::default()).unwrap();
    let (x, _) = phantom_patch(16, 0);
    let mut g = Graph::new();
    let pv = m.register(&mut g, false);
    let xin = g.constant(DiffTensor::new(Shape::new(1, 4, 16, 16, 16), x).unwrap());
    let (y, trace) = m.forward(&mut g, xin, &pv).unwrap();
    assert_eq!(g.shape(y), Shape::new(1, 4, 16, 16, 16));
    let v = g.value(y);
    let sl = 16 * 16 * 16;
    for s in 0..sl {
        let sum: f32 = (0..4).map(|c| v[c * sl + s]).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
    // each encoder level feeds exactly one decoder concatenation at its own level
    let mut seen = trace.skips.clone();
    seen.sort();
    assert_eq!(seen, vec![(0, 0), (1, 1), (2, 2)]);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad_patch = ModelConfig { patch_size: 12, ..ModelConfig::default() };
    assert!(Model::<f32>::new(bad_patch).is_err());
    let descending = ModelConfig { widths: vec![16, 8, 32], ..ModelConfig::default() };
    assert!(Model::<f32>::new(descending).is_err());
    let one_class = ModelConfig { classes: 1, ..ModelConfig::default() };
    assert!(Model::<f32>::new(one_class).is_err());
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::<f32>::new(ModelConfig::default()).unwrap();
    let b = Model::<f32>::new(ModelConfig::default()).unwrap();
    assert_eq!(a, b);
    let c = Model::<f32>::new(ModelConfig { seed: 9, ..ModelConfig::default() }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn init_values() {
    let m = Model::<f32>::new(tiny()).unwrap();
    for p in m.params() {
        if p.name.ends_with("prelu.slope") {
            assert!(p.tensor.value().iter().all(|&a| a == 0.25));
        } else if p.name.ends_with("norm.gamma") {
            assert!(p.tensor.value().iter().all(|&a| a == 1.0));
        } else if p.name.ends_with("norm.beta") || p.name.ends_with("bias") {
            assert!(p.tensor.value().iter().all(|&a| a == 0.0));
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let m = Model::<f32>::new(ModelConfig::default()).unwrap();
    let (x, l) = phantom_patch(16, 3);
    let (_, grads, _) = m.loss_and_grads(&x, &l, 16, &LossConfig::default()).unwrap();
    for (g, p) in grads.iter().zip(m.params()) {
        assert!(g.iter().any(|&v| v != 0.0), "{} has identically zero gradient", p.name);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut m = Model::<f32>::new(tiny()).unwrap();
    let before = m.clone();
    let (x, l) = phantom_patch(16, 1);
    let mut opt = Adam::new(AdamConfig { learning_rate: 0.0, ..AdamConfig::default() });
    for _ in 0..3 {
        m.train_step(&x, &l, &mut opt, &LossConfig::default()).unwrap();
    }
    assert_eq!(m, before);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut m = Model::<f32>::new(tiny()).unwrap();
        let (x, l) = phantom_patch(16, 2);
        let mut opt = Adam::new(AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() });
        (0..5).map(|_| m.train_step(&x, &l, &mut opt, &LossConfig::default()).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_input_aborts_training() {
    let mut m = Model::<f32>::new(tiny()).unwrap();
    let (mut x, l) = phantom_patch(16, 1);
    x[5] = f32::NAN;
    let mut opt = Adam::new(AdamConfig::default());
    let err = m.train_step(&x, &l, &mut opt, &LossConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }));
}
