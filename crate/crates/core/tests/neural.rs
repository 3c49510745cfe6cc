mod common;

use common::{mlp_gradient_error, rng};
use crimecast::neural::{init_mlp, train_mlp, TrainConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mlp_gradient_matches_finite_differences(seed in any::<u64>(), dead in any::<bool>()) {
        let err = mlp_gradient_error(seed, dead);
        prop_assert!(err <= 1e-4, "relative error {err}");
    }
}

fn dataset(n: usize, seed: u64) -> (Array2<f64>, Vec<u32>) {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, 3), |_| r.random_range(-1.0..1.0));
    let y = x
        .rows()
        .into_iter()
        .map(|row| u32::from(row[0] * row[1] > 0.0))
        .collect();
    (x, y)
}

#[test]
fn validation_rows_never_move_the_weights() {
    let (x, y) = dataset(200, 1);
    let (va, ya) = dataset(40, 2);
    let (vb, yb) = dataset(40, 3);
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let init = init_mlp(3, &cfg.hidden, &[0, 1], cfg.seed).unwrap();
    let (a, ha) = train_mlp(init.clone(), x.view(), &y, Some((va.view(), &ya)), &cfg).unwrap();
    let (b, hb) = train_mlp(init.clone(), x.view(), &y, Some((vb.view(), &yb)), &cfg).unwrap();
    let (c, _) = train_mlp(init, x.view(), &y, None, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(ha.iter().any(|h| h.split == "validation"));
    assert_ne!(ha, hb);
}

#[test]
fn training_is_deterministic() {
    let (x, y) = dataset(150, 4);
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let init = init_mlp(3, &cfg.hidden, &[0, 1], cfg.seed).unwrap();
        serde_json::to_vec(&train_mlp(init, x.view(), &y, None, &cfg).unwrap().0).unwrap()
    };
    assert_eq!(run(), run());
}
