mod common;

use common::{logistic_gradient_error, rng};
use crimecast::classic::{
    fit_gaussian_nb, fit_linear_regression, fit_logistic_regression, mean_squared_error, LogisticConfig,
};
use crimecast::featurize::ClassWeights;
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let g = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_fn((n, d), |_| g.sample(&mut r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logistic_gradient_matches_finite_differences(seed in any::<u64>()) {
        let err = logistic_gradient_error(seed);
        prop_assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn logistic_loss_never_increases(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = gaussian(60, 3, seed);
        let mut y: Vec<u32> = x.rows().into_iter().map(|row| u32::from(row[0] - row[2] + r.random_range(-1.0..1.0) > 0.0)).collect();
        y[0] = 0;
        y[1] = 1;
        let cfg = LogisticConfig { learning_rate: r.random_range(0.01..5.0), max_iters: 200, ..LogisticConfig::default() };
        let cw = ClassWeights::balanced(&y).unwrap();
        let m = fit_logistic_regression(x.view(), &y, Some(&cw), cfg).unwrap();
        for w in m.loss_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn ols_residuals_are_orthogonal_to_inputs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(10..80);
        let d = r.random_range(1..5);
        let x = gaussian(n, d, seed);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let m = fit_linear_regression(x.view(), &y).unwrap();
        let pred = m.predict(x.view()).unwrap();
        for col in x.columns() {
            let dot: f64 = col.iter().zip(&y).zip(&pred).map(|((a, t), p)| a * (t - p)).sum();
            prop_assert!(dot.abs() <= 1e-8 * n as f64, "X^T r = {dot}");
        }
    }

    #[test]
    fn naive_bayes_ignores_row_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = gaussian(40, 3, seed);
        let y: Vec<u32> = (0..40).map(|i| (i % 3) as u32).collect();
        let mut order: Vec<usize> = (0..40).collect();
        order.shuffle(&mut r);
        let xs = x.select(Axis(0), &order);
        let ys: Vec<u32> = order.iter().map(|&i| y[i]).collect();
        prop_assert_eq!(fit_gaussian_nb(x.view(), &y).unwrap(), fit_gaussian_nb(xs.view(), &ys).unwrap());
    }

    #[test]
    fn naive_bayes_posteriors_are_normalised(seed in any::<u64>()) {
        let x = gaussian(30, 2, seed);
        let y: Vec<u32> = (0..30).map(|i| (i % 2) as u32).collect();
        let m = fit_gaussian_nb(x.view(), &y).unwrap();
        let probe = gaussian(50, 2, seed.wrapping_add(1)).mapv(|v| v * 20.0);
        for row in m.predict_proba(probe.view()).unwrap().rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn ols_beats_random_affine_competitors() {
    let mut r = rng(11);
    let x = gaussian(50, 3, 11);
    let y: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|row| 1.5 * row[0] - 2.0 * row[1] + 0.3 * row[2] + 4.0 + r.random_range(-1.0..1.0))
        .collect();
    let m = fit_linear_regression(x.view(), &y).unwrap();
    let best = mean_squared_error(&y, &m.predict(x.view()).unwrap());
    for _ in 0..1000 {
        let w: Vec<f64> = (0..3).map(|_| r.random_range(-5.0..5.0)).collect();
        let b = r.random_range(-10.0..10.0);
        let pred: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|row| b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        assert!(best <= mean_squared_error(&y, &pred));
    }
}
