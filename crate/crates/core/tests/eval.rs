mod common;

use common::{pairwise_auc, rng, tied_scores};
use crimecast::eval::{accuracy, classification_report, confusion_matrix, roc_curve};
use crimecast::synth::{bayes_auc, rank_auc};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn trapezoid_auc_equals_pairwise_probability(seed in any::<u64>()) {
        let (scores, labels) = tied_scores(seed);
        let curve = roc_curve(&labels, &scores).unwrap();
        prop_assert!((curve.auc - pairwise_auc(&scores, &labels)).abs() <= 1e-9);
    }

    #[test]
    fn auc_ignores_increasing_transforms(seed in any::<u64>()) {
        let (scores, labels) = tied_scores(seed);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let a = roc_curve(&labels, &scores).unwrap().auc;
        let b = roc_curve(&labels, &warped).unwrap().auc;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn report_accuracy_matches_match_rate(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..300);
        let t: Vec<u32> = (0..n).map(|_| r.random_range(1..=6)).collect();
        let p: Vec<u32> = (0..n).map(|_| r.random_range(1..=6)).collect();
        let labels: Vec<u32> = (1..=6).collect();
        let report = classification_report(&confusion_matrix(&t, &p, &labels).unwrap());
        let direct = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / n as f64;
        prop_assert!((report.accuracy - direct).abs() < 1e-15);
        prop_assert!((accuracy(&t, &p) - direct).abs() < 1e-15);
    }

    #[test]
    fn bayes_auc_agrees_with_roc_auc(seed in any::<u64>()) {
        let (scores, labels) = tied_scores(seed);
        let roc = roc_curve(&labels, &scores).unwrap().auc;
        prop_assert!((bayes_auc(&scores, &labels).unwrap() - roc).abs() <= 1e-12);
        prop_assert!((rank_auc(&scores, &labels).unwrap() - roc).abs() <= 1e-12);
    }
}

#[test]
fn perfect_binary_classifier_report() {
    let y = [0, 1, 1, 0, 1];
    let report = classification_report(&confusion_matrix(&y, &y, &[0, 1]).unwrap());
    assert_eq!(report.accuracy, 1.0);
    for c in &report.classes {
        assert_eq!(c.f1, 1.0);
    }
}
