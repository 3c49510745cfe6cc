//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// P(score of a positive > score of a negative), ties counted as one half.
pub fn pairwise_auc(scores: &[f64], labels: &[u32]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn gini(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

pub fn entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    -counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|c| (c / total) * (c / total).log2())
        .sum::<f64>()
}

fn counts(rows: &[usize], y: &[u32], k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k];
    for &i in rows {
        c[y[i] as usize] += 1.0;
    }
    c
}

fn majority(rows: &[usize], y: &[u32], k: usize) -> u32 {
    let c = counts(rows, y, k);
    let mut best = 0;
    for (i, v) in c.iter().enumerate() {
        if *v > c[best] {
            best = i;
        }
    }
    best as u32
}

/// Every midpoint between consecutive distinct values of one column.
pub fn midpoints(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
}

/// Exhaustive split search over one node by direct counting. Returns the
/// feature, threshold and weighted child impurity of the first strictly best
/// candidate (features ascending, thresholds ascending), or `None` when no
/// candidate improves on the parent.
pub fn oracle_split(
    x: &[Vec<f64>],
    y: &[u32],
    rows: &[usize],
    k: usize,
    gini_criterion: bool,
) -> Option<(usize, f64, f64)> {
    let imp = |c: &[f64]| if gini_criterion { gini(c) } else { entropy(c) };
    let parent = imp(&counts(rows, y, k));
    let n = rows.len() as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    let d = x[0].len();
    #[allow(clippy::needless_range_loop)]
    for f in 0..d {
        let col: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
        for t in midpoints(&col) {
            let left: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] <= t).collect();
            let right: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] > t).collect();
            let child =
                (left.len() as f64 * imp(&counts(&left, y, k)) + right.len() as f64 * imp(&counts(&right, y, k))) / n;
            let bar = best.map_or(parent, |b| b.2);
            if child < bar - 1e-12 {
                best = Some((f, t, child));
            }
        }
    }
    best
}

/// Training predictions of the impurity-greedy tree built by enumerating
/// every candidate split at every node.
pub fn oracle_tree_predictions(x: &[Vec<f64>], y: &[u32], max_depth: usize, gini_criterion: bool) -> Vec<u32> {
    let k = *y.iter().max().unwrap() as usize + 1;
    let mut pred = vec![0; y.len()];
    #[allow(clippy::too_many_arguments)]
    fn grow(
        x: &[Vec<f64>],
        y: &[u32],
        rows: Vec<usize>,
        depth: usize,
        max_depth: usize,
        k: usize,
        g: bool,
        pred: &mut [u32],
    ) {
        let c = counts(&rows, y, k);
        let pure = c.iter().filter(|v| **v > 0.0).count() <= 1;
        let split = if depth < max_depth && rows.len() >= 2 && !pure {
            oracle_split(x, y, &rows, k, g)
        } else {
            None
        };
        match split {
            None => {
                let m = majority(&rows, y, k);
                for i in rows {
                    pred[i] = m;
                }
            }
            Some((f, t, _)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= t);
                grow(x, y, l, depth + 1, max_depth, k, g, pred);
                grow(x, y, r, depth + 1, max_depth, k, g, pred);
            }
        }
    }
    grow(x, y, (0..y.len()).collect(), 0, max_depth, k, gini_criterion, &mut pred);
    pred
}

/// Highest training accuracy of any tree of depth at most `max_depth`
/// (at most 2) over midpoint thresholds, found by full enumeration.
pub fn best_possible_accuracy(x: &[Vec<f64>], y: &[u32], max_depth: usize) -> f64 {
    let k = *y.iter().max().unwrap() as usize + 1;
    let n = y.len();
    fn correct_leaf(rows: &[usize], y: &[u32], k: usize) -> usize {
        counts(rows, y, k).iter().fold(0.0f64, |a, &b| a.max(b)) as usize
    }
    fn best(x: &[Vec<f64>], y: &[u32], rows: &[usize], depth: usize, k: usize) -> usize {
        let mut top = correct_leaf(rows, y, k);
        if depth == 0 {
            return top;
        }
        for f in 0..x[0].len() {
            let col: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
            for t in midpoints(&col) {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= t);
                top = top.max(best(x, y, &l, depth - 1, k) + best(x, y, &r, depth - 1, k));
            }
        }
        top
    }
    let rows: Vec<usize> = (0..n).collect();
    best(x, y, &rows, max_depth, k) as f64 / n as f64
}

pub fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

/// Small dataset with many repeated values, so ties are common.
pub fn fuzz_tree_dataset<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, Vec<u32>) {
    let n = rng.random_range(2..=12);
    let k = rng.random_range(2..=3u32);
    let levels = rng.random_range(2..=6);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..2).map(|_| f64::from(rng.random_range(0..levels)) * 0.5).collect())
        .collect();
    let y: Vec<u32> = (0..n).map(|_| rng.random_range(0..k)).collect();
    (x, y)
}

/// Largest relative error between `analytic` and central differences of `f`.
pub fn max_relative_fd_error(params: &[f64], analytic: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Two well-separated Gaussian blobs in `d` dimensions.
pub fn blobs(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<u32>) {
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
    let x = Array2::from_shape_fn((n, d), |(i, _)| {
        noise.sample(&mut r) + if y[i] == 1 { 6.0 } else { 0.0 }
    });
    (x, y)
}

/// Valid call records inside the San Jose box, timestamps at whole seconds.
pub fn random_records<R: Rng>(rng: &mut R, n: usize) -> Vec<crimecast::ingest::RawCallRecord> {
    use chrono::NaiveDate;
    const TYPES: [&str; 5] = ["415", "1033A", "SUSCIR", "242", "10851"];
    const STREETS: [&str; 4] = ["N 1ST ST", "ALMADEN BL, UNIT \"B\"", "TULLY RD", "STORY RD\tE"];
    (0..n)
        .map(|i| {
            let day = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Days::new(rng.random_range(0..1095));
            let ts = day
                .and_hms_opt(
                    rng.random_range(0..24),
                    rng.random_range(0..60),
                    rng.random_range(0..60),
                )
                .unwrap();
            let located = rng.random_bool(0.8);
            RawCallRecord {
                call_id: format!("P{:06}", i),
                call_number: format!("{}", rng.random_range(1000..99999)),
                offense_timestamp: ts,
                report_date: day,
                priority: rng.random_range(1..=6),
                call_type: TYPES[rng.random_range(0..TYPES.len())].to_string(),
                call_type_desc: "DESC, WITH COMMA".to_string(),
                address: format!(
                    "{} {}",
                    rng.random_range(1..9999),
                    STREETS[rng.random_range(0..STREETS.len())]
                ),
                latitude: located.then(|| rng.random_range(37.10..37.50)),
                longitude: located.then(|| rng.random_range(-122.05..-121.60)),
            }
        })
        .collect()
}

use crimecast::ingest::RawCallRecord;

/// Exhaustive grid search by nested loops: every grid point is scored on the
/// same folds with the same per-point seed, first strict maximum wins.
/// Returns (grid index, mean score).
pub fn exhaustive_search(
    x: ndarray::ArrayView2<'_, f64>,
    y: &[u32],
    search: &crimecast::tuning::SearchConfig,
    base: &crimecast::trees::ForestConfig,
) -> (usize, f64) {
    use crimecast::tuning::{cross_validate, kfold_indices};
    let folds = kfold_indices(x.nrows(), search.folds, search.seed).unwrap();
    let s = &search.space;
    let mut index = 0;
    let mut best: Option<(usize, f64)> = None;
    for &est in &s.n_estimators {
        for &crit in &s.criterion {
            for &depth in &s.max_depth {
                for &split in &s.min_samples_split {
                    for &leaf in &s.min_samples_leaf {
                        let mut cfg = base.clone();
                        cfg.n_estimators = est;
                        cfg.tree.criterion = crit;
                        cfg.tree.max_depth = Some(depth);
                        cfg.tree.min_samples_split = split;
                        cfg.tree.min_samples_leaf = leaf;
                        cfg.seed = crimecast::seed::derive_seed(search.seed, index as u64);
                        let scores = cross_validate(x, y, &folds, &cfg, search.scoring).unwrap();
                        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                        if best.is_none_or(|b| mean > b.1) {
                            best = Some((index, mean));
                        }
                        index += 1;
                    }
                }
            }
        }
    }
    best.unwrap()
}

/// Noisy two-feature problem for search tests.
pub fn search_dataset(n: usize, seed: u64) -> (Array2<f64>, Vec<u32>) {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, 3), |_| r.random_range(0.0..1.0));
    let y = x
        .rows()
        .into_iter()
        .map(|row| u32::from(row[0] + 0.5 * row[1] + r.random_range(-0.3..0.3) > 0.75))
        .collect();
    (x, y)
}

/// Runs the `crimecast` binary; returns (exit code, stderr).
pub fn crimecast(args: &[&str], threads: Option<usize>) -> (i32, String) {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_crimecast"));
    cmd.args(args).env("RUST_LOG", "warn");
    if let Some(t) = threads {
        cmd.env("CRIMECAST_THREADS", t.to_string());
    }
    let out = cmd.output().expect("spawn crimecast");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// synth -> featurize -> train rf -> eval inside `dir`; returns metrics.json.
pub fn run_cli_pipeline(dir: &std::path::Path, rows: usize, threads: usize) -> Vec<u8> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let (data, table, model_dir, model, eval) = (
        p("data.csv"),
        p("table.csv"),
        p("model"),
        p("model/model.json"),
        p("eval"),
    );
    let rows = rows.to_string();
    let steps: [Vec<&str>; 4] = [
        vec!["synth", "--rows", &rows, "--seed", "42", "--out", &data],
        vec!["featurize", "--data", &data, "--features", "exact", "--out", &table],
        vec![
            "train", "--data", &table, "--model", "rf", "--seed", "42", "--out", &model_dir,
        ],
        vec!["eval", "--model", &model, "--data", &table, "--out", &eval],
    ];
    for step in &steps {
        let (code, err) = crimecast(step, Some(threads));
        assert_eq!(code, 0, "{step:?} failed: {err}");
    }
    std::fs::read(dir.join("eval/metrics.json")).expect("metrics.json")
}

/// Scores from a handful of levels, so ties are heavy.
pub fn tied_scores(seed: u64) -> (Vec<f64>, Vec<u32>) {
    let mut r = rng(seed);
    let n = r.random_range(2..=200);
    let levels = r.random_range(1..=8);
    let mut labels: Vec<u32> = (0..n).map(|_| r.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = (0..n).map(|_| f64::from(r.random_range(0..levels)) / 4.0).collect();
    (scores, labels)
}

/// Training accuracy of the fitted tree, the greedy enumeration oracle and
/// the best tree of any shape, on one fuzzed dataset.
pub fn tree_case(seed: u64, depth: usize, use_gini: bool) -> (f64, f64, f64) {
    use crimecast::trees::{fit_decision_tree, Criterion, TreeConfig};
    let (x, y) = fuzz_tree_dataset(&mut rng(seed));
    let cfg = TreeConfig {
        criterion: if use_gini { Criterion::Gini } else { Criterion::Entropy },
        max_depth: Some(depth),
        ..TreeConfig::default()
    };
    let acc = |p: &[u32]| p.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
    let tree = fit_decision_tree(to_array(&x).view(), &y, None, &cfg).unwrap();
    (
        acc(&tree.predict(to_array(&x).view()).unwrap()),
        acc(&oracle_tree_predictions(&x, &y, depth, use_gini)),
        best_possible_accuracy(&x, &y, depth),
    )
}

/// Max relative error of the logistic gradient on one random configuration.
pub fn logistic_gradient_error(seed: u64) -> f64 {
    use crimecast::classic::logistic_loss_grad;
    use rand_distr::{Distribution, Normal};
    let mut r = rng(seed);
    let g = Normal::new(0.0, 1.0).unwrap();
    let n = r.random_range(2..12);
    let d = r.random_range(1..5);
    let x = Array2::from_shape_fn((n, d), |_| g.sample(&mut r));
    let y: Vec<u32> = (0..n).map(|_| r.random_range(0..2)).collect();
    let s: Vec<f64> = (0..n).map(|_| r.random_range(0.2..3.0)).collect();
    let params: Vec<f64> = (0..=d).map(|_| r.random_range(-2.0..2.0)).collect();
    let (_, gw, gb) = logistic_loss_grad(&params[..d], params[d], x.view(), &y, &s);
    let analytic: Vec<f64> = gw.into_iter().chain([gb]).collect();
    max_relative_fd_error(&params, &analytic, 1e-5, |p| {
        logistic_loss_grad(&p[..d], p[d], x.view(), &y, &s).0
    })
}

/// Max relative error of the MLP gradient on one random configuration;
/// `dead` pins the first hidden unit below zero for every input.
pub fn mlp_gradient_error(seed: u64, dead: bool) -> f64 {
    use crimecast::featurize::ClassWeights;
    use crimecast::neural::{init_mlp, mlp_loss_grad};
    let mut r = rng(seed);
    let d = r.random_range(1..5);
    let depth = r.random_range(1..3);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(1..6)).collect();
    let k = r.random_range(2..5u32);
    let classes: Vec<u32> = (0..k).collect();
    let n = r.random_range(2..10);
    let x = Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0));
    let y: Vec<u32> = (0..n).map(|_| r.random_range(0..k)).collect();
    let mut model = init_mlp(d, &hidden, &classes, seed).unwrap();
    // Random biases keep pre-activations off the ReLU kink at exactly 0,
    // which zero biases hit whenever a whole layer is inactive.
    for layer in &mut model.layers {
        layer.biases.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    if dead {
        model.layers[0].biases[0] = -100.0;
    }
    let weights: Vec<f64> = (0..k).map(|_| r.random_range(0.5..2.0)).collect();
    let cw = ClassWeights::from_map((0..k).zip(weights).collect());
    let (_, grad) = mlp_loss_grad(&model, x.view(), &y, Some(&cw)).unwrap();
    let params = model.to_flat();
    let mut probe = model.clone();
    max_relative_fd_error(&params, &grad, 1e-6, |p| {
        probe.load_flat(p).unwrap();
        mlp_loss_grad(&probe, x.view(), &y, Some(&cw)).unwrap().0
    })
}
