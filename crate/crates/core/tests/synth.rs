mod common;

use common::pairwise_auc;
use crimecast::ingest::{clean_files, write_records_csv, BoundingBox, ColumnMap, PassthroughGeocoder};
use crimecast::synth::{bayes_auc, generate_synthetic, SynthConfig};

fn big() -> SynthConfig {
    SynthConfig {
        rows: 100_000,
        seed: 3,
        ..SynthConfig::default()
    }
}

#[test]
fn empirical_frequencies_track_the_mixture() {
    let cfg = big();
    let (records, truth) = generate_synthetic(&cfg).unwrap();
    let n = records.len() as f64;
    for (c, h) in cfg.hotspots.iter().enumerate() {
        let share = truth.cluster.iter().filter(|&&k| k == c).count() as f64 / n;
        assert!((share - h.weight).abs() <= 0.02, "cluster {c}: {share} vs {}", h.weight);
    }
    for ct in &cfg.call_types {
        let share = records.iter().filter(|r| r.call_type == ct.code).count() as f64 / n;
        assert!(
            (share - ct.frequency).abs() <= 0.02,
            "type {}: {share} vs {}",
            ct.code,
            ct.frequency
        );
    }
}

#[test]
fn zero_boost_gives_the_base_rate() {
    let cfg = SynthConfig { boost: 0.0, ..big() };
    let (_, truth) = generate_synthetic(&cfg).unwrap();
    let rate = truth.dangerous.iter().filter(|&&d| d).count() as f64 / truth.dangerous.len() as f64;
    assert!((rate - cfg.base_rate).abs() <= 0.02, "rate {rate}");
    assert!(truth.p.iter().all(|&p| p == cfg.base_rate));
}

#[test]
fn probabilities_and_priorities_are_consistent() {
    let (records, truth) = generate_synthetic(&SynthConfig {
        rows: 20_000,
        ..SynthConfig::default()
    })
    .unwrap();
    for (r, (&p, &d)) in records.iter().zip(truth.p.iter().zip(&truth.dangerous)) {
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(d, r.priority <= 2, "{r:?}");
    }
}

#[test]
fn generated_records_pass_ingest_untouched() {
    let (records, _) = generate_synthetic(&SynthConfig {
        rows: 20_000,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.csv");
    write_records_csv(&records, std::fs::File::create(&path).unwrap()).unwrap();
    let (cleaned, stats) = clean_files(
        &[&path],
        &ColumnMap::canonical(),
        &PassthroughGeocoder,
        &BoundingBox::SAN_JOSE,
    )
    .unwrap();
    assert_eq!(stats.total_dropped(), 0, "{stats:?}");
    assert_eq!(cleaned, records);
}

#[test]
fn generation_is_deterministic_across_thread_counts() {
    let cfg = SynthConfig {
        rows: 5_000,
        ..SynthConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let (records, truth) = pool.install(|| generate_synthetic(&cfg).unwrap());
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf).unwrap();
        truth.write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(run(1), run(8));
    let other = generate_synthetic(&SynthConfig {
        seed: 43,
        ..cfg.clone()
    })
    .unwrap();
    assert_ne!(other.0, generate_synthetic(&cfg).unwrap().0);
}

#[test]
fn degenerate_cluster_sits_on_its_centre() {
    let mut cfg = SynthConfig {
        rows: 500,
        ..SynthConfig::default()
    };
    cfg.hotspots.truncate(1);
    cfg.hotspots[0].std_deg = 0.0;
    cfg.hotspots[0].weight = 1.0;
    let (records, _) = generate_synthetic(&cfg).unwrap();
    let h = &cfg.hotspots[0];
    assert!(records.iter().all(|r| r.coordinates() == Some((h.lat, h.lon))));
}

#[test]
fn bayes_auc_is_reproducible_and_matches_pairwise() {
    let (_, truth) = generate_synthetic(&SynthConfig {
        rows: 3_000,
        ..SynthConfig::default()
    })
    .unwrap();
    let labels = truth.labels();
    let a = bayes_auc(&truth.p, &labels).unwrap();
    assert_eq!(a, bayes_auc(&truth.p, &labels).unwrap());
    assert!((a - pairwise_auc(&truth.p, &labels)).abs() <= 1e-12);
    assert_eq!(bayes_auc(&vec![0.3; labels.len()], &labels).unwrap(), 0.5);
    let exact: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    assert_eq!(bayes_auc(&exact, &labels).unwrap(), 1.0);
    assert!(bayes_auc(&truth.p, &vec![1; labels.len()]).is_err());
}
