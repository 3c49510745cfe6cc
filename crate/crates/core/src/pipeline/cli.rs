//! The `crimecast` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use super::artifact::{ModelArtifact, Predictions};
use super::config::{ModelKind, PipelineConfig};
use super::experiment::{
    config_splits, evaluate, load_records, load_table, priority_distribution, train_model, vocab_path,
    write_distribution_csv, write_eval_outputs,
};
use super::report::{preset, render_table, run_presets, PRESETS};
use super::{write_atomic, write_atomic_bytes};
use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, Task};
use crate::ingest::{
    clean_files, write_records_csv, write_records_jsonl, BoundingBox, ColumnMap, Geocoder, MockGeocoder,
    PassthroughGeocoder, RawCallRecord,
};
use crate::neural::write_history_csv;
use crate::synth::{bayes_auc, generate_synthetic};
use crate::tuning::{random_search, Scoring};

pub const THREADS_ENV: &str = "CRIMECAST_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "crimecast",
    version,
    about = "Calls-for-service priority and danger prediction"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (overrides CRIMECAST_THREADS).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Settings that every experiment command can override.
#[derive(Debug, Args, Default)]
struct Overrides {
    /// Sets the split seed and every component seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long = "features", value_name = "SET")]
    feature_set: Option<FeatureSet>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(s) = self.seed {
            set_seed(cfg, s);
        }
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(f) = self.feature_set {
            cfg.feature_set = f;
        }
        if let Some(f) = self.test_fraction {
            cfg.test_fraction = f;
        }
    }
}

fn set_seed(cfg: &mut PipelineConfig, seed: u64) {
    cfg.seed = seed;
    cfg.forest.seed = seed;
    cfg.mlp.seed = seed;
    cfg.search.seed = seed;
    cfg.synth.seed = seed;
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GeocoderKind {
    /// Keep only records that already carry coordinates.
    None,
    /// Deterministic hash of the address text.
    Mock,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean raw calls-for-service exports into one dataset.
    Ingest {
        #[arg(required = true, value_name = "CSV")]
        inputs: Vec<PathBuf>,
        /// Output dataset (.csv or .jsonl).
        #[arg(long)]
        out: PathBuf,
        /// Read inputs with crimecast's own column names instead of `[columns]`.
        #[arg(long)]
        canonical: bool,
        #[arg(long, value_enum, default_value = "none")]
        geocoder: GeocoderKind,
        /// Also write the row accounting as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Histogram of calls per priority level.
    Distribution {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a feature table from a cleaned dataset.
    Featurize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "features", value_name = "SET")]
        feature_set: Option<FeatureSet>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its artifact.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (default: `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized forest hyperparameter search on the training split.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n_iter: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        scoring: Option<Scoring>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model artifact and write metrics, confusion matrix and ROC.
    Eval {
        /// Model artifact JSON.
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Expected feature set; must match the artifact.
        #[arg(long = "features", value_name = "SET")]
        feature_set: Option<FeatureSet>,
        /// Score every row instead of the held-out split.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-row predictions.
    Predict {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic calls with known danger probabilities.
    Synth {
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset path (.csv or .jsonl).
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth file (default: truth.csv beside the dataset).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run experiment presets and render a comparison table.
    Report {
        /// Cleaned dataset; synthetic data is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Preset name, repeatable (default: all).
        #[arg(long = "preset")]
        presets: Vec<String>,
        /// Synthetic row count when `--data` is omitted.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code: 0 on success, 1 on runtime failure, 2 on usage errors.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            1
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count"))),
        _ => Ok(None),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    log::debug!("{} worker threads", pool.current_num_threads());
    pool.install(|| dispatch(cli.command, cfg))
}

fn announce(command: &str, cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    log::info!("{command}: seed={} config_hash={}", cfg.seed, cfg.hash());
    Ok(())
}

fn write_records(path: &Path, records: &[RawCallRecord]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        write_atomic(path, |w| write_records_jsonl(records, w))
    } else {
        write_atomic(path, |w| write_records_csv(records, w))
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    write_atomic_bytes(path, &json)
}

fn dispatch(command: Command, mut cfg: PipelineConfig) -> Result<()> {
    match command {
        Command::Ingest {
            inputs,
            out,
            canonical,
            geocoder,
            stats,
        } => {
            announce("ingest", &cfg)?;
            let columns = if canonical {
                ColumnMap::canonical()
            } else {
                cfg.columns.clone()
            };
            let bounds = BoundingBox::SAN_JOSE;
            let geo: Box<dyn Geocoder> = match geocoder {
                GeocoderKind::None => Box::new(PassthroughGeocoder),
                GeocoderKind::Mock => Box::new(MockGeocoder { bounds }),
            };
            let (records, st) = clean_files(&inputs, &columns, geo.as_ref(), &bounds)?;
            log::info!(
                "read {} rows, kept {} (duplicate {}, null {}, bad priority {}, malformed {}, out of bounds {})",
                st.rows_read,
                st.rows_kept,
                st.dropped_duplicate,
                st.dropped_null,
                st.dropped_bad_priority,
                st.dropped_malformed,
                st.dropped_out_of_bounds
            );
            write_records(&out, &records)?;
            if let Some(p) = stats {
                write_json(&p, &st)?;
            }
        }
        Command::Distribution { data, out } => {
            announce("distribution", &cfg)?;
            let records = load_records(&data)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("distribution.csv"));
            let rows = priority_distribution(&records);
            write_atomic(&out, |w| write_distribution_csv(&rows, w))?;
        }
        Command::Featurize { data, feature_set, out } => {
            if let Some(f) = feature_set {
                cfg.feature_set = f;
            }
            announce("featurize", &cfg)?;
            let (table, vocab) = load_table(&data, cfg.feature_set, None)?;
            write_atomic(&out, |w| table.write_csv(w))?;
            write_json(&vocab_path(&out), &vocab)?;
            log::info!(
                "{} rows x {} features -> {}",
                table.n_rows(),
                table.n_features(),
                out.display()
            );
        }
        Command::Train {
            data,
            model,
            overrides,
            out,
        } => {
            overrides.apply(&mut cfg);
            if let Some(m) = model {
                cfg.model = m;
            }
            announce("train", &cfg)?;
            let (table, vocab) = load_table(&data, cfg.feature_set, None)?;
            let trained = train_model(&table, &vocab, &cfg)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            trained.artifact.save(&dir.join("model.json"))?;
            if let Some(h) = &trained.history {
                write_atomic(&dir.join("history.csv"), |w| write_history_csv(h, w))?;
            }
            log::info!(
                "trained {} on {} rows -> {}",
                cfg.model,
                trained.artifact.training.train_rows,
                dir.join("model.json").display()
            );
        }
        Command::Tune {
            data,
            n_iter,
            folds,
            scoring,
            overrides,
            out,
        } => {
            overrides.apply(&mut cfg);
            if let Some(n) = n_iter {
                cfg.search.n_iter = n;
            }
            if let Some(k) = folds {
                cfg.search.folds = k;
            }
            if let Some(s) = scoring {
                cfg.search.scoring = s;
            }
            cfg.model = ModelKind::Rf;
            if cfg.task == Task::Regression {
                return Err(Error::Config(
                    "tune searches classification forests; use task binary or multiclass".into(),
                ));
            }
            announce("tune", &cfg)?;
            let (table, _) = load_table(&data, cfg.feature_set, None)?;
            let splits = config_splits(&table, &cfg)?;
            let train = table.select_rows(&splits.train);
            let result = random_search(train.x(), train.labels(cfg.task), &cfg.search, &cfg.forest)?;
            log::info!(
                "best {:?} with {} {:.4}",
                result.best_params,
                result.scoring,
                result.best_score
            );
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            write_json(&dir.join("search.json"), &result)?;
        }
        Command::Eval {
            model,
            data,
            feature_set,
            all,
            out,
        } => {
            let artifact = ModelArtifact::load(&model)?;
            announce("eval", &artifact.training.config)?;
            if let Some(f) = feature_set.filter(|f| *f != artifact.feature_set) {
                return Err(Error::InvalidInput(format!(
                    "model was trained on feature set `{}` but `{f}` was requested",
                    artifact.feature_set
                )));
            }
            let (table, _) = load_table(&data, artifact.feature_set, Some(&artifact.vocabulary))?;
            let result = evaluate(&artifact, &table, all)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            write_eval_outputs(&dir, &result)?;
            if let Some(a) = result.metrics.accuracy {
                log::info!("accuracy {a:.4} on {} rows", result.metrics.rows);
            }
        }
        Command::Predict { model, data, out } => {
            let artifact = ModelArtifact::load(&model)?;
            announce("predict", &artifact.training.config)?;
            let (table, _) = load_table(&data, artifact.feature_set, Some(&artifact.vocabulary))?;
            let pred = artifact.predict(table.x())?;
            write_atomic(&out, |w| write_predictions(&pred, w))?;
        }
        Command::Synth { rows, seed, out, truth } => {
            if let Some(s) = seed {
                set_seed(&mut cfg, s);
            }
            if let Some(n) = rows {
                cfg.synth.rows = n;
            }
            announce("synth", &cfg)?;
            let (records, t) = generate_synthetic(&cfg.synth)?;
            write_records(&out, &records)?;
            let truth = truth.unwrap_or_else(|| out.with_file_name("truth.csv"));
            write_atomic(&truth, |w| t.write_csv(w))?;
            log::info!("{} rows -> {}", records.len(), out.display());
        }
        Command::Report {
            data,
            presets,
            rows,
            seed,
            out,
        } => {
            if let Some(s) = seed {
                set_seed(&mut cfg, s);
            }
            if let Some(n) = rows {
                cfg.synth.rows = n;
            }
            announce("report", &cfg)?;
            let chosen = if presets.is_empty() {
                PRESETS.to_vec()
            } else {
                presets.iter().map(|n| preset(n)).collect::<Result<Vec<_>>>()?
            };
            let (records, note) = match data {
                Some(p) => (
                    load_records(&p)?,
                    format!(
                        "Data: {}. Results on real calls-for-service data depend on the dataset snapshot \
                         and the geocoder used, so they are environment-dependent.",
                        p.display()
                    ),
                ),
                None => {
                    let (records, t) = generate_synthetic(&cfg.synth)?;
                    let ceiling = bayes_auc(&t.p, &t.labels())?;
                    let note = format!(
                        "Synthetic data: {} rows, seed {}. Bayes-optimal AUC on all rows: {ceiling:.3}.",
                        cfg.synth.rows, cfg.synth.seed
                    );
                    (records, note)
                }
            };
            let results = run_presets(&records, &cfg, &chosen)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            write_atomic_bytes(&dir.join("report.md"), render_table(&results, &note).as_bytes())?;
            write_json(&dir.join("report.json"), &results)?;
        }
    }
    Ok(())
}

fn write_predictions(pred: &Predictions, out: &mut dyn std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match pred {
        Predictions::Values(v) => {
            w.write_record(["row", "value"])?;
            for (i, x) in v.iter().enumerate() {
                w.write_record([i.to_string(), x.to_string()])?;
            }
        }
        Predictions::Classes { classes, labels, proba } => {
            let mut header = vec!["row".to_string(), "prediction".to_string()];
            header.extend(classes.iter().map(|c| format!("p_{c}")));
            w.write_record(&header)?;
            for (i, (label, row)) in labels.iter().zip(proba.rows()).enumerate() {
                let mut rec = vec![i.to_string(), label.to_string()];
                rec.extend(row.iter().map(|p| p.to_string()));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
