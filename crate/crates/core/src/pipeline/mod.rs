//! Configuration, model persistence, experiment runs and the CLI.

mod artifact;
mod cli;
mod config;
mod experiment;
mod report;

use std::io::{BufWriter, Write};
use std::path::Path;

pub use artifact::{DataFingerprint, ModelArtifact, ModelPayload, Predictions, TrainingEcho, SCHEMA_VERSION};
pub use cli::run_cli;
pub use config::{ModelKind, PipelineConfig};
pub use experiment::{
    config_splits, evaluate, fingerprint, load_records, load_table, priority_distribution, split_rows, train_model,
    vocab_path, write_distribution_csv, write_eval_outputs, EvalOutput, Metrics, Splits, TrainOutput,
};
pub use report::{preset, render_table, run_presets, Preset, PresetResult, PRESETS};

use crate::error::{Error, Result};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent)?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let tmp = builder.tempfile_in(parent)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_atomic_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(bytes)?))
}
