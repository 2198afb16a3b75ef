//! Run directory layout:
//!
//! ```text
//! <run>/config.json        run configuration snapshot
//! <run>/history.jsonl      one JSON record per iteration and per epoch
//! <run>/ep<N>/model.ckpt   checkpoint after epoch N (ep0: initial weights)
//! <run>/metrics.json       final held-out metrics
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{EpochRecord, IterationRecord};
use crate::augment::BranchTransform;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::model::{checkpoint, MultiBranchModel};

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum HistoryLine<'a> {
    Iteration(&'a IterationRecord),
    Epoch(&'a EpochRecord),
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    config: serde_json::Value,
    history: BufWriter<File>,
}

impl RunDir {
    /// Creates `root`, writes the config snapshot and truncates the history.
    pub fn create(root: &Path, config: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let cfg_path = root.join(CONFIG_FILE);
        fs::write(&cfg_path, serde_json::to_string_pretty(&config)? + "\n").map_err(|e| Error::io(&cfg_path, e))?;
        let hist_path = root.join(HISTORY_FILE);
        let history = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&hist_path)
            .map_err(|e| Error::io(&hist_path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            config,
            history: BufWriter::new(history),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn epoch_dir(&self, epoch: usize) -> PathBuf {
        self.root.join(format!("ep{epoch}"))
    }

    pub fn save_checkpoint(&self, model: &mut MultiBranchModel, plan: &[BranchTransform], epoch: usize, iteration: usize) -> Result<PathBuf> {
        let path = self.epoch_dir(epoch).join(CHECKPOINT_FILE);
        checkpoint::save_checkpoint(&path, model, plan, epoch, iteration, self.config.clone())?;
        Ok(path)
    }

    fn line(&mut self, line: &HistoryLine<'_>) -> Result<()> {
        let path = self.root.join(HISTORY_FILE);
        serde_json::to_writer(&mut self.history, line)?;
        self.history.write_all(b"\n").map_err(|e| Error::io(&path, e))
    }

    pub fn log_iteration(&mut self, record: &IterationRecord) -> Result<()> {
        self.line(&HistoryLine::Iteration(record))
    }

    pub fn log_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        self.line(&HistoryLine::Epoch(record))?;
        let path = self.root.join(HISTORY_FILE);
        self.history.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn write_metrics(&self, report: &MetricsReport) -> Result<PathBuf> {
        let path = self.root.join(METRICS_FILE);
        fs::write(&path, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Accepts a checkpoint file, an `ep<N>` directory, or a run directory (the
/// highest epoch wins).
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let direct = path.join(CHECKPOINT_FILE);
    if direct.is_file() {
        return Ok(direct);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let latest = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: usize = name.strip_prefix("ep")?.parse().ok()?;
            e.path().join(CHECKPOINT_FILE).is_file().then_some(n)
        })
        .max();
    match latest {
        Some(n) => Ok(path.join(format!("ep{n}")).join(CHECKPOINT_FILE)),
        None => Err(Error::config(
            path.display().to_string(),
            "no checkpoint file, epoch directory or run directory here",
        )),
    }
}
