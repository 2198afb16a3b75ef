//! End-to-end driver used by the CLI: load data, build the model, train
//! with checkpoints and periodic evaluation, write the run directory.

use std::path::{Path, PathBuf};

use crate::config::{DataSource, RunConfig};
use crate::data::{generate_toy_dataset, load_market_format, Dataset};
use crate::error::Result;
use crate::eval::{evaluate_model, MetricsReport};
use crate::model::MultiBranchModel;
use crate::train::{train_lds, EpochRecord, IterationRecord, RunDir, TrainHistory, TrainObserver, TrainSetup};

#[derive(Clone, Debug)]
pub struct LoadedData {
    pub train: Dataset,
    pub query: Dataset,
    pub gallery: Dataset,
}

impl LoadedData {
    pub fn has_eval(&self) -> bool {
        !self.query.is_empty() && !self.gallery.is_empty()
    }
}

/// Loads the configured source, or the Market-layout directory `override_dir`
/// when given.
pub fn load_data(source: &DataSource, override_dir: Option<&Path>) -> Result<LoadedData> {
    let market = |root: &Path| -> Result<(Dataset, Dataset, Dataset)> {
        let m = load_market_format(root)?;
        Ok((m.train, m.query, m.gallery))
    };
    let (train, query, gallery) = match (override_dir, source) {
        (Some(root), _) => market(root)?,
        (None, DataSource::Directory { root }) => market(root)?,
        (None, DataSource::Toy { seed, config }) => {
            let t = generate_toy_dataset(config, *seed)?;
            (t.train, t.query, t.gallery)
        }
    };
    Ok(LoadedData { train, query, gallery })
}

pub fn build_model(config: &RunConfig, num_classes: usize) -> Result<MultiBranchModel> {
    MultiBranchModel::new(&config.model, &config.augment.branch_plan, num_classes, config.seed)
}

pub struct RunOutcome {
    pub model: MultiBranchModel,
    pub history: TrainHistory,
    /// Held-out metrics after the last epoch, when query and gallery exist.
    pub metrics: Option<MetricsReport>,
}

struct RunObserver<'a> {
    config: &'a RunConfig,
    data: &'a LoadedData,
    dir: Option<RunDir>,
}

impl TrainObserver for RunObserver<'_> {
    fn on_iteration(&mut self, record: &IterationRecord) -> Result<()> {
        match &mut self.dir {
            Some(d) => d.log_iteration(record),
            None => Ok(()),
        }
    }

    fn on_epoch(&mut self, epoch: usize, model: &mut MultiBranchModel, record: &EpochRecord) -> Result<Option<MetricsReport>> {
        let every = self.config.train.eval_every;
        let due = epoch == self.config.train.epochs || (every > 0 && epoch % every == 0);
        let metrics = if due && self.data.has_eval() {
            Some(evaluate_model(
                model,
                &self.data.query,
                &self.data.gallery,
                &self.config.augment,
                &self.config.eval,
            )?)
        } else {
            None
        };
        if let Some(d) = &mut self.dir {
            let iteration = epoch * self.config.train.iterations_per_epoch(self.data.train.len());
            d.save_checkpoint(model, &self.config.augment.branch_plan, epoch, iteration)?;
            d.log_epoch(&EpochRecord {
                metrics: metrics.clone(),
                ..record.clone()
            })?;
        }
        Ok(metrics)
    }
}

/// Trains per `config`. With `out`, writes the run directory there: config
/// snapshot, history, `ep0` (initial weights) and one checkpoint per epoch,
/// and `metrics.json` after the last epoch.
pub fn run_training(config: &RunConfig, data: &LoadedData, out: Option<&Path>) -> Result<RunOutcome> {
    config.validate()?;
    let mut model = build_model(config, data.train.num_identities())?;
    let dir = match out {
        Some(root) => {
            let d = RunDir::create(root, serde_json::to_value(config)?)?;
            d.save_checkpoint(&mut model, &config.augment.branch_plan, 0, 0)?;
            Some(d)
        }
        None => None,
    };
    let setup = TrainSetup {
        train: &config.train,
        augment: &config.augment,
        loss: &config.loss,
        seed: config.seed,
    };
    let mut observer = RunObserver { config, data, dir };
    let history = train_lds(&mut model, &data.train, &setup, &mut observer)?;
    let metrics = history.epochs.last().and_then(|e| e.metrics.clone());
    if let (Some(d), Some(m)) = (&observer.dir, &metrics) {
        d.write_metrics(m)?;
    }
    Ok(RunOutcome { model, history, metrics })
}

/// Default output directory for a run: `<root>/<name>-seed<seed>`.
pub fn default_run_dir(root: &Path, config: &RunConfig) -> PathBuf {
    let safe: String = config
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    root.join(format!("{safe}-seed{}", config.seed))
}
