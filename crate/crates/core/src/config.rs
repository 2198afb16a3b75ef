//! Run configuration: one JSON document covering data, augmentation, model,
//! losses, training and evaluation. Unknown keys are rejected and every
//! error names the offending key path.
//!
//! The ablation grid ships as presets: `baseline`, `DML-2`, `DML-3`,
//! `LDS-2(1)` to `LDS-2(5)`, `LDS-3(1)` to `LDS-3(3)`, plus `LDS-3(3)-MS`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, BranchTransform};
use crate::data::ToyConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::losses::{KlMode, LossConfig};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Synthetic dataset generated in memory.
    Toy {
        #[serde(default = "default_toy_seed")]
        seed: u64,
        #[serde(default)]
        config: ToyConfig,
    },
    /// Directory in the Market-1501 layout (what `toygen` writes).
    Directory { root: PathBuf },
}

fn default_toy_seed() -> u64 {
    1
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Toy {
            seed: default_toy_seed(),
            config: ToyConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    /// Seeds model initialisation, batch sampling and augmentation.
    pub seed: u64,
    pub data: DataSource,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seed: 0,
            data: DataSource::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// (branches, random erasing, random scaling, homologous input).
pub type AblationTuple = (usize, bool, bool, bool);

impl RunConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Toy { config, .. } = &self.data {
            config.validate().map_err(|e| match e {
                Error::Config { path, message } => Error::config(
                    format!("data.toy.config.{}", path.strip_prefix("toy.").unwrap_or(&path)),
                    message,
                ),
                other => other,
            })?;
        }
        self.augment.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.loss.kl_mode == KlMode::MasterServant && self.augment.num_branches() < 2 {
            return Err(Error::config("loss.kl_mode", "master_servant needs at least 2 branches"));
        }
        Ok(())
    }

    pub fn ablation_tuple(&self) -> AblationTuple {
        let plan = &self.augment.branch_plan;
        (
            plan.len(),
            plan.contains(&BranchTransform::Erase),
            plan.contains(&BranchTransform::Scale),
            self.augment.homologous,
        )
    }
}

/// Shipped presets as (label, JSON).
pub const PRESETS: &[(&str, &str)] = &[
    ("baseline", include_str!("../presets/baseline.json")),
    ("DML-2", include_str!("../presets/dml-2.json")),
    ("LDS-2(1)", include_str!("../presets/lds-2-1.json")),
    ("LDS-2(2)", include_str!("../presets/lds-2-2.json")),
    ("LDS-2(3)", include_str!("../presets/lds-2-3.json")),
    ("LDS-2(4)", include_str!("../presets/lds-2-4.json")),
    ("LDS-2(5)", include_str!("../presets/lds-2-5.json")),
    ("DML-3", include_str!("../presets/dml-3.json")),
    ("LDS-3(1)", include_str!("../presets/lds-3-1.json")),
    ("LDS-3(2)", include_str!("../presets/lds-3-2.json")),
    ("LDS-3(3)", include_str!("../presets/lds-3-3.json")),
    ("LDS-3(3)-MS", include_str!("../presets/lds-3-3-ms.json")),
];

pub fn preset_labels() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(l, _)| *l)
}

/// Parsed preset by label (case-insensitive).
pub fn preset(label: &str) -> Result<RunConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(l, _)| l.eq_ignore_ascii_case(label))
        .ok_or_else(|| {
            Error::config(
                "preset",
                format!("unknown preset `{label}` (known: {})", preset_labels().collect::<Vec<_>>().join(", ")),
            )
        })?;
    RunConfig::from_json(text)
}
