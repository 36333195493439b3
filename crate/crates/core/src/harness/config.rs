//! Run configuration: a TOML document plus `key.path=value` overrides.
//!
//! ```toml
//! seed = 0
//! batch_size = 64
//! total_epochs = 60
//! output_dir = "runs/desk"
//!
//! [model]            # any ModelConfig field
//! dim = 64
//!
//! [loss]
//! kind = "ce_brier"  # ce | brier | ce_brier | focal | label_smooth
//!
//! [optimizer]
//! lr_stages = [[30, 0.05], [20, 0.005], [10, 0.0005]]
//!
//! [data]
//! source = "mnist"   # mnist | synthetic
//!
//! [eval]
//! fit = "ece"        # ece | nll
//! ```
//!
//! Missing keys take their defaults, unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::{DEFAULT_BINS, DEFAULT_HCFP_THRESHOLD, DEFAULT_SMECE_BANDWIDTH};
use crate::posthoc::FitCriterion;
use crate::vit::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// `(epochs, learning rate)` in order.
    pub lr_stages: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr_stages: vec![(30, 0.05), (20, 0.005), (10, 0.0005)],
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate for a zero-based epoch; the last stage extends forever.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for &(epochs, lr) in &self.lr_stages {
            end += epochs;
            if epoch < end {
                return lr;
            }
        }
        self.lr_stages.last().map_or(0.0, |s| s.1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Mnist,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Training pool drawn from the IDX files (validation is carved out of it).
    pub train_size: usize,
    pub test_size: usize,
    pub val_fraction: f64,
    pub normalize: bool,
    pub synth_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Mnist,
            images: PathBuf::from("data/mnist/mnist5k-images-idx3-ubyte"),
            labels: PathBuf::from("data/mnist/mnist5k-labels-idx1-ubyte"),
            train_size: 2000,
            test_size: 1000,
            val_fraction: 0.05,
            normalize: true,
            synth_per_class: 200,
            synth_test_per_class: 100,
            synth_separation: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bins: usize,
    pub hcfp_threshold: f64,
    pub smece_bandwidth: f64,
    pub fit: FitCriterion,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            hcfp_threshold: DEFAULT_HCFP_THRESHOLD,
            smece_bandwidth: DEFAULT_SMECE_BANDWIDTH,
            fit: FitCriterion::Ece,
            batch_size: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub total_epochs: usize,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 64,
            total_epochs: 60,
            output_dir: PathBuf::from("runs/desk"),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        if o.lr_stages.is_empty() {
            return bad("optimizer.lr_stages is empty".into());
        }
        let total: usize = o.lr_stages.iter().map(|s| s.0).sum();
        if total != self.total_epochs {
            return bad(format!(
                "lr stages cover {total} epochs but total_epochs is {}",
                self.total_epochs
            ));
        }
        if let Some(s) = o.lr_stages.iter().find(|s| !(s.1 >= 0.0) || !s.1.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", s.1));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return bad(format!("momentum {} outside [0, 1)", o.momentum));
        }
        if !(o.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if self.batch_size == 0 || self.eval.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.eval.bins == 0 || !(self.eval.smece_bandwidth > 0.0) {
            return bad("eval.bins and eval.smece_bandwidth must be positive".into());
        }
        let d = &self.data;
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return bad(format!("data.val_fraction {} outside (0, 1)", d.val_fraction));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    /// Reads an optional file, applies `key.path=value` overrides and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => parse_table(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let (last, path) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{p}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
