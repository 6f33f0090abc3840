use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use gcalab::backbone::ModelConfig;
use gcalab::data::{generate_synthetic, load_log, split_leave_one_out, SplitDataset, SynthSpec, DEFAULT_MIN_LEN};
use gcalab::gca::GcaConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RunError};

fn default_min_len() -> usize {
    DEFAULT_MIN_LEN
}

/// Where interactions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SynthSpec),
    Tsv {
        path: PathBuf,
        #[serde(default = "default_min_len")]
        min_len: usize,
        /// Seeds the fixed evaluation candidate lists.
        #[serde(default)]
        seed: u64,
    },
}

impl DataSource {
    pub fn eval_seed(&self) -> u64 {
        match self {
            DataSource::Synthetic(s) => s.seed,
            DataSource::Tsv { seed, .. } => *seed,
        }
    }

    pub fn load(&self) -> Result<SplitDataset> {
        Ok(match self {
            DataSource::Synthetic(spec) => split_leave_one_out(&generate_synthetic(spec)?, DEFAULT_MIN_LEN)?,
            DataSource::Tsv { path, min_len, .. } => split_leave_one_out(&load_log(path)?.0, *min_len)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub negatives_per_pos: usize,
    pub eval_negatives: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            patience: 10,
            batch_size: 128,
            lr: 1e-3,
            negatives_per_pos: 4,
            eval_negatives: 99,
            eval_batch_size: 256,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub model: ModelConfig,
    pub data: DataSource,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(RunError::Config("seeds must not be empty".into()));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(RunError::Config(format!("seeds {:?} are not distinct", self.seeds)));
        }
        let t = &self.training;
        if t.batch_size == 0 || t.eval_batch_size == 0 {
            return Err(RunError::Config("batch sizes must be positive".into()));
        }
        if t.negatives_per_pos == 0 || t.eval_negatives == 0 {
            return Err(RunError::Config("negative counts must be positive".into()));
        }
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(RunError::Config(format!("learning rate {} must be positive", t.lr)));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.model.validate()?;
        Ok(())
    }

    /// Model config with vocabulary sizes taken from the dataset.
    pub fn resolve_model(&self, ds: &SplitDataset) -> ModelConfig {
        ModelConfig {
            vocab_a: ds.vocab_a,
            vocab_b: ds.vocab_b,
            ..self.model.clone()
        }
    }

    /// Stable identifier: the model label plus a hash of everything that
    /// influences a run except the seed list and output location.
    pub fn config_id(&self) -> String {
        let key = serde_json::json!({
            "model": self.model,
            "data": self.data,
            "training": self.training,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        let hex: String = digest.iter().take(5).map(|b| format!("{b:02x}")).collect();
        format!("{}-{hex}", self.model.label())
    }
}

/// A grid over JSON paths into a [`RunSpec`], e.g. `model.gca.placements`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: RunSpec,
    pub axes: BTreeMap<String, Vec<serde_json::Value>>,
}

impl SweepSpec {
    /// Every point of the Cartesian product, in lexicographic axis order.
    pub fn expand(&self) -> Result<Vec<RunSpec>> {
        let base = serde_json::to_value(&self.base)?;
        let mut points = vec![base];
        for (path, values) in &self.axes {
            if values.is_empty() {
                return Err(RunError::Config(format!("axis {path} has no values")));
            }
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in values {
                    let mut q = p.clone();
                    set_path(&mut q, path, v.clone())?;
                    next.push(q);
                }
            }
            points = next;
        }
        let specs = points
            .into_iter()
            .map(|v| {
                let s: RunSpec = serde_json::from_value(v).map_err(|e| RunError::Config(e.to_string()))?;
                s.validate()?;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(specs)
    }
}

/// Replaces the value at a dotted path; every segment must already exist.
pub fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut cur = root;
    for seg in path.split('.') {
        cur = cur
            .as_object_mut()
            .and_then(|o| o.get_mut(seg))
            .ok_or_else(|| RunError::Config(format!("unknown config path {path:?}")))?;
    }
    *cur = value;
    Ok(())
}

fn default_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurveSpec {
    pub base: RunSpec,
    pub gca_variant: GcaConfig,
    /// Hidden sizes of the plain baseline, strictly increasing.
    pub width_grid: Vec<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Also run a baseline matched to the GCA variant's parameter count.
    #[serde(default = "yes")]
    pub include_matched: bool,
}

fn yes() -> bool {
    true
}

impl ScalingCurveSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.width_grid.is_empty() || self.width_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RunError::Config(format!(
                "width_grid {:?} must be non-empty and strictly increasing",
                self.width_grid
            )));
        }
        if self.gca_variant.placements.is_empty() {
            return Err(RunError::Config("gca_variant needs at least one placement".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(RunError::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Sweep axes section of an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub axes: BTreeMap<String, Vec<serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSection {
    pub gca_variant: GcaConfig,
    pub width_grid: Vec<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "yes")]
    pub include_matched: bool,
}

/// One experiment file: a base run plus optional sweep and scaling
/// sections, so every CLI subcommand can read the same config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSpec,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub scaling: Option<ScalingSection>,
}

impl ExperimentConfig {
    /// Reads JSON, ignoring lines whose first non-blank characters are `//`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| RunError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let stripped: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with("//"))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg: Self = serde_json::from_str(&stripped).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.run.validate()?;
        Ok(cfg)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| RunError::Config("config has no \"sweep\" section".into()))?;
        Ok(SweepSpec {
            base: self.run.clone(),
            axes: s.axes.clone(),
        })
    }

    pub fn scaling_spec(&self) -> Result<ScalingCurveSpec> {
        let s = self
            .scaling
            .as_ref()
            .ok_or_else(|| RunError::Config("config has no \"scaling\" section".into()))?;
        let spec = ScalingCurveSpec {
            base: self.run.clone(),
            gca_variant: s.gca_variant.clone(),
            width_grid: s.width_grid.clone(),
            tolerance: s.tolerance,
            include_matched: s.include_matched,
        };
        spec.validate()?;
        Ok(spec)
    }
}
