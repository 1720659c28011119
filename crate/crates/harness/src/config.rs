//! Experiment configuration: file schema, desk-scale defaults, resolution
//! into core types, and the cell digest used to detect mixed aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use synstop_core::data::{GeneratorConfig, TaskSpec};
use synstop_core::fed::{FedConfig, Method};
use synstop_core::model::ArchDescriptor;
use synstop_core::stopping::AccuracyMode;

use crate::error::{HarnessError, Result};

fn default_input_dim() -> usize {
    32
}
fn default_classes() -> usize {
    14
}
fn default_feature_noise() -> f64 {
    0.5
}
fn default_train_size() -> usize {
    10_000
}
fn default_test_size() -> usize {
    2_000
}

/// Task recipe as written in config files. Prototypes are not spelled out;
/// they are derived from the run seed so every seed gets a fresh task from
/// the same family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Hidden width of the classifier; 0 keeps the linear model.
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default = "default_feature_noise")]
    pub feature_noise: f64,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Per-class label thresholds; defaults to all zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biases: Option<Vec<f64>>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            input_dim: default_input_dim(),
            classes: default_classes(),
            hidden_dim: 0,
            feature_noise: default_feature_noise(),
            train_size: default_train_size(),
            test_size: default_test_size(),
            biases: None,
        }
    }
}

impl TaskConfig {
    pub fn arch(&self) -> Result<ArchDescriptor> {
        ArchDescriptor::new(self.input_dim, self.hidden_dim, self.classes)
            .map_err(|e| HarnessError::config(e.to_string()))
    }

    /// Instantiates the concrete task for one run seed.
    pub fn resolve(&self, seed: u64) -> Result<TaskSpec> {
        let mut spec = TaskSpec::generate(
            self.input_dim,
            self.classes,
            self.feature_noise,
            self.train_size,
            self.test_size,
            seed,
        )
        .map_err(|e| HarnessError::config(e.to_string()))?;
        if let Some(biases) = &self.biases {
            if biases.len() != self.classes {
                return Err(HarnessError::config(format!(
                    "biases has {} entries for {} classes",
                    biases.len(),
                    self.classes
                )));
            }
            spec.biases = biases.clone();
        }
        Ok(spec)
    }
}

/// Generator section: either a named preset or explicit knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    /// One of sd14, sd15, sd20, sdxl, roentgen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_flip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_shift: Option<Vec<f64>>,
    pub samples_per_class: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            preset: Some("roentgen".to_string()),
            name: None,
            feature_noise: None,
            label_flip: None,
            mean_shift: None,
            samples_per_class: 50,
        }
    }
}

impl GeneratorSpec {
    pub fn from_preset(preset: &str, samples_per_class: usize) -> Self {
        Self {
            preset: Some(preset.to_string()),
            name: None,
            feature_noise: None,
            label_flip: None,
            mean_shift: None,
            samples_per_class,
        }
    }

    pub fn resolve(&self) -> Result<GeneratorConfig> {
        if let Some(preset) = &self.preset {
            if self.name.is_some()
                || self.feature_noise.is_some()
                || self.label_flip.is_some()
                || self.mean_shift.is_some()
            {
                return Err(HarnessError::config(
                    "generator: give either a preset or explicit knobs, not both",
                ));
            }
            return GeneratorConfig::preset(preset, self.samples_per_class).ok_or_else(|| {
                HarnessError::config(format!("unknown generator preset '{preset}'"))
            });
        }
        let (feature_noise, label_flip) = match (self.feature_noise, self.label_flip) {
            (Some(fnoise), Some(flip)) => (fnoise, flip),
            _ => {
                return Err(HarnessError::config(
                    "generator without preset needs feature_noise and label_flip",
                ))
            }
        };
        Ok(GeneratorConfig {
            name: self.name.clone().unwrap_or_else(|| "custom".to_string()),
            feature_noise,
            label_flip,
            mean_shift: self.mean_shift.clone().unwrap_or_default(),
            samples_per_class: self.samples_per_class,
        })
    }

    /// Display name for tables and cell ids.
    pub fn label(&self) -> String {
        self.preset
            .clone()
            .or_else(|| self.name.clone())
            .unwrap_or_else(|| "custom".to_string())
    }
}

fn default_fed() -> FedConfig {
    FedConfig {
        n_clients: 100,
        participants: 10,
        max_rounds: 100,
        local_steps: 5,
        batch_size: 32,
        // class-averaged BCE scales gradients by 1/classes; 1.0 here is an
        // effective per-class step of ~0.07 and reaches the plateau well
        // inside max_rounds
        lr: 1.0,
        method: Method::FedAvg,
        method_params: BTreeMap::new(),
    }
}
fn default_patience() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.1
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Top-level experiment configuration, one JSON object per file. Unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default = "default_fed")]
    pub fed: FedConfig,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metric_mode: AccuracyMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            fed: default_fed(),
            generator: GeneratorSpec::default(),
            patience: default_patience(),
            alpha: default_alpha(),
            seeds: default_seeds(),
            metric_mode: AccuracyMode::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.arch()?;
        self.fed.validate().map_err(|e| HarnessError::config(e.to_string()))?;
        self.generator.resolve()?;
        if self.patience == 0 {
            return Err(HarnessError::config("patience must be >= 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(HarnessError::config("alpha must be > 0"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds must be non-empty"));
        }
        if self.fed.n_clients > self.task.train_size {
            return Err(HarnessError::config(format!(
                "{} clients cannot share {} train examples",
                self.fed.n_clients, self.task.train_size
            )));
        }
        Ok(())
    }

    /// Hash of everything that defines a cell (not seeds, not output paths).
    /// Runs aggregated together must share this digest.
    pub fn cell_digest(&self) -> String {
        #[derive(Serialize)]
        struct CellKey<'a> {
            task: &'a TaskConfig,
            fed: &'a FedConfig,
            generator: &'a GeneratorSpec,
            patience: usize,
            alpha: f64,
            metric_mode: AccuracyMode,
        }
        let key = CellKey {
            task: &self.task,
            fed: &self.fed,
            generator: &self.generator,
            patience: self.patience,
            alpha: self.alpha,
            metric_mode: self.metric_mode,
        };
        let json = serde_json::to_string(&key).expect("config is serializable");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
