use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::datagen::{GeneratorConfig, SplitSizes};
use crate::fgccdb::{DebiasConfig, WeightSemantics};
use crate::mst::{ConfidenceScore, MstConfig};
use crate::nn::{Architecture, Budget, Optimizer, TrainConfig};
use crate::rng::derive_seed;

const ERM_STREAM: u64 = 0xe7;
const MST_STREAM: u64 = 0x357;
const DEBIAS_STREAM: u64 = 0xdeb1a5;

/// Synthetic dataset parameters; separations are in units of `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Bias-aligned fraction of each shortcut.
    pub rho_aligned_fraction: Vec<f64>,
    pub core_dims: usize,
    pub spur_dims: usize,
    pub core_sep_noise_units: f64,
    pub spur_sep_noise_units: f64,
    pub noise_std: f64,
    #[serde(default = "default_true")]
    pub test_unbiased: bool,
}

/// Pre-generated `train.txt`, `val.txt` and `test.txt` in one directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths; empty for softmax regression.
    pub hidden_units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErmSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MstSection {
    pub gamma_fraction: f64,
    pub beta_fraction: f64,
    pub repeats: usize,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub confidence: ConfidenceScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebiasSection {
    pub iterations: usize,
    pub checkpoint_every_iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub weight_semantics: WeightSemantics,
    /// Also train with ground-truth shortcut modes as a reference.
    #[serde(default)]
    pub supervised_reference: bool,
}

/// A parsed experiment file. Exactly one of `dataset` (generate per seed)
/// and `dataset_files` (fixed data for every seed) is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub dataset_files: Option<DatasetFiles>,
    pub model: ModelSection,
    pub erm: ErmSection,
    pub mst: MstSection,
    pub debias: DebiasSection,
}

fn default_true() -> bool {
    true
}

fn train_config(
    epochs_or_iters: Budget,
    batch_size: usize,
    lr: f64,
    opt: Optimizer,
    wd: f64,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        budget: epochs_or_iters,
        batch_size,
        learning_rate: lr,
        optimizer: opt,
        seed,
        weight_decay: wd,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            ExperimentError::Config(m) => {
                ExperimentError::Config(format!("{}: {m}", path.display()))
            }
            other => other,
        })
    }

    /// The benchmark used throughout the examples and tests.
    pub fn benchmark(seeds: Vec<u64>) -> Self {
        let g = GeneratorConfig::benchmark(0);
        Self {
            seeds,
            output_dir: None,
            dataset: Some(DatasetSection {
                classes: g.classes,
                train_per_class: g.per_class.train,
                val_per_class: g.per_class.val,
                test_per_class: g.per_class.test,
                rho_aligned_fraction: g.rho,
                core_dims: g.core_dim,
                spur_dims: g.spur_dim,
                core_sep_noise_units: g.core_sep,
                spur_sep_noise_units: g.spur_sep,
                noise_std: g.noise_std,
                test_unbiased: g.test_unbiased,
            }),
            dataset_files: None,
            model: ModelSection {
                hidden_units: vec![32],
            },
            erm: ErmSection {
                epochs: 20,
                batch_size: 64,
                learning_rate: 0.01,
                optimizer: Optimizer::Adam,
                weight_decay: 0.0,
            },
            mst: MstSection {
                gamma_fraction: 0.1,
                beta_fraction: 0.5,
                repeats: 3,
                epochs_per_stage: 20,
                batch_size: 64,
                learning_rate: 0.01,
                optimizer: Optimizer::Adam,
                weight_decay: 0.0,
                confidence: ConfidenceScore::OwnLabel,
            },
            debias: DebiasSection {
                iterations: 5000,
                checkpoint_every_iterations: 100,
                batch_size: 64,
                learning_rate: 0.01,
                optimizer: Optimizer::Adam,
                weight_decay: 0.0,
                weight_semantics: WeightSemantics::ModeMass,
                supervised_reference: true,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        match (&self.dataset, &self.dataset_files) {
            (Some(_), Some(_)) => {
                return bad("set only one of [dataset] and [dataset_files]".into())
            }
            (None, None) => return bad("missing [dataset] or [dataset_files]".into()),
            _ => {}
        }
        if let Some(d) = &self.dataset {
            for (k, &r) in d.rho_aligned_fraction.iter().enumerate() {
                if !(r > 0.0 && r <= 1.0) {
                    return bad(format!(
                        "dataset.rho_aligned_fraction[{k}] = {r} is outside (0, 1]"
                    ));
                }
            }
            self.generator(0)
                .expect("dataset section present")
                .validate()
                .map_err(|e| ExperimentError::Config(format!("[dataset] {e}")))?;
        }
        if self.model.hidden_units.contains(&0) {
            return bad("model.hidden_units entries must be positive".into());
        }
        for (key, v) in [
            ("mst.gamma_fraction", self.mst.gamma_fraction),
            ("mst.beta_fraction", self.mst.beta_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{key} = {v} is outside (0, 1]"));
            }
        }
        let check = |section: &str, cfg: TrainConfig| {
            cfg.validate()
                .map_err(|e| ExperimentError::Config(format!("[{section}] {e}")))
        };
        check("erm", self.erm_train(0))?;
        check("mst", self.mst_config(0).stage_train)?;
        check("debias", self.debias_config(0).train)?;
        if self.debias.checkpoint_every_iterations == 0 {
            return bad("debias.checkpoint_every_iterations must be positive".into());
        }
        Ok(())
    }

    /// Generator for `seed`, when the dataset is synthetic.
    pub fn generator(&self, seed: u64) -> Option<GeneratorConfig> {
        self.dataset.as_ref().map(|d| GeneratorConfig {
            classes: d.classes,
            per_class: SplitSizes {
                train: d.train_per_class,
                val: d.val_per_class,
                test: d.test_per_class,
            },
            rho: d.rho_aligned_fraction.clone(),
            core_dim: d.core_dims,
            spur_dim: d.spur_dims,
            core_sep: d.core_sep_noise_units * d.noise_std,
            spur_sep: d.spur_sep_noise_units * d.noise_std,
            noise_std: d.noise_std,
            seed,
            test_unbiased: d.test_unbiased,
        })
    }

    pub fn architecture(&self, input_dim: usize, classes: usize) -> Architecture {
        Architecture::mlp(input_dim, &self.model.hidden_units, classes)
    }

    pub fn erm_train(&self, seed: u64) -> TrainConfig {
        let e = &self.erm;
        train_config(
            Budget::Epochs(e.epochs),
            e.batch_size,
            e.learning_rate,
            e.optimizer,
            e.weight_decay,
            derive_seed(seed, &[ERM_STREAM]),
        )
    }

    pub fn mst_config(&self, seed: u64) -> MstConfig {
        let m = &self.mst;
        let stage_train = train_config(
            Budget::Epochs(m.epochs_per_stage),
            m.batch_size,
            m.learning_rate,
            m.optimizer,
            m.weight_decay,
            0,
        );
        MstConfig {
            gamma: m.gamma_fraction,
            beta: m.beta_fraction,
            repeats: m.repeats,
            stage_train,
            seed: derive_seed(seed, &[MST_STREAM]),
            confidence: m.confidence,
        }
    }

    pub fn debias_config(&self, seed: u64) -> DebiasConfig {
        let d = &self.debias;
        DebiasConfig {
            train: train_config(
                Budget::Iterations(d.iterations),
                d.batch_size,
                d.learning_rate,
                d.optimizer,
                d.weight_decay,
                derive_seed(seed, &[DEBIAS_STREAM]),
            ),
            checkpoint_every: d.checkpoint_every_iterations,
            semantics: d.weight_semantics,
        }
    }

    /// The same experiment restricted to other seeds.
    pub fn with_seeds(&self, seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            ..self.clone()
        }
    }

    /// SHA-256 over the canonical form of every field that affects results;
    /// formatting, comments and the output directory do not count.
    pub fn digest(&self) -> String {
        let canonical = Self {
            output_dir: None,
            ..self.clone()
        };
        hash_json(&canonical)
    }

    /// Like [`digest`](Self::digest) but ignoring the seed list, so a
    /// per-seed record stays valid when other seeds are added or removed.
    pub fn pipeline_digest(&self) -> String {
        Self {
            output_dir: None,
            ..self.with_seeds(Vec::new())
        }
        .digest()
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}
