//! Multi-stage data-selective retraining.
//!
//! Stage 0 fits a fresh model on a random `gamma` fraction of the training
//! set. Each of the `repeats` enhancement stages scores the full training set
//! with the previous model, keeps the `beta` most confident samples of every
//! class and fits another fresh model on them. The last model's argmax
//! predictions become the bias labels.
//!
//! Everything here sees [`Samples`] only; ground-truth shortcuts enter
//! through [`stage_diagnostics`], which runs after the fact.

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{LabeledDataset, Samples};
use crate::metrics::{mode_quality, ModeQuality};
use crate::modes::{assignments, build_confusion, ConfusionMatrix, ModeError};
use crate::nn::predict_labels;
use crate::nn::{predict_proba, train_erm, Architecture, ClassifierModel, NnError, TrainConfig};
use crate::rng;

#[derive(Debug, Error)]
pub enum MstError {
    #[error("invalid MST config: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: usize, source: NnError },
    #[error(transparent)]
    Modes(#[from] ModeError),
    #[error("diagnostics: {0}")]
    Diagnostics(String),
}

/// How a sample's confidence is read off the softmax output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceScore {
    /// Probability of the sample's own class label.
    #[default]
    OwnLabel,
    /// Largest class probability.
    MaxProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MstConfig {
    pub gamma: f64,
    pub beta: f64,
    /// Number of enhancement stages after the initial one.
    pub repeats: usize,
    /// Shared by every stage; its seed is replaced by one derived from `seed`.
    pub stage_train: TrainConfig,
    pub seed: u64,
    #[serde(default)]
    pub confidence: ConfidenceScore,
}

impl MstConfig {
    pub fn new(stage_train: TrainConfig, seed: u64) -> Self {
        Self {
            gamma: 0.10,
            beta: 0.50,
            repeats: 3,
            stage_train,
            seed,
            confidence: ConfidenceScore::OwnLabel,
        }
    }

    pub fn validate(&self) -> Result<(), MstError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(MstError::Config(format!(
                "gamma = {} is outside (0, 1]",
                self.gamma
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(MstError::Config(format!(
                "beta = {} is outside (0, 1]",
                self.beta
            )));
        }
        self.stage_train
            .validate()
            .map_err(|e| MstError::Config(e.to_string()))
    }

    /// Training config of stage `stage` (0 is the initial stage).
    pub fn stage_train_config(&self, stage: usize) -> TrainConfig {
        self.stage_train
            .with_seed(rng::derive_seed(self.seed, &[0x57a9e, stage as u64]))
    }
}

#[derive(Debug, Clone)]
pub struct MstStage {
    pub stage: usize,
    /// Training-set indices this stage was fit on, ascending.
    pub train_indices: Vec<usize>,
    pub model: ClassifierModel,
    /// This stage's argmax predictions on the full training set.
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MstResult {
    pub bias_labels: Vec<usize>,
    pub stages: Vec<MstStage>,
    /// Counts of (predicted bias, class) over the training set.
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

/// Uniform random subset of `ceil(gamma * n)` indices without replacement,
/// returned in ascending order.
pub fn split_initial(n: usize, gamma: f64, seed: u64) -> Vec<usize> {
    let size = ((gamma * n as f64).ceil() as usize).clamp(1, n);
    let mut r = rng::stream(seed, &[0x5b117]);
    let mut picked = index::sample(&mut r, n, size).into_vec();
    picked.sort_unstable();
    picked
}

/// Per class, the `ceil(beta * n_c)` most confident samples (ties broken by
/// lower index), returned in ascending index order.
pub fn select_top_confidence(
    labels: &[usize],
    proba: &Array2<f64>,
    beta: f64,
    score: ConfidenceScore,
) -> Vec<usize> {
    let classes = proba.ncols();
    let mut by_class: Vec<Vec<(usize, f64)>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        let row = proba.row(i);
        let conf = match score {
            ConfidenceScore::OwnLabel => row[y],
            ConfidenceScore::MaxProbability => {
                row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        };
        by_class[y].push((i, conf));
    }
    let mut selected = Vec::new();
    for members in &mut by_class {
        if members.is_empty() {
            continue;
        }
        let keep = (beta * members.len() as f64).ceil() as usize;
        members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        selected.extend(members.iter().take(keep).map(|&(i, _)| i));
    }
    selected.sort_unstable();
    selected
}

fn missing_classes(labels: &[usize], indices: &[usize], classes: usize) -> Vec<usize> {
    let mut seen = vec![false; classes];
    for &i in indices {
        seen[labels[i]] = true;
    }
    (0..classes).filter(|&c| !seen[c]).collect()
}

pub fn run_mst(
    samples: &Samples,
    arch: &Architecture,
    cfg: &MstConfig,
) -> Result<MstResult, MstError> {
    cfg.validate()?;
    let classes = samples.classes();
    let labels = samples.labels();
    let mut warnings = Vec::new();

    let fit = |stage: usize, indices: Vec<usize>| -> Result<MstStage, MstError> {
        let subset = samples.select(&indices);
        let outcome = train_erm(&subset, arch, &cfg.stage_train_config(stage), None)
            .map_err(|source| MstError::Stage { stage, source })?;
        let predictions = predict_labels(&outcome.model, samples)
            .map_err(|source| MstError::Stage { stage, source })?;
        Ok(MstStage {
            stage,
            train_indices: indices,
            model: outcome.model,
            predictions,
        })
    };

    let initial = split_initial(
        samples.len(),
        cfg.gamma,
        rng::derive_seed(cfg.seed, &[0x5b117]),
    );
    let absent = missing_classes(labels, &initial, classes);
    if !absent.is_empty() {
        warnings.push(format!(
            "initial subset has no samples of classes {absent:?}"
        ));
    }
    let mut stages = vec![fit(0, initial)?];

    for stage in 1..=cfg.repeats {
        let previous = &stages[stage - 1].model;
        let proba =
            predict_proba(previous, samples).map_err(|source| MstError::Stage { stage, source })?;
        let selected = select_top_confidence(labels, &proba, cfg.beta, cfg.confidence);
        let absent = missing_classes(labels, &selected, classes);
        if !absent.is_empty() {
            warnings.push(format!(
                "stage {stage}: no samples selected for classes {absent:?}"
            ));
        }
        stages.push(fit(stage, selected)?);
    }

    let bias_labels = stages
        .last()
        .expect("at least one stage")
        .predictions
        .clone();
    let confusion = build_confusion(&bias_labels, labels, classes)?;
    Ok(MstResult {
        bias_labels,
        stages,
        confusion,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub train_size: usize,
    /// Share of bias-conflicting samples among the stage's training indices.
    pub conflicting_fraction: f64,
    /// Rows: predicted bias label, columns: true shortcut value.
    pub bias_vs_truth: Vec<Vec<u64>>,
    pub mode_quality: ModeQuality,
}

/// Scores every stage against ground-truth shortcut `shortcut` of `ds`,
/// which must be the dataset MST ran on.
pub fn stage_diagnostics(
    result: &MstResult,
    ds: &LabeledDataset,
    shortcut: usize,
) -> Result<Vec<StageDiagnostics>, MstError> {
    if shortcut >= ds.num_shortcuts() {
        return Err(MstError::Diagnostics(format!(
            "dataset has {} shortcut columns, asked for {shortcut}",
            ds.num_shortcuts()
        )));
    }
    if result.bias_labels.len() != ds.len() {
        return Err(MstError::Diagnostics(
            "result and dataset sizes differ".into(),
        ));
    }
    let labels = ds.labels();
    let truth_bias = ds.shortcut_column(shortcut);
    let truth = assignments(&truth_bias, labels)?;
    let classes = ds.classes();
    result
        .stages
        .iter()
        .map(|st| {
            let pred = assignments(&st.predictions, labels)?;
            let quality =
                mode_quality(&pred, &truth).map_err(|e| MstError::Diagnostics(e.to_string()))?;
            let mut bias_vs_truth = vec![vec![0u64; classes]; classes];
            for (&p, &t) in st.predictions.iter().zip(&truth_bias) {
                bias_vs_truth[p][t] += 1;
            }
            let conflicting = st
                .train_indices
                .iter()
                .filter(|&&i| truth_bias[i] != labels[i])
                .count();
            Ok(StageDiagnostics {
                stage: st.stage,
                train_size: st.train_indices.len(),
                conflicting_fraction: conflicting as f64 / st.train_indices.len().max(1) as f64,
                bias_vs_truth,
                mode_quality: quality,
            })
        })
        .collect()
}
