//! From mode partitions to a debiased classifier: derive mode weights, draw
//! training batches with them and keep the checkpoint with the best
//! worst-class validation accuracy.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Samples;
use crate::metrics::worst_class_accuracy;
use crate::modes::{
    self, assignments, build_confusion, compute_weights, estimate_statistics, mutual_information,
    reweighted_joint, ConfusionMatrix, ModeAssignment, ModeError, ModeStatistics, WeightTable,
};
use crate::mst::MstResult;
use crate::nn::{
    predict_labels, Architecture, ClassifierModel, NnError, TrainConfig, Trainer, WeightedSampler,
};

#[derive(Debug, Error)]
pub enum DebiasError {
    #[error(transparent)]
    Modes(#[from] ModeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid debias config: {0}")]
    Config(String),
}

/// How mode weights become sampling weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSemantics {
    /// Sample weight `w[s, y] = W[s, y] / M[s, y]`; each mode's sampled mass
    /// is `W[s, y]`.
    #[default]
    ModeMass,
    /// Sample weight `W[s, y]`; the sampled joint is `normalize(W ⊙ J)`,
    /// i.e. bias and class are independent.
    Multiplier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebiasConfig {
    pub train: TrainConfig,
    /// Iterations between validation evaluations.
    pub checkpoint_every: usize,
    #[serde(default)]
    pub semantics: WeightSemantics,
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<(), DebiasError> {
        if self.checkpoint_every == 0 {
            return Err(DebiasError::Config(
                "checkpoint_every must be positive".into(),
            ));
        }
        self.train
            .validate()
            .map_err(|e| DebiasError::Config(e.to_string()))
    }
}

/// Everything derived from one set of mode assignments.
#[derive(Debug, Clone)]
pub struct DerivedWeights {
    pub modes: Vec<ModeAssignment>,
    pub confusion: ConfusionMatrix,
    pub stats: ModeStatistics,
    pub table: WeightTable,
    /// `w[s_k, y_k]` for every sample `k`.
    pub per_sample: Vec<f64>,
}

impl DerivedWeights {
    pub fn sampling_weights(&self, semantics: WeightSemantics) -> Vec<f64> {
        match semantics {
            WeightSemantics::ModeMass => self.per_sample.clone(),
            WeightSemantics::Multiplier => modes::per_sample_multipliers(&self.table, &self.modes),
        }
    }

    pub fn mi_original_joint(&self) -> f64 {
        mutual_information(&self.stats.joint).expect("joint of counts is a distribution")
    }

    pub fn multiplier_joint(&self) -> Result<Array2<f64>, ModeError> {
        reweighted_joint(&self.stats, &self.table)
    }

    pub fn mi_multiplier_joint(&self) -> Result<f64, ModeError> {
        mutual_information(&self.multiplier_joint()?)
    }

    /// Mode masses realized by drawing with `w`, normalized to sum to one.
    pub fn mode_mass_joint(&self) -> Array2<f64> {
        let total = self.table.mode_weights.sum();
        &self.table.mode_weights / total
    }

    pub fn residual_mismatch(&self) -> Vec<f64> {
        self.table.residual_mismatch(&self.stats)
    }
}

/// Weights for arbitrary mode assignments: predicted bias labels for the
/// annotation-free path, ground-truth shortcuts for the supervised one.
pub fn derive_weights(
    bias: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<DerivedWeights, ModeError> {
    let confusion = build_confusion(bias, labels, classes)?;
    let stats = estimate_statistics(&confusion);
    let table = compute_weights(&stats, &confusion);
    let modes = assignments(bias, labels)?;
    let per_sample = modes::per_sample_weights(&table, &modes);
    Ok(DerivedWeights {
        modes,
        confusion,
        stats,
        table,
        per_sample,
    })
}

pub fn derive_weights_from_mst(
    mst: &MstResult,
    samples: &Samples,
) -> Result<DerivedWeights, ModeError> {
    derive_weights(&mst.bias_labels, samples.labels(), samples.classes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub iteration: usize,
    pub class_accuracy: Vec<f64>,
    pub worst_class_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct DebiasOutcome {
    pub model: ClassifierModel,
    pub trace: Vec<CheckpointEval>,
    /// Index into `trace` of the kept checkpoint.
    pub best_index: usize,
}

fn evaluate(
    model: &ClassifierModel,
    val: &Samples,
    iteration: usize,
) -> Result<CheckpointEval, NnError> {
    let pred = predict_labels(model, val)?;
    let (worst, per_class) = worst_class_accuracy(&pred, val.labels(), val.classes());
    Ok(CheckpointEval {
        iteration,
        class_accuracy: per_class,
        worst_class_accuracy: worst,
    })
}

/// Trains a fresh model with batches drawn by `sampling_weights`. Every
/// `checkpoint_every` iterations (and at the end) the model is scored on the
/// validation labels; the first checkpoint with the highest worst-class
/// accuracy is returned.
pub fn train_debiased(
    train: &Samples,
    val: &Samples,
    sampling_weights: &[f64],
    arch: &Architecture,
    cfg: &DebiasConfig,
) -> Result<DebiasOutcome, DebiasError> {
    cfg.validate()?;
    if sampling_weights.len() != train.len() {
        return Err(DebiasError::Config(format!(
            "{} weights for {} training samples",
            sampling_weights.len(),
            train.len()
        )));
    }
    let sampler = WeightedSampler::new(sampling_weights.to_vec(), cfg.train.seed)?;
    let model = ClassifierModel::init(arch.clone(), cfg.train.seed);
    let mut trainer = Trainer::new(train, model, &cfg.train, Some(sampler))?;

    let mut trace = Vec::new();
    let mut best: Option<(usize, ClassifierModel)> = None;
    let mut best_score = f64::NEG_INFINITY;
    while !trainer.is_finished() {
        trainer.step()?;
        let step = trainer.steps_done();
        if step % cfg.checkpoint_every == 0 || trainer.is_finished() {
            let eval = evaluate(trainer.model(), val, step)?;
            if eval.worst_class_accuracy > best_score {
                best_score = eval.worst_class_accuracy;
                best = Some((trace.len(), trainer.model().clone()));
            }
            trace.push(eval);
        }
    }
    let (best_index, model) = best.expect("at least one checkpoint is evaluated");
    Ok(DebiasOutcome {
        model,
        trace,
        best_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Budget, Optimizer};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn labels_from_counts(rows: &[[usize; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
        let (mut s, mut y) = (Vec::new(), Vec::new());
        for i in 0..2 {
            for j in 0..2 {
                s.extend(std::iter::repeat_n(i, rows[i][j]));
                y.extend(std::iter::repeat_n(j, rows[i][j]));
            }
        }
        (s, y)
    }

    #[test]
    fn fixture_weights() {
        let (s, y) = labels_from_counts(&[[95, 5], [5, 95]]);
        let d = derive_weights(&s, &y, 2).unwrap();
        assert_abs_diff_eq!(
            d.table.sample_weights,
            array![[0.0055402, 2.0], [2.0, 0.0055402]],
            epsilon = 1e-7
        );
        assert!(d.mi_multiplier_joint().unwrap() <= 1e-12);
        assert_abs_diff_eq!(d.mi_original_joint(), 0.4946319372140728, epsilon = 1e-12);
        // the per-sample rule mirrors the correlation for two classes
        let mass = d.mode_mass_joint();
        assert_abs_diff_eq!(
            mutual_information(&mass).unwrap(),
            d.mi_original_joint(),
            epsilon = 1e-12
        );
        let mult = d.sampling_weights(WeightSemantics::Multiplier);
        assert_abs_diff_eq!(mult[0], 10.0 / 19.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mult[100], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_predictions() {
        let (s, y) = labels_from_counts(&[[60, 0], [0, 40]]);
        let d = derive_weights(&s, &y, 2).unwrap();
        assert_eq!(d.table.matchable, vec![false, false]);
        // W = q / P = q on the diagonal, w = W / M = (M_jj / N) / M_jj = 1 / N
        assert_abs_diff_eq!(d.table.sample_weights[[0, 0]], 1.0 / 100.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.table.sample_weights[[1, 1]], 1.0 / 100.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.residual_mismatch()[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn unbiased_predictions_give_uniform_weights() {
        let (s, y) = labels_from_counts(&[[30, 30], [30, 30]]);
        let d = derive_weights(&s, &y, 2).unwrap();
        for semantics in [WeightSemantics::ModeMass, WeightSemantics::Multiplier] {
            let w = d.sampling_weights(semantics);
            assert!(w.iter().all(|&v| (v - w[0]).abs() < 1e-15));
        }
    }

    #[test]
    fn selection_trace_bookkeeping() {
        let train = Samples::new(
            array![
                [1.0, 0.2],
                [0.8, -0.1],
                [-1.0, 0.3],
                [-0.7, -0.2],
                [1.2, 0.0],
                [-1.1, 0.1]
            ],
            vec![1, 1, 0, 0, 1, 0],
            2,
        )
        .unwrap();
        let cfg = DebiasConfig {
            train: TrainConfig {
                budget: Budget::Iterations(55),
                batch_size: 4,
                learning_rate: 0.05,
                optimizer: Optimizer::Adam,
                seed: 3,
                weight_decay: 0.0,
            },
            checkpoint_every: 10,
            semantics: WeightSemantics::Multiplier,
        };
        let arch = Architecture::softmax_regression(2, 2);
        let out = train_debiased(&train, &train, &[1.0; 6], &arch, &cfg).unwrap();
        assert_eq!(out.trace.len(), 6);
        assert_eq!(out.trace.last().unwrap().iteration, 55);
        let best = out.trace[out.best_index].worst_class_accuracy;
        assert!(out.trace.iter().all(|e| e.worst_class_accuracy <= best));
        assert!(train_debiased(&train, &train, &[1.0; 5], &arch, &cfg).is_err());
    }
}
