use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Architecture, ClassifierModel, Workspace};
use super::{NnError, WeightedSampler};
use crate::datagen::Samples;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Epochs(usize),
    Iterations(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient step.
    Sgd,
    /// Adaptive moments with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub budget: Budget,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainConfig {
    pub fn epochs(epochs: usize, seed: u64) -> Self {
        Self {
            budget: Budget::Epochs(epochs),
            batch_size: 64,
            learning_rate: 1e-2,
            optimizer: Optimizer::Adam,
            seed,
            weight_decay: 0.0,
        }
    }

    pub fn iterations(iterations: usize, seed: u64) -> Self {
        Self {
            budget: Budget::Iterations(iterations),
            ..Self::epochs(0, seed)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and nonnegative");
        }
        if matches!(self.budget, Budget::Epochs(0) | Budget::Iterations(0)) {
            return bad("training budget must be positive");
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Step-by-step minibatch trainer. Batches come from a per-epoch shuffle, or
/// from the weighted sampler when one is attached.
pub struct Trainer<'a> {
    samples: &'a Samples,
    model: ClassifierModel,
    cfg: TrainConfig,
    sampler: Option<WeightedSampler>,
    shuffle_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    grad: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    ws: Workspace,
    step: usize,
    steps_per_epoch: usize,
    epoch_loss: f64,
    epoch_losses: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        samples: &'a Samples,
        model: ClassifierModel,
        cfg: &TrainConfig,
        sampler: Option<WeightedSampler>,
    ) -> Result<Self, NnError> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        if samples.dim() != model.arch().input_dim {
            return Err(NnError::DimMismatch {
                expected: model.arch().input_dim,
                got: samples.dim(),
            });
        }
        if let Some(s) = &sampler {
            if s.len() != samples.len() {
                return Err(NnError::InvalidConfig(format!(
                    "sampler has {} weights for {} samples",
                    s.len(),
                    samples.len()
                )));
            }
        }
        let n_params = model.params().len();
        Ok(Self {
            samples,
            model,
            cfg: cfg.clone(),
            sampler,
            shuffle_rng: rng::stream(cfg.seed, &[0x5b0f]),
            order: (0..samples.len()).collect(),
            cursor: samples.len(),
            grad: vec![0.0; n_params],
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            ws: Workspace::default(),
            step: 0,
            steps_per_epoch: samples.len().div_ceil(cfg.batch_size),
            epoch_loss: 0.0,
            epoch_losses: Vec::new(),
        })
    }

    pub fn total_steps(&self) -> usize {
        match self.cfg.budget {
            Budget::Epochs(e) => e * self.steps_per_epoch,
            Budget::Iterations(i) => i,
        }
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn into_model(self) -> ClassifierModel {
        self.model
    }

    /// Mean minibatch loss of every completed epoch.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let bs = self.cfg.batch_size;
        if let Some(sampler) = &mut self.sampler {
            return sampler.sample_indices(bs);
        }
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.shuffle_rng);
            self.cursor = 0;
        }
        let end = (self.cursor + bs).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// One optimizer update; returns the minibatch loss.
    pub fn step(&mut self) -> Result<f64, NnError> {
        let batch = self.next_batch();
        let scale = 1.0 / batch.len() as f64;
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let labels = self.samples.labels();
        for &i in &batch {
            let row = self.samples.row(i);
            let x = row.as_slice().expect("row-major features");
            loss +=
                self.model
                    .accumulate_gradient(x, labels[i], scale, &mut self.ws, &mut self.grad);
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(NnError::DivergenceDetected { step: self.step });
        }
        if self.cfg.weight_decay > 0.0 {
            let params = self.model.params();
            for range in self.model.weight_ranges() {
                for k in range {
                    self.grad[k] += self.cfg.weight_decay * params[k];
                }
            }
        }
        self.apply_update();
        if self.model.params().iter().any(|p| !p.is_finite()) {
            return Err(NnError::DivergenceDetected { step: self.step });
        }

        self.step += 1;
        self.epoch_loss += loss;
        if self.step.is_multiple_of(self.steps_per_epoch) {
            self.epoch_losses
                .push(self.epoch_loss / self.steps_per_epoch as f64);
            self.epoch_loss = 0.0;
        }
        Ok(loss)
    }

    fn apply_update(&mut self) {
        let lr = self.cfg.learning_rate;
        let params = self.model.params_mut();
        match self.cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(&self.grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                let t = (self.step + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for k in 0..params.len() {
                    let g = self.grad[k];
                    let m = &mut self.first_moment[k];
                    let v = &mut self.second_moment[k];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    params[k] -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }

    pub fn run_to_end(&mut self) -> Result<(), NnError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub epoch_losses: Vec<f64>,
}

/// Trains a freshly initialized model (seeded by `cfg.seed`) for the full budget.
pub fn train_erm(
    samples: &Samples,
    arch: &Architecture,
    cfg: &TrainConfig,
    sampler: Option<WeightedSampler>,
) -> Result<TrainOutcome, NnError> {
    let model = ClassifierModel::init(arch.clone(), cfg.seed);
    let mut trainer = Trainer::new(samples, model, cfg, sampler)?;
    trainer.run_to_end()?;
    let epoch_losses = trainer.epoch_losses().to_vec();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{predict_labels, predict_proba};
    use ndarray::array;

    fn toy() -> Samples {
        // separable by the line x0 + x1 = 0
        Samples::new(
            array![[1.0, 1.0], [2.0, 0.5], [-1.0, -1.5], [-0.5, -2.0]],
            vec![1, 1, 0, 0],
            2,
        )
        .unwrap()
    }

    fn sgd(steps: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            budget: Budget::Iterations(steps),
            batch_size: 4,
            learning_rate: lr,
            optimizer: Optimizer::Sgd,
            seed: 1,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let s = toy();
        let arch = Architecture::softmax_regression(2, 2);
        let out = train_erm(&s, &arch, &sgd(200, 0.5), None).unwrap();
        assert_eq!(predict_labels(&out.model, &s).unwrap(), s.labels());
        let p = predict_proba(&out.model, &s).unwrap();
        for (i, &y) in s.labels().iter().enumerate() {
            assert!(p[[i, y]] > 0.5);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let s = toy();
        let arch = Architecture::mlp(2, &[5], 2);
        for opt in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig {
                optimizer: opt,
                ..sgd(20, 0.0)
            };
            let out = train_erm(&s, &arch, &cfg, None).unwrap();
            assert_eq!(out.model, ClassifierModel::init(arch.clone(), 1));
        }
    }

    #[test]
    fn single_class_becomes_confident() {
        let s = Samples::new(
            array![[0.3, 1.0], [-0.2, 0.4], [1.5, -0.7]],
            vec![1, 1, 1],
            2,
        )
        .unwrap();
        let arch = Architecture::mlp(2, &[4], 2);
        let cfg = TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.05,
            ..sgd(300, 0.0)
        };
        let out = train_erm(&s, &arch, &cfg, None).unwrap();
        let p = predict_proba(&out.model, &s).unwrap();
        assert!(p.column(1).iter().all(|&v| v >= 0.99));
    }

    #[test]
    fn training_is_deterministic() {
        let s = toy();
        let arch = Architecture::mlp(2, &[6], 2);
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::epochs(5, 3)
        };
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let a = train_erm(
            &s,
            &arch,
            &cfg,
            Some(WeightedSampler::new(w.clone(), 8).unwrap()),
        )
        .unwrap();
        let b = train_erm(&s, &arch, &cfg, Some(WeightedSampler::new(w, 8).unwrap())).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses.len(), 5);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let s = Samples::new(array![[1e200, -1e200], [-1e200, 1e200]], vec![0, 1], 2).unwrap();
        let arch = Architecture::softmax_regression(2, 2);
        let err = train_erm(&s, &arch, &sgd(50, 1e200), None).unwrap_err();
        assert!(matches!(err, NnError::DivergenceDetected { .. }), "{err}");
    }

    #[test]
    fn rejects_invalid_config() {
        let s = toy();
        let arch = Architecture::softmax_regression(2, 2);
        let cfg = TrainConfig {
            batch_size: 0,
            ..sgd(1, 0.1)
        };
        assert!(matches!(
            train_erm(&s, &arch, &cfg, None),
            Err(NnError::InvalidConfig(_))
        ));
        let arch3 = Architecture::softmax_regression(3, 2);
        assert!(matches!(
            train_erm(&s, &arch3, &sgd(1, 0.1), None),
            Err(NnError::DimMismatch { .. })
        ));
    }
}
