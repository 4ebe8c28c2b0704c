use rand::Rng;

use super::model::{Architecture, ClassifierModel};
use crate::rng;

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-4;

/// A model, an input and a label at which to check the loss gradient.
#[derive(Debug, Clone)]
pub struct GradientProbe {
    pub model: ClassifierModel,
    pub input: Vec<f64>,
    pub label: usize,
}

impl GradientProbe {
    /// Random parameters in `[-1, 1]` and a random standard-uniform-ish input.
    pub fn random(arch: &Architecture, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x6ad]);
        let params = (0..arch.num_params())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let input = (0..arch.input_dim)
            .map(|_| r.random_range(-2.0..2.0))
            .collect();
        let label = r.random_range(0..arch.classes);
        let model =
            ClassifierModel::from_params(arch.clone(), params).expect("sized to the architecture");
        Self {
            model,
            input,
            label,
        }
    }

    pub fn zero(arch: &Architecture, input: Vec<f64>, label: usize) -> Self {
        Self {
            model: ClassifierModel::zeros(arch.clone()),
            input,
            label,
        }
    }
}

/// Largest relative error between the analytic gradient and central finite
/// differences, `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn gradient_check(probe: &GradientProbe) -> f64 {
    let analytic = probe.model.gradient(&probe.input, probe.label);
    let mut model = probe.model.clone();
    let mut worst = 0.0_f64;
    for (k, &a) in analytic.iter().enumerate() {
        let original = model.params()[k];
        model.params_mut()[k] = original + STEP;
        let up = model.loss(&probe.input, probe.label);
        model.params_mut()[k] = original - STEP;
        let down = model.loss(&probe.input, probe.label);
        model.params_mut()[k] = original;
        let numeric = (up - down) / (2.0 * STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_regression_gradient() {
        for seed in 0..5 {
            let probe = GradientProbe::random(&Architecture::softmax_regression(4, 3), seed);
            let err = gradient_check(&probe);
            assert!(err <= 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn one_hidden_layer_gradient() {
        for seed in 0..5 {
            let probe = GradientProbe::random(&Architecture::mlp(3, &[6], 2), seed);
            let err = gradient_check(&probe);
            assert!(err <= 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_parameters_at_symmetric_input() {
        let probe = GradientProbe::zero(&Architecture::mlp(2, &[3], 2), vec![0.0, 0.0], 0);
        let err = gradient_check(&probe);
        assert!(err.is_finite());
    }
}
