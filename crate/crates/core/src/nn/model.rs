use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::datagen::Samples;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Widths of the rectifier hidden layers; empty for softmax regression.
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn softmax_regression(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            classes,
        }
    }

    /// `(fan_in, fan_out)` of each dense layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn describe(&self) -> String {
        let hidden = if self.hidden.is_empty() {
            "none".to_string()
        } else {
            self.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join("x")
        };
        format!(
            "input={} hidden={} classes={}",
            self.input_dim, hidden, self.classes
        )
    }
}

/// Flat parameter vector; each layer stores its `fan_out x fan_in` weights
/// row-major followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    arch: Architecture,
    params: Vec<f64>,
}

/// Per-layer activations from the last forward pass.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl ClassifierModel {
    pub fn zeros(arch: Architecture) -> Self {
        let params = vec![0.0; arch.num_params()];
        Self { arch, params }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut model = Self::zeros(arch);
        let mut rng = rng::stream(seed, &[0x1417]);
        let mut offset = 0;
        for (fan_in, fan_out) in model.arch.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in &mut model.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        model
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, NnError> {
        if params.len() != arch.num_params() {
            return Err(NnError::DimMismatch {
                expected: arch.num_params(),
                got: params.len(),
            });
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index ranges of the weight matrices (biases excluded).
    pub(crate) fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (i, o) in self.arch.layers() {
            out.push(offset..offset + i * o);
            offset += i * o + o;
        }
        out
    }

    pub(crate) fn forward(&self, x: &[f64], ws: &mut Workspace) {
        let layers = self.arch.layers();
        ws.acts.resize_with(layers.len() + 1, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        let mut offset = 0;
        let last = layers.len() - 1;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let (w, rest) = self.params[offset..].split_at(fan_in * fan_out);
            let b = &rest[..fan_out];
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            out.clear();
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(if l < last { z.max(0.0) } else { z });
            }
            offset += fan_in * fan_out + fan_out;
        }
    }

    fn logits_of(ws: &Workspace) -> &[f64] {
        ws.acts.last().expect("forward pass ran")
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::default();
        self.forward(x, &mut ws);
        Self::logits_of(&ws).to_vec()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Cross-entropy of one sample; adds `scale * dloss/dparams` into `grad`.
    pub(crate) fn accumulate_gradient(
        &self,
        x: &[f64],
        label: usize,
        scale: f64,
        ws: &mut Workspace,
        grad: &mut [f64],
    ) -> f64 {
        self.forward(x, ws);
        let probs = softmax(Self::logits_of(ws));
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();

        ws.delta.clear();
        ws.delta.extend(probs.iter().enumerate().map(|(k, &p)| {
            let target = if k == label { 1.0 } else { 0.0 };
            scale * (p - target)
        }));

        let layers = self.arch.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for &(i, o) in &layers {
            offsets.push(offset);
            offset += i * o + o;
        }
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let base = offsets[l];
            let input = &ws.acts[l];
            for o in 0..fan_out {
                let d = ws.delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grad[base + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[base..base + fan_in * fan_out];
                ws.delta_prev.clear();
                ws.delta_prev.resize(fan_in, 0.0);
                for o in 0..fan_out {
                    let d = ws.delta[o];
                    for (dp, wi) in ws
                        .delta_prev
                        .iter_mut()
                        .zip(&w[o * fan_in..(o + 1) * fan_in])
                    {
                        *dp += d * wi;
                    }
                }
                for (dp, &a) in ws.delta_prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *dp = 0.0;
                    }
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
        loss
    }

    /// Cross-entropy of one sample.
    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        let probs = self.probabilities(x);
        -probs[label].max(f64::MIN_POSITIVE).ln()
    }

    /// Gradient of the single-sample cross-entropy with respect to all parameters.
    pub fn gradient(&self, x: &[f64], label: usize) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let mut ws = Workspace::default();
        self.accumulate_gradient(x, label, 1.0, &mut ws, &mut grad);
        grad
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_dims(model: &ClassifierModel, samples: &Samples) -> Result<(), NnError> {
    if samples.dim() != model.arch.input_dim {
        return Err(NnError::DimMismatch {
            expected: model.arch.input_dim,
            got: samples.dim(),
        });
    }
    Ok(())
}

/// N x C matrix of softmax outputs.
pub fn predict_proba(model: &ClassifierModel, samples: &Samples) -> Result<Array2<f64>, NnError> {
    check_dims(model, samples)?;
    let c = model.arch.classes;
    let mut out = Array2::zeros((samples.len(), c));
    let mut ws = Workspace::default();
    for (i, x) in samples.features().outer_iter().enumerate() {
        let x = x.as_slice().expect("row-major features");
        model.forward(x, &mut ws);
        for (k, p) in softmax(ClassifierModel::logits_of(&ws))
            .into_iter()
            .enumerate()
        {
            out[[i, k]] = p;
        }
    }
    Ok(out)
}

/// Row-wise argmax; ties resolve to the lowest class index.
pub fn argmax_rows(proba: &Array2<f64>) -> Vec<usize> {
    proba
        .outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &p)| {
                    if p > best.1 {
                        (k, p)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

pub fn predict_labels(model: &ClassifierModel, samples: &Samples) -> Result<Vec<usize>, NnError> {
    Ok(argmax_rows(&predict_proba(model, samples)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn parameter_layout() {
        let arch = Architecture::mlp(3, &[4, 5], 2);
        assert_eq!(arch.layers(), vec![(3, 4), (4, 5), (5, 2)]);
        assert_eq!(arch.num_params(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(Architecture::softmax_regression(6, 3).num_params(), 21);
    }

    #[test]
    fn zero_model_is_uniform() {
        let samples = Samples::new(array![[1.0, -2.0], [3.0, 0.5]], vec![0, 2], 3).unwrap();
        let model = ClassifierModel::zeros(Architecture::softmax_regression(2, 3));
        let p = predict_proba(&model, &samples).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(predict_labels(&model, &samples).unwrap(), vec![0, 0]);
    }

    #[test]
    fn rows_sum_to_one_and_argmax_agrees() {
        let samples = Samples::new(
            Array2::from_shape_fn((20, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0),
            vec![0; 20],
            3,
        )
        .unwrap();
        let model = ClassifierModel::init(Architecture::mlp(4, &[8], 3), 5);
        let p = predict_proba(&model, &samples).unwrap();
        for row in p.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        let labels = predict_labels(&model, &samples).unwrap();
        for (row, &l) in p.outer_iter().zip(&labels) {
            assert!(row.iter().all(|&v| v <= row[l]));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let samples = Samples::new(array![[1.0, 2.0, 3.0]], vec![0], 2).unwrap();
        let model = ClassifierModel::zeros(Architecture::softmax_regression(2, 2));
        assert!(matches!(
            predict_proba(&model, &samples),
            Err(NnError::DimMismatch {
                expected: 2,
                got: 3
            })
        ));
    }
}
