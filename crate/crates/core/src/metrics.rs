//! Group accuracies, shortcut gaps, mode-prediction quality and feature
//! correlation diagnostics.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::LabeledDataset;
use crate::modes::ModeAssignment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dataset has no shortcut annotations")]
    NoShortcuts,
    #[error("shortcut gaps need exactly two shortcuts, found {0}")]
    NeedsTwoShortcuts(usize),
    #[error("no test samples in the `{0}` shortcut combination")]
    MissingCell(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

/// `[class, shortcut_1, .., shortcut_S]`.
pub type GroupKey = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IidWeighting {
    TrainFrequency,
    TestFrequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedAccuracy {
    pub per_group: BTreeMap<GroupKey, GroupStats>,
    pub class_accuracy: Vec<f64>,
    pub iid_acc: f64,
    pub wga: f64,
    pub per_class_worst: f64,
    pub weighting: IidWeighting,
}

/// Relative frequency of every group of a (training) dataset.
pub fn group_frequencies(ds: &LabeledDataset) -> Result<BTreeMap<GroupKey, f64>, MetricsError> {
    if ds.num_shortcuts() == 0 {
        return Err(MetricsError::NoShortcuts);
    }
    let mut counts: BTreeMap<GroupKey, usize> = BTreeMap::new();
    for i in 0..ds.len() {
        *counts.entry(group_key(ds, i)).or_default() += 1;
    }
    let n = ds.len() as f64;
    Ok(counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

fn group_key(ds: &LabeledDataset, i: usize) -> GroupKey {
    let mut key = Vec::with_capacity(1 + ds.num_shortcuts());
    key.push(ds.labels()[i]);
    key.extend(ds.shortcuts().row(i).iter());
    key
}

pub fn grouped_accuracy(
    pred: &[usize],
    ds: &LabeledDataset,
    train_freqs: Option<&BTreeMap<GroupKey, f64>>,
) -> Result<GroupedAccuracy, MetricsError> {
    if ds.num_shortcuts() == 0 {
        return Err(MetricsError::NoShortcuts);
    }
    if pred.len() != ds.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), ds.len()));
    }
    let mut per_group: BTreeMap<GroupKey, GroupStats> = BTreeMap::new();
    let mut class_counts = vec![(0usize, 0usize); ds.classes()];
    for (i, &p) in pred.iter().enumerate() {
        let y = ds.labels()[i];
        let hit = usize::from(p == y);
        let g = per_group.entry(group_key(ds, i)).or_insert(GroupStats {
            count: 0,
            correct: 0,
            accuracy: 0.0,
        });
        g.count += 1;
        g.correct += hit;
        class_counts[y].0 += 1;
        class_counts[y].1 += hit;
    }
    for g in per_group.values_mut() {
        g.accuracy = g.correct as f64 / g.count as f64;
    }

    let (weighting, iid_acc) = match train_freqs {
        Some(freqs) => {
            let (num, den) = per_group.iter().fold((0.0, 0.0), |(num, den), (k, g)| {
                let f = freqs.get(k).copied().unwrap_or(0.0);
                (num + f * g.accuracy, den + f)
            });
            let acc = if den > 0.0 { num / den } else { 0.0 };
            (IidWeighting::TrainFrequency, acc)
        }
        None => {
            let correct: usize = per_group.values().map(|g| g.correct).sum();
            (
                IidWeighting::TestFrequency,
                correct as f64 / pred.len() as f64,
            )
        }
    };
    let wga = per_group.values().map(|g| g.accuracy).fold(1.0, f64::min);
    let class_accuracy: Vec<f64> = class_counts
        .iter()
        .map(|&(n, c)| {
            if n == 0 {
                f64::NAN
            } else {
                c as f64 / n as f64
            }
        })
        .collect();
    let per_class_worst = class_accuracy
        .iter()
        .copied()
        .filter(|a| !a.is_nan())
        .fold(1.0, f64::min);
    Ok(GroupedAccuracy {
        per_group,
        class_accuracy,
        iid_acc,
        wga,
        per_class_worst,
        weighting,
    })
}

/// Per-class accuracy on labels alone; classes without samples are skipped.
pub fn worst_class_accuracy(pred: &[usize], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let mut counts = vec![(0usize, 0usize); classes];
    for (&p, &y) in pred.iter().zip(labels) {
        counts[y].0 += 1;
        counts[y].1 += usize::from(p == y);
    }
    let per_class: Vec<f64> = counts
        .iter()
        .map(|&(n, c)| {
            if n == 0 {
                f64::NAN
            } else {
                c as f64 / n as f64
            }
        })
        .collect();
    let worst = per_class
        .iter()
        .copied()
        .filter(|a| !a.is_nan())
        .fold(1.0, f64::min);
    (worst, per_class)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortcutGaps {
    pub id_acc: f64,
    /// First shortcut uncommon, second common.
    pub gap_a: f64,
    /// Second shortcut uncommon, first common.
    pub gap_b: f64,
    pub gap_both: f64,
}

/// Accuracy drops from the in-distribution accuracy to the groups where one
/// or both shortcuts are uncommon (shortcut value differs from the class).
pub fn shortcut_gaps(grouped: &GroupedAccuracy) -> Result<ShortcutGaps, MetricsError> {
    let s = grouped.per_group.keys().next().map_or(0, |k| k.len() - 1);
    if s != 2 {
        return Err(MetricsError::NeedsTwoShortcuts(s));
    }
    let pooled = |a_common: bool, b_common: bool, name: &'static str| {
        let (count, correct) = grouped
            .per_group
            .iter()
            .filter(|(k, _)| (k[1] == k[0]) == a_common && (k[2] == k[0]) == b_common)
            .fold((0, 0), |(n, c), (_, g)| (n + g.count, c + g.correct));
        if count == 0 {
            Err(MetricsError::MissingCell(name))
        } else {
            Ok(correct as f64 / count as f64)
        }
    };
    let id_acc = grouped.iid_acc;
    Ok(ShortcutGaps {
        id_acc,
        gap_a: pooled(false, true, "first uncommon")? - id_acc,
        gap_b: pooled(true, false, "second uncommon")? - id_acc,
        gap_both: pooled(false, false, "both uncommon")? - id_acc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeScore {
    pub bias: usize,
    pub class: usize,
    /// Ground-truth samples in the mode.
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeQuality {
    pub per_mode: Vec<ModeScore>,
    /// The mode with the fewest ground-truth samples (ties: lowest `(bias, class)`).
    pub smallest: ModeScore,
    pub overall_accuracy: f64,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-vs-rest precision, recall and F1 of predicted modes against truth.
pub fn mode_quality(
    pred: &[ModeAssignment],
    truth: &[ModeAssignment],
) -> Result<ModeQuality, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::TooFewSamples { needed: 1, got: 0 });
    }
    #[derive(Default)]
    struct Tally {
        support: usize,
        predicted: usize,
        hits: usize,
    }
    let mut tallies: BTreeMap<ModeAssignment, Tally> = BTreeMap::new();
    let mut correct = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        tallies.entry(t).or_default().support += 1;
        tallies.entry(p).or_default().predicted += 1;
        if p == t {
            tallies.entry(t).or_default().hits += 1;
            correct += 1;
        }
    }
    let per_mode: Vec<ModeScore> = tallies
        .iter()
        .map(|(m, t)| {
            let precision = if t.predicted == 0 {
                0.0
            } else {
                t.hits as f64 / t.predicted as f64
            };
            let recall = if t.support == 0 {
                0.0
            } else {
                t.hits as f64 / t.support as f64
            };
            ModeScore {
                bias: m.bias,
                class: m.class,
                support: t.support,
                predicted: t.predicted,
                precision,
                recall,
                f1: f1(precision, recall),
            }
        })
        .collect();
    let smallest = *per_mode
        .iter()
        .filter(|s| s.support > 0)
        .min_by_key(|s| (s.support, s.bias, s.class))
        .expect("at least one mode has support");
    Ok(ModeQuality {
        per_mode,
        smallest,
        overall_accuracy: correct as f64 / pred.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionCorrelation {
    pub class_corr: f64,
    pub bias_corr: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}

fn max_indicator_corr(column: &[f64], labels: &[usize], classes: usize) -> f64 {
    (0..classes)
        .map(|c| {
            let ind: Vec<f64> = labels
                .iter()
                .map(|&l| if l == c { 1.0 } else { 0.0 })
                .collect();
            pearson(column, &ind).abs()
        })
        .fold(0.0, f64::max)
}

/// For each feature dimension, the largest absolute Pearson correlation with
/// a one-hot indicator of the class and of the bias label. Constant
/// dimensions (or constant labels) score 0.
pub fn correlation_profile(
    features: &Array2<f64>,
    labels: &[usize],
    bias_labels: &[usize],
    classes: usize,
) -> Result<Vec<DimensionCorrelation>, MetricsError> {
    let n = features.nrows();
    if n < 3 {
        return Err(MetricsError::TooFewSamples { needed: 3, got: n });
    }
    if labels.len() != n {
        return Err(MetricsError::LengthMismatch(labels.len(), n));
    }
    if bias_labels.len() != n {
        return Err(MetricsError::LengthMismatch(bias_labels.len(), n));
    }
    Ok(features
        .columns()
        .into_iter()
        .map(|col| {
            let col = col.to_vec();
            DimensionCorrelation {
                class_corr: max_indicator_corr(&col, labels, classes),
                bias_corr: max_indicator_corr(&col, bias_labels, classes),
            }
        })
        .collect())
}

/// Mode frequencies among drawn sample indices.
pub fn empirical_joint_from_sampler(
    draws: &[usize],
    modes: &[ModeAssignment],
    classes: usize,
) -> Result<Array2<f64>, MetricsError> {
    if draws.is_empty() {
        return Err(MetricsError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut joint = Array2::<f64>::zeros((classes, classes));
    for &d in draws {
        let m = modes[d];
        joint[[m.bias, m.class]] += 1.0;
    }
    Ok(joint / draws.len() as f64)
}
