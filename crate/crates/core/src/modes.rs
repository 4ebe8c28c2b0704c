//! Discrete algebra over modes, the cells `(s, y)` of a hard confusion matrix
//! between bias labels `s` and class labels `y`.
//!
//! Rows are always indexed by the bias label and columns by the class label.
//! From the counts `M` we estimate the joint `J = M / N`, the class-conditional
//! bias distributions `P[:, j] = J[:, j] / sum_i J[i, j]` and the bias marginal
//! `q = sum_j J[:, j]`. Mode multipliers `W = q / P` align every
//! class-conditional with the marginal, and the per-sample weights
//! `w = W / M` spread each multiplier uniformly over the samples of its mode.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("label {label} at sample {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("no samples")]
    EmptyInput,
    #[error("bias labels ({bias}) and class labels ({class}) differ in length")]
    LengthMismatch { bias: usize, class: usize },
    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("matrix shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("entry ({row}, {col}) = {value} is not a valid probability mass")]
    NotADistribution { row: usize, col: usize, value: f64 },
    #[error("reweighted joint has zero total mass")]
    DegenerateWeights,
}

/// One sample's mode: its (predicted or annotated) bias label and its class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeAssignment {
    pub bias: usize,
    pub class: usize,
}

impl ModeAssignment {
    pub fn new(bias: usize, class: usize) -> Self {
        Self { bias, class }
    }
}

/// Pairs up bias and class labels sample by sample.
pub fn assignments(bias: &[usize], class: &[usize]) -> Result<Vec<ModeAssignment>, ModeError> {
    if bias.len() != class.len() {
        return Err(ModeError::LengthMismatch {
            bias: bias.len(),
            class: class.len(),
        });
    }
    Ok(bias
        .iter()
        .zip(class)
        .map(|(&s, &y)| ModeAssignment::new(s, y))
        .collect())
}

/// Hard confusion matrix of mode counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Array2<u64>) -> Result<Self, ModeError> {
        let (rows, cols) = counts.dim();
        if rows != cols {
            return Err(ModeError::ShapeMismatch {
                expected: (cols, cols),
                got: (rows, cols),
            });
        }
        if rows < 2 {
            return Err(ModeError::TooFewClasses(rows));
        }
        let total = counts.sum();
        if total == 0 {
            return Err(ModeError::EmptyInput);
        }
        Ok(Self { counts, total })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, ModeError> {
        let c = rows.len();
        let mut counts = Array2::zeros((c, c));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(ModeError::ShapeMismatch {
                    expected: (c, c),
                    got: (c, row.len()),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                counts[[i, j]] = v;
            }
        }
        Self::from_counts(counts)
    }

    pub fn classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn get(&self, bias: usize, class: usize) -> u64 {
        self.counts[[bias, class]]
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.counts.outer_iter().map(|r| r.to_vec()).collect()
    }
}

/// Counts samples per mode. `classes` fixes the size of both label spaces.
pub fn build_confusion(
    bias: &[usize],
    class: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, ModeError> {
    if bias.len() != class.len() {
        return Err(ModeError::LengthMismatch {
            bias: bias.len(),
            class: class.len(),
        });
    }
    if bias.is_empty() {
        return Err(ModeError::EmptyInput);
    }
    if classes < 2 {
        return Err(ModeError::TooFewClasses(classes));
    }
    let mut counts = Array2::<u64>::zeros((classes, classes));
    for (index, (&s, &y)) in bias.iter().zip(class).enumerate() {
        for label in [s, y] {
            if label >= classes {
                return Err(ModeError::LabelOutOfRange {
                    index,
                    label,
                    classes,
                });
            }
        }
        counts[[s, y]] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

/// Joint, class-conditional and marginal distributions estimated from a
/// confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeStatistics {
    /// The counts `M` everything below was derived from.
    pub counts: Array2<u64>,
    pub joint: Array2<f64>,
    /// Column `j` is the bias distribution given class `j`; all-zero for empty classes.
    pub conditional: Array2<f64>,
    /// Bias marginal (row sums of the joint).
    pub marginal: Array1<f64>,
    /// Class marginal (column sums of the joint).
    pub class_prior: Array1<f64>,
    pub empty_classes: Vec<usize>,
}

impl ModeStatistics {
    pub fn classes(&self) -> usize {
        self.joint.nrows()
    }
}

pub fn estimate_statistics(m: &ConfusionMatrix) -> ModeStatistics {
    let c = m.classes();
    let n = m.total() as f64;
    let joint = m.counts().mapv(|v| v as f64 / n);
    let marginal: Array1<f64> = joint.rows().into_iter().map(|r| r.sum()).collect();
    let class_prior: Array1<f64> = joint.columns().into_iter().map(|col| col.sum()).collect();

    let mut conditional = Array2::<f64>::zeros((c, c));
    let mut empty_classes = Vec::new();
    for j in 0..c {
        let col_count: u64 = m.counts().column(j).sum();
        if col_count == 0 {
            empty_classes.push(j);
            continue;
        }
        for i in 0..c {
            conditional[[i, j]] = joint[[i, j]] / class_prior[j];
        }
    }
    ModeStatistics {
        counts: m.counts().clone(),
        joint,
        conditional,
        marginal,
        class_prior,
        empty_classes,
    }
}

/// Mode multipliers `W`, per-sample weights `w` and the degeneracy flags.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub mode_weights: Array2<f64>,
    pub sample_weights: Array2<f64>,
    /// Modes with no samples; their weights are zero.
    pub empty_modes: Vec<(usize, usize)>,
    /// `matchable[j]` is false when column `j` cannot be matched to the
    /// marginal because some bias value with marginal mass has no samples there.
    pub matchable: Vec<bool>,
}

impl WeightTable {
    pub fn classes(&self) -> usize {
        self.mode_weights.nrows()
    }

    pub fn all_matchable(&self) -> bool {
        self.matchable.iter().all(|&m| m)
    }

    pub fn weight_of(&self, mode: ModeAssignment) -> f64 {
        self.sample_weights[[mode.bias, mode.class]]
    }

    /// Per column `max_i |W[i, j] * P[i, j] - q[i]|`.
    pub fn residual_mismatch(&self, stats: &ModeStatistics) -> Vec<f64> {
        let c = self.classes();
        (0..c)
            .map(|j| {
                (0..c)
                    .map(|i| {
                        (self.mode_weights[[i, j]] * stats.conditional[[i, j]] - stats.marginal[i])
                            .abs()
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Class masses realized when each sample is drawn with its per-sample
    /// weight: `sum_i W[i, j]` over nonempty modes.
    pub fn realized_class_masses(&self) -> Vec<f64> {
        self.mode_weights
            .columns()
            .into_iter()
            .map(|col| col.sum())
            .collect()
    }

    /// Ratio between the largest and the smallest positive per-sample weight.
    pub fn max_min_weight_ratio(&self) -> f64 {
        let positive = self.sample_weights.iter().copied().filter(|&w| w > 0.0);
        let (lo, hi) = positive.fold((f64::INFINITY, 0.0_f64), |(lo, hi), w| {
            (lo.min(w), hi.max(w))
        });
        if hi == 0.0 {
            0.0
        } else {
            hi / lo
        }
    }
}

pub fn compute_weights(stats: &ModeStatistics, m: &ConfusionMatrix) -> WeightTable {
    let c = m.classes();
    let mut mode_weights = Array2::<f64>::zeros((c, c));
    let mut sample_weights = Array2::<f64>::zeros((c, c));
    let mut empty_modes = Vec::new();
    let mut matchable = vec![true; c];
    for j in 0..c {
        for i in 0..c {
            let count = m.get(i, j);
            if count == 0 {
                empty_modes.push((i, j));
                if stats.marginal[i] > 0.0 {
                    matchable[j] = false;
                }
                continue;
            }
            let multiplier = stats.marginal[i] / stats.conditional[[i, j]];
            mode_weights[[i, j]] = multiplier;
            sample_weights[[i, j]] = multiplier / count as f64;
        }
    }
    empty_modes.sort_unstable();
    WeightTable {
        mode_weights,
        sample_weights,
        empty_modes,
        matchable,
    }
}

/// `normalize(W ⊙ J)`: the joint seen when every sample of mode `(i, j)` is
/// scaled by the multiplier `W[i, j]`. Evaluated as `normalize(W ⊙ M)`, which
/// is the same quantity with one rounding fewer per cell.
pub fn reweighted_joint(
    stats: &ModeStatistics,
    wt: &WeightTable,
) -> Result<Array2<f64>, ModeError> {
    if stats.joint.dim() != wt.mode_weights.dim() {
        return Err(ModeError::ShapeMismatch {
            expected: stats.joint.dim(),
            got: wt.mode_weights.dim(),
        });
    }
    let scaled = &wt.mode_weights * &stats.counts.mapv(|v| v as f64);
    let total = scaled.sum();
    if total.is_nan() || total <= 0.0 {
        return Err(ModeError::DegenerateWeights);
    }
    Ok(scaled / total)
}

/// Mutual information (nats) of a joint distribution given as a matrix.
/// The input is renormalized; zero cells contribute nothing.
pub fn mutual_information(joint: &Array2<f64>) -> Result<f64, ModeError> {
    for ((row, col), &value) in joint.indexed_iter() {
        if !value.is_finite() || value < 0.0 {
            return Err(ModeError::NotADistribution { row, col, value });
        }
    }
    let total = joint.sum();
    if total <= 0.0 {
        return Err(ModeError::EmptyInput);
    }
    let p = joint / total;
    let rows: Vec<f64> = p.rows().into_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = p.columns().into_iter().map(|c| c.sum()).collect();
    let mi: f64 = p
        .indexed_iter()
        .filter(|(_, &v)| v > 0.0)
        .map(|((i, j), &v)| v * (v / (rows[i] * cols[j])).ln())
        .sum();
    Ok(mi.max(0.0))
}

/// Looks up each sample's weight from its mode.
pub fn per_sample_weights(wt: &WeightTable, modes: &[ModeAssignment]) -> Vec<f64> {
    modes.iter().map(|&m| wt.weight_of(m)).collect()
}

/// Each sample weighted by its mode multiplier `W[s, y]`; drawing with these
/// weights realizes `normalize(W ⊙ J)` as the empirical joint.
pub fn per_sample_multipliers(wt: &WeightTable, modes: &[ModeAssignment]) -> Vec<f64> {
    modes
        .iter()
        .map(|m| wt.mode_weights[[m.bias, m.class]])
        .collect()
}

pub fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn fixture() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[vec![95, 5], vec![5, 95]]).unwrap()
    }

    #[test]
    fn counts_each_mode() {
        let m = build_confusion(&[0, 0, 1, 1], &[0, 1, 1, 0], 2).unwrap();
        assert_eq!(m.counts(), &array![[1, 1], [1, 1]]);
        let m = build_confusion(&[0, 0, 0], &[0, 0, 0], 2).unwrap();
        assert_eq!(m.counts(), &array![[3, 0], [0, 0]]);
    }

    #[test]
    fn counts_constructed_label_list() {
        let mut s = Vec::new();
        let mut y = Vec::new();
        for (i, j, n) in [(0, 0, 95), (0, 1, 5), (1, 0, 5), (1, 1, 95)] {
            s.extend(std::iter::repeat_n(i, n));
            y.extend(std::iter::repeat_n(j, n));
        }
        let m = build_confusion(&s, &y, 2).unwrap();
        assert_eq!(m, fixture());
        assert_eq!(m.total(), 200);
    }

    #[test]
    fn rejects_bad_labels() {
        assert_eq!(
            build_confusion(&[0, 2], &[0, 1], 2),
            Err(ModeError::LabelOutOfRange {
                index: 1,
                label: 2,
                classes: 2
            })
        );
        assert_eq!(build_confusion(&[], &[], 2), Err(ModeError::EmptyInput));
        assert!(matches!(
            build_confusion(&[0], &[0, 1], 2),
            Err(ModeError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn statistics_of_fixtures() {
        let st = estimate_statistics(&fixture());
        assert_abs_diff_eq!(
            st.joint,
            array![[0.475, 0.025], [0.025, 0.475]],
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            st.conditional,
            array![[0.95, 0.05], [0.05, 0.95]],
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(st.marginal, array![0.5, 0.5], epsilon = 1e-15);

        let st = estimate_statistics(
            &ConfusionMatrix::from_rows(&[vec![90, 30], vec![10, 70]]).unwrap(),
        );
        assert_abs_diff_eq!(
            st.conditional,
            array![[0.9, 0.3], [0.1, 0.7]],
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(st.marginal, array![0.6, 0.4], epsilon = 1e-15);
        assert_abs_diff_eq!(st.class_prior, array![0.5, 0.5], epsilon = 1e-15);
    }

    #[test]
    fn empty_class_leaves_zero_column() {
        let m = ConfusionMatrix::from_rows(&[vec![3, 0, 1], vec![2, 0, 1], vec![0, 0, 5]]).unwrap();
        let st = estimate_statistics(&m);
        assert_eq!(st.empty_classes, vec![1]);
        assert!(st.conditional.column(1).iter().all(|&v| v == 0.0));
        let wt = compute_weights(&st, &m);
        assert_eq!(wt.matchable, vec![false, false, true]);
        assert!(wt.mode_weights.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_of_fixture() {
        let m = fixture();
        let st = estimate_statistics(&m);
        let wt = compute_weights(&st, &m);
        assert_abs_diff_eq!(
            wt.mode_weights,
            array![[10.0 / 19.0, 10.0], [10.0, 10.0 / 19.0]],
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            wt.sample_weights,
            array![[0.005540166204986149, 2.0], [2.0, 0.005540166204986149]],
            epsilon = 1e-15
        );
        assert!(wt.all_matchable());
        assert!(wt.empty_modes.is_empty());
        for r in wt.residual_mismatch(&st) {
            assert!(r <= 1e-15);
        }
        assert_abs_diff_eq!(wt.max_min_weight_ratio(), 361.0, epsilon = 1e-9);
    }

    #[test]
    fn unbiased_counts_give_unit_multipliers() {
        let m = ConfusionMatrix::from_rows(&[vec![50, 50], vec![50, 50]]).unwrap();
        let st = estimate_statistics(&m);
        let wt = compute_weights(&st, &m);
        assert_abs_diff_eq!(wt.mode_weights, Array2::ones((2, 2)), epsilon = 1e-15);
        assert_abs_diff_eq!(
            wt.sample_weights,
            Array2::from_elem((2, 2), 0.02),
            epsilon = 1e-15
        );
        let rj = reweighted_joint(&st, &wt).unwrap();
        assert_abs_diff_eq!(rj, st.joint, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_counts_are_unmatchable() {
        let m = ConfusionMatrix::from_rows(&[vec![100, 0], vec![0, 100]]).unwrap();
        let st = estimate_statistics(&m);
        let wt = compute_weights(&st, &m);
        assert_eq!(wt.mode_weights, array![[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(wt.matchable, vec![false, false]);
        assert_eq!(wt.empty_modes, vec![(0, 1), (1, 0)]);
        assert_abs_diff_eq!(wt.residual_mismatch(&st)[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn reweighted_joint_is_product_of_marginals() {
        let st = estimate_statistics(&fixture());
        let wt = compute_weights(&st, &fixture());
        let rj = reweighted_joint(&st, &wt).unwrap();
        assert!(rj.iter().all(|&v| v == 0.25), "{rj}");

        let m = ConfusionMatrix::from_rows(&[vec![90, 30], vec![10, 70]]).unwrap();
        let st = estimate_statistics(&m);
        let rj = reweighted_joint(&st, &compute_weights(&st, &m)).unwrap();
        assert_abs_diff_eq!(rj, array![[0.3, 0.3], [0.2, 0.2]], epsilon = 1e-15);
        assert!(mutual_information(&rj).unwrap() <= 1e-15);
    }

    #[test]
    fn mutual_information_values() {
        let prod = outer(&array![0.6, 0.4], &array![0.5, 0.5]);
        assert_abs_diff_eq!(mutual_information(&prod).unwrap(), 0.0, epsilon = 1e-15);
        let diag = array![[0.5, 0.0], [0.0, 0.5]];
        assert_abs_diff_eq!(
            mutual_information(&diag).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        // 40-digit reference: 0.49463193721407275299...
        let st = estimate_statistics(&fixture());
        assert_abs_diff_eq!(
            mutual_information(&st.joint).unwrap(),
            0.4946319372140728,
            epsilon = 1e-14
        );
        assert!(matches!(
            mutual_information(&array![[0.5, -0.1], [0.3, 0.3]]),
            Err(ModeError::NotADistribution { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn sample_weights_follow_modes() {
        let m = fixture();
        let st = estimate_statistics(&m);
        let wt = compute_weights(&st, &m);
        let modes = [
            ModeAssignment::new(0, 0),
            ModeAssignment::new(0, 0),
            ModeAssignment::new(0, 1),
        ];
        let w = per_sample_weights(&wt, &modes);
        assert_eq!(w[0], w[1]);
        assert_abs_diff_eq!(w[0], 0.0055402, epsilon = 1e-7);
        assert_eq!(w[2], 2.0);
        let mult = per_sample_multipliers(&wt, &modes);
        assert_abs_diff_eq!(mult[2], 10.0, epsilon = 1e-12);
    }
}
