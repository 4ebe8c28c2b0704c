//! Brute-force oracles for the closed-form quantities. Each recomputes its
//! quantity with plain loops over `Vec`s and compares to the library;
//! nothing here calls the arithmetic it checks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::modes::{compute_weights, estimate_statistics, mutual_information, ConfusionMatrix};
use crate::nn::WeightedSampler;

pub const CLOSED_FORM_TOLERANCE: f64 = 1e-12;
pub const SAMPLER_SIGNIFICANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle supports at most {max} classes, got {got}")]
    TooManyClasses { max: usize, got: usize },
    #[error("count {0} exceeds the oracle's 10^6 limit")]
    CountTooLarge(u64),
    #[error("oracle supports at most 1000 distinct weights, got {0}")]
    TooManyWeights(usize),
    #[error("{0}")]
    Library(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleCheck {
    fn new(name: &str, max_abs_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            max_abs_error,
            tolerance,
            pass: max_abs_error <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&OracleCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    fn push(&mut self, name: &str, err: f64, tol: f64) {
        self.checks.push(OracleCheck::new(name, err, tol));
    }
}

fn max_diff(reference: &[Vec<f64>], got: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in reference.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let d = (v - got[[i, j]]).abs();
            worst = if d.is_nan() {
                f64::INFINITY
            } else {
                worst.max(d)
            };
        }
    }
    worst
}

fn max_diff_1d(reference: &[f64], got: &[f64]) -> f64 {
    reference
        .iter()
        .zip(got)
        .map(|(a, b)| (a - b).abs())
        .fold(
            0.0,
            |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) },
        )
}

/// Recomputes J, P, q, the class prior, W and w from the counts.
pub fn oracle_weights(m: &ConfusionMatrix) -> Result<OracleReport, OracleError> {
    let c = m.classes();
    if c > 6 {
        return Err(OracleError::TooManyClasses { max: 6, got: c });
    }
    let counts: Vec<Vec<u64>> = m.to_rows();
    if let Some(&big) = counts.iter().flatten().find(|&&v| v > 1_000_000) {
        return Err(OracleError::CountTooLarge(big));
    }

    let mut n = 0.0;
    for row in &counts {
        for &v in row {
            n += v as f64;
        }
    }
    let mut joint = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            joint[i][j] = counts[i][j] as f64 / n;
        }
    }
    let mut q = vec![0.0; c];
    let mut prior = vec![0.0; c];
    for i in 0..c {
        for j in 0..c {
            q[i] += joint[i][j];
            prior[j] += joint[i][j];
        }
    }
    let mut cond = vec![vec![0.0; c]; c];
    for j in 0..c {
        let mut column = 0u64;
        for row in &counts {
            column += row[j];
        }
        if column == 0 {
            continue;
        }
        for i in 0..c {
            cond[i][j] = counts[i][j] as f64 / column as f64;
        }
    }
    let mut big_w = vec![vec![0.0; c]; c];
    let mut small_w = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            if counts[i][j] > 0 {
                big_w[i][j] = q[i] / cond[i][j];
                small_w[i][j] = big_w[i][j] / counts[i][j] as f64;
            }
        }
    }

    let stats = estimate_statistics(m);
    let table = compute_weights(&stats, m);
    let mut report = OracleReport::default();
    let tol = CLOSED_FORM_TOLERANCE;
    report.push("joint", max_diff(&joint, &stats.joint), tol);
    report.push("conditional", max_diff(&cond, &stats.conditional), tol);
    report.push("marginal", max_diff_1d(&q, &stats.marginal.to_vec()), tol);
    report.push(
        "class_prior",
        max_diff_1d(&prior, &stats.class_prior.to_vec()),
        tol,
    );
    report.push("mode_weights", max_diff(&big_w, &table.mode_weights), tol);
    report.push(
        "sample_weights",
        max_diff(&small_w, &table.sample_weights),
        tol,
    );
    Ok(report)
}

/// Double-loop mutual information (nats) of a nonnegative joint, normalized first.
pub fn brute_force_mi(joint: &[Vec<f64>]) -> f64 {
    let rows = joint.len();
    let cols = joint.first().map_or(0, Vec::len);
    let mut total = 0.0;
    for row in joint {
        for &v in row {
            total += v;
        }
    }
    let mut r = vec![0.0; rows];
    let mut k = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            r[i] += joint[i][j] / total;
            k[j] += joint[i][j] / total;
        }
    }
    let mut mi = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let p = joint[i][j] / total;
            if p > 0.0 {
                mi += p * (p / (r[i] * k[j])).ln();
            }
        }
    }
    mi
}

pub fn oracle_mi(joint: &Array2<f64>) -> Result<OracleReport, OracleError> {
    let (rows, cols) = joint.dim();
    if rows.max(cols) > 6 {
        return Err(OracleError::TooManyClasses {
            max: 6,
            got: rows.max(cols),
        });
    }
    let plain: Vec<Vec<f64>> = (0..rows)
        .map(|i| (0..cols).map(|j| joint[[i, j]]).collect())
        .collect();
    let expected = brute_force_mi(&plain);
    let got = mutual_information(joint).map_err(|e| OracleError::Library(e.to_string()))?;
    let mut report = OracleReport::default();
    report.push(
        "mutual_information",
        (expected - got).abs(),
        CLOSED_FORM_TOLERANCE,
    );
    Ok(report)
}

/// Pearson chi-square of `draws` sampler draws against `weights / Σweights`.
/// The chi-square check's "error" is the statistic and its tolerance the
/// critical value at [`SAMPLER_SIGNIFICANCE`]; a second check counts draws
/// of zero-weight indices, which must be none.
pub fn oracle_sampler(
    weights: &[f64],
    draws: usize,
    seed: u64,
) -> Result<OracleReport, OracleError> {
    let mut distinct: Vec<u64> = weights.iter().map(|w| w.to_bits()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() > 1000 {
        return Err(OracleError::TooManyWeights(distinct.len()));
    }
    let mut sampler = WeightedSampler::new(weights.to_vec(), seed)
        .map_err(|e| OracleError::Library(e.to_string()))?;
    let mut counts = vec![0u64; weights.len()];
    for i in sampler.sample_indices(draws) {
        counts[i] += 1;
    }

    let total: f64 = weights.iter().sum();
    let mut stat = 0.0;
    let mut categories = 0usize;
    let mut zero_hits = 0u64;
    for (&w, &k) in weights.iter().zip(&counts) {
        if w == 0.0 {
            zero_hits += k;
            continue;
        }
        categories += 1;
        let expected = draws as f64 * w / total;
        stat += (k as f64 - expected).powi(2) / expected;
    }
    let critical = if categories < 2 {
        0.0
    } else {
        ChiSquared::new((categories - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(1.0 - SAMPLER_SIGNIFICANCE)
    };
    let mut report = OracleReport::default();
    report.push("chi_square", stat, critical);
    report.push("zero_weight_draws", zero_hits as f64, 0.0);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fixture_passes() {
        let m = ConfusionMatrix::from_rows(&[vec![95, 5], vec![5, 95]]).unwrap();
        let r = oracle_weights(&m).unwrap();
        assert!(r.pass(), "{:?}", r.failures());
        assert_eq!(r.checks.len(), 6);
    }

    #[test]
    fn zero_cells_share_the_convention() {
        let m =
            ConfusionMatrix::from_rows(&[vec![10, 0, 3], vec![0, 0, 4], vec![2, 0, 0]]).unwrap();
        assert!(oracle_weights(&m).unwrap().pass());
    }

    #[test]
    fn limits_are_enforced() {
        let m = ConfusionMatrix::from_counts(Array2::ones((7, 7))).unwrap();
        assert!(matches!(
            oracle_weights(&m),
            Err(OracleError::TooManyClasses { .. })
        ));
        let big = ConfusionMatrix::from_rows(&[vec![2_000_000, 1], vec![1, 1]]).unwrap();
        assert!(matches!(
            oracle_weights(&big),
            Err(OracleError::CountTooLarge(_))
        ));
    }

    #[test]
    fn mi_known_values() {
        let r = oracle_mi(&array![[0.5, 0.0], [0.0, 0.5]]).unwrap();
        assert!(r.pass());
        assert!((brute_force_mi(&[vec![0.5, 0.0], vec![0.0, 0.5]]) - 2f64.ln()).abs() < 1e-15);
        assert!(brute_force_mi(&[vec![0.06, 0.14], vec![0.24, 0.56]]).abs() < 1e-15);
    }

    #[test]
    fn sampler_uniform_and_one_hot() {
        assert!(oracle_sampler(&[1.0; 8], 100_000, 1).unwrap().pass());
        let r = oracle_sampler(&[0.0, 0.0, 3.0, 0.0], 10_000, 2).unwrap();
        assert!(r.pass(), "{r:?}");
    }
}
