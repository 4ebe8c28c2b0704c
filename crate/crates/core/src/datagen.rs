//! Synthetic biased classification data.
//!
//! Every sample is `concat(core(c), spurious_1(s_1), ..)` plus isotropic
//! Gaussian noise, where `c` is the class and `s_k` the value of shortcut `k`.
//! Prototypes sit on scaled coordinate axes: value `v` maps to `sep * e_v`
//! truncated to the block width. Within each class, exactly `round(rho * n)`
//! samples carry the aligned shortcut value (`s = c`); the rest cycle
//! deterministically over the other classes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    ConfigInvalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Shape(String),
}

/// Features and class labels: everything a learner may look at.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    features: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Samples {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(DataError::Shape(format!(
                "label {y} of sample {i} is outside [0, {classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Shape("non-finite feature".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> Samples {
        Samples {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Samples plus ground-truth shortcut labels, which only evaluation code reads.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    samples: Samples,
    /// N x S, one column per shortcut attribute.
    shortcuts: Array2<usize>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        samples: Samples,
        shortcuts: Array2<usize>,
    ) -> Result<Self, DataError> {
        if shortcuts.nrows() != samples.len() {
            return Err(DataError::Shape(format!(
                "{} shortcut rows but {} samples",
                shortcuts.nrows(),
                samples.len()
            )));
        }
        if shortcuts.iter().any(|&s| s >= samples.classes()) {
            return Err(DataError::Shape("shortcut label out of range".into()));
        }
        Ok(Self {
            name: name.into(),
            samples,
            shortcuts,
        })
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn into_samples(self) -> Samples {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn classes(&self) -> usize {
        self.samples.classes()
    }

    pub fn labels(&self) -> &[usize] {
        self.samples.labels()
    }

    pub fn num_shortcuts(&self) -> usize {
        self.shortcuts.ncols()
    }

    pub fn shortcuts(&self) -> &Array2<usize> {
        &self.shortcuts
    }

    pub fn shortcut_column(&self, k: usize) -> Vec<usize> {
        self.shortcuts.column(k).to_vec()
    }

    pub fn without_shortcuts(&self) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            samples: self.samples.clone(),
            shortcuts: Array2::zeros((self.len(), 0)),
        }
    }

    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            samples: self.samples.select(indices),
            shortcuts: self.shortcuts.select(Axis(0), indices),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub classes: usize,
    /// Samples per class in each split.
    pub per_class: SplitSizes,
    /// Bias-aligned fraction per shortcut; one entry per shortcut.
    pub rho: Vec<f64>,
    pub core_dim: usize,
    pub spur_dim: usize,
    pub core_sep: f64,
    pub spur_sep: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Draw the test split with every shortcut independent of the class.
    pub test_unbiased: bool,
}

impl GeneratorConfig {
    /// Single-shortcut benchmark: two classes, 2000 training samples per
    /// class, 95% aligned, spurious separation 4 and core separation 1.5
    /// noise units.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            classes: 2,
            per_class: SplitSizes {
                train: 2000,
                val: 500,
                test: 1000,
            },
            rho: vec![0.95],
            core_dim: 2,
            spur_dim: 2,
            core_sep: 1.5,
            spur_sep: 4.0,
            noise_std: 1.0,
            seed,
            test_unbiased: true,
        }
    }

    /// Two-shortcut variant of [`GeneratorConfig::benchmark`].
    pub fn two_shortcut_benchmark(seed: u64) -> Self {
        Self {
            rho: vec![0.95, 0.95],
            ..Self::benchmark(seed)
        }
    }

    pub fn num_shortcuts(&self) -> usize {
        self.rho.len()
    }

    pub fn dim(&self) -> usize {
        self.core_dim + self.spur_dim * self.rho.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::ConfigInvalid(m));
        if self.classes < 2 {
            return bad(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.rho.is_empty() || self.rho.len() > 2 {
            return bad(format!(
                "rho must have 1 or 2 entries, got {}",
                self.rho.len()
            ));
        }
        for (k, &r) in self.rho.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("rho[{k}] = {r} is outside (0, 1]"));
            }
        }
        if self.core_dim == 0 || self.spur_dim == 0 {
            return bad("core_dim and spur_dim must be at least 1".into());
        }
        if self.per_class.train == 0 || self.per_class.val == 0 || self.per_class.test == 0 {
            return bad("per_class split sizes must be positive".into());
        }
        for (key, v) in [
            ("core_sep", self.core_sep),
            ("spur_sep", self.spur_sep),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{key} = {v} must be finite and nonnegative"));
            }
        }
        if self.noise_std == 0.0 {
            return bad("noise_std must be positive".into());
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.spur_sep <= self.core_sep {
            out.push(format!(
                "spur_sep ({}) <= core_sep ({}): the shortcut is not easier to learn than the core feature",
                self.spur_sep, self.core_sep
            ));
        }
        for (k, &r) in self.rho.iter().enumerate() {
            let conflicting = self.per_class.train as f64 * (1.0 - r);
            if r < 1.0 && conflicting.round() < (self.classes - 1) as f64 {
                out.push(format!(
                    "rho[{k}] leaves some minority modes empty in the training split"
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = (Split, &LabeledDataset)> {
        [
            (Split::Train, &self.train),
            (Split::Val, &self.val),
            (Split::Test, &self.test),
        ]
        .into_iter()
    }
}

/// Per-class counts of the aligned/conflicting combinations.
///
/// One shortcut: `[aligned, conflicting]`. Two shortcuts:
/// `[both aligned, first aligned only, second aligned only, both conflicting]`.
pub fn cell_counts(n: usize, rho: &[f64]) -> Vec<usize> {
    let nf = n as f64;
    match rho {
        [r] => {
            let aligned = (r * nf).round() as usize;
            vec![aligned, n - aligned]
        }
        [r1, r2] => {
            let raw = [
                r1 * r2 * nf,
                r1 * (1.0 - r2) * nf,
                (1.0 - r1) * r2 * nf,
                (1.0 - r1) * (1.0 - r2) * nf,
            ];
            let mut cells: Vec<i64> = raw.iter().map(|v| v.round() as i64).collect();
            let remainder = n as i64 - cells.iter().sum::<i64>();
            let largest = (0..4)
                .max_by(|&a, &b| cells[a].cmp(&cells[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            cells[largest] += remainder;
            cells.into_iter().map(|c| c.max(0) as usize).collect()
        }
        _ => panic!("cell_counts supports one or two shortcuts"),
    }
}

fn conflicting_value(class: usize, k: usize, classes: usize) -> usize {
    (class + 1 + k % (classes - 1)) % classes
}

/// Shortcut values for the samples of one class, in dataset order.
fn shortcut_plan(class: usize, n: usize, rho: &[f64], classes: usize) -> Vec<Vec<usize>> {
    let cells = cell_counts(n, rho);
    let mut plan = Vec::with_capacity(n);
    let mut next_conflict = vec![0usize; rho.len()];
    let mut pick = |k: usize, aligned: bool| {
        if aligned {
            class
        } else {
            let v = conflicting_value(class, next_conflict[k], classes);
            next_conflict[k] += 1;
            v
        }
    };
    match rho.len() {
        1 => {
            for (cell, &count) in cells.iter().enumerate() {
                for _ in 0..count {
                    plan.push(vec![pick(0, cell == 0)]);
                }
            }
        }
        _ => {
            let pattern = [(true, true), (true, false), (false, true), (false, false)];
            for (&(a1, a2), &count) in pattern.iter().zip(&cells) {
                for _ in 0..count {
                    let s1 = pick(0, a1);
                    let s2 = pick(1, a2);
                    plan.push(vec![s1, s2]);
                }
            }
        }
    }
    plan
}

fn write_prototype(row: &mut [f64], value: usize, sep: f64) {
    if value < row.len() {
        row[value] = sep;
    }
}

fn generate_split(cfg: &GeneratorConfig, split: Split) -> LabeledDataset {
    let n = match split {
        Split::Train => cfg.per_class.train,
        Split::Val => cfg.per_class.val,
        Split::Test => cfg.per_class.test,
    };
    let rho: Vec<f64> = if split == Split::Test && cfg.test_unbiased {
        vec![1.0 / cfg.classes as f64; cfg.rho.len()]
    } else {
        cfg.rho.clone()
    };
    let total = n * cfg.classes;
    let dim = cfg.dim();
    let mut features = Array2::<f64>::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut shortcuts = Array2::<usize>::zeros((total, rho.len()));

    let mut row_idx = 0;
    for class in 0..cfg.classes {
        for (i, values) in shortcut_plan(class, n, &rho, cfg.classes)
            .into_iter()
            .enumerate()
        {
            let mut row = features.row_mut(row_idx);
            let row = row.as_slice_mut().expect("row-major features");
            write_prototype(&mut row[..cfg.core_dim], class, cfg.core_sep);
            for (k, &v) in values.iter().enumerate() {
                let start = cfg.core_dim + k * cfg.spur_dim;
                write_prototype(&mut row[start..start + cfg.spur_dim], v, cfg.spur_sep);
                shortcuts[[row_idx, k]] = v;
            }
            let mut noise = rng::stream(cfg.seed, &[split.tag(), class as u64, i as u64]);
            for x in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut noise);
                *x += cfg.noise_std * z;
            }
            labels.push(class);
            row_idx += 1;
        }
    }
    let samples = Samples::new(features, labels, cfg.classes).expect("generated samples are valid");
    LabeledDataset::new(split.name(), samples, shortcuts).expect("generated shortcuts are valid")
}

/// Generates train/val/test splits for one or two shortcuts.
pub fn generate(cfg: &GeneratorConfig) -> Result<Splits, DataError> {
    cfg.validate()?;
    Ok(Splits {
        train: generate_split(cfg, Split::Train),
        val: generate_split(cfg, Split::Val),
        test: generate_split(cfg, Split::Test),
    })
}

pub fn generate_single_shortcut(cfg: &GeneratorConfig) -> Result<Splits, DataError> {
    if cfg.rho.len() != 1 {
        return Err(DataError::ConfigInvalid(format!(
            "single-shortcut generation needs exactly one rho, got {}",
            cfg.rho.len()
        )));
    }
    generate(cfg)
}

pub fn generate_multi_shortcut(cfg: &GeneratorConfig) -> Result<Splits, DataError> {
    if cfg.rho.len() != 2 {
        return Err(DataError::ConfigInvalid(format!(
            "two-shortcut generation needs exactly two rho values, got {}",
            cfg.rho.len()
        )));
    }
    generate(cfg)
}

pub const DATASET_MAGIC: &str = "#dbforge-dataset v1";

pub fn format_dataset(ds: &LabeledDataset) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{DATASET_MAGIC} n={} d={} c={} shortcuts={}",
        ds.len(),
        ds.dim(),
        ds.classes(),
        ds.num_shortcuts()
    )
    .unwrap();
    for i in 0..ds.len() {
        let mut first = true;
        for v in ds.samples.row(i) {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        write!(out, ",{}", ds.labels()[i]).unwrap();
        for s in ds.shortcuts.row(i) {
            write!(out, ",{s}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn format_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Format {
        line,
        message: message.into(),
    }
}

fn header_field(token: Option<&str>, key: &str) -> Result<usize, DataError> {
    let token = token.ok_or_else(|| format_err(1, format!("header is missing `{key}=`")))?;
    token
        .strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(1, format!("expected `{key}=<integer>`, found `{token}`")))
}

pub fn parse_dataset(name: &str, text: &str) -> Result<LabeledDataset, DataError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| format_err(1, "empty file"))?;
    let rest = header.strip_prefix(DATASET_MAGIC).ok_or_else(|| {
        format_err(
            1,
            format!("expected header starting with `{DATASET_MAGIC}`"),
        )
    })?;
    let mut tokens = rest.split_whitespace();
    let n = header_field(tokens.next(), "n")?;
    let d = header_field(tokens.next(), "d")?;
    let c = header_field(tokens.next(), "c")?;
    let s = header_field(tokens.next(), "shortcuts")?;
    if let Some(extra) = tokens.next() {
        return Err(format_err(1, format!("unexpected header token `{extra}`")));
    }
    if c < 2 {
        return Err(format_err(1, "c must be at least 2"));
    }

    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut shortcuts = Array2::<usize>::zeros((n, s));
    let mut count = 0;
    for (offset, line) in lines.enumerate() {
        let lineno = offset + 2;
        if count == n {
            if line.is_empty() {
                continue;
            }
            return Err(format_err(
                lineno,
                format!("more than the declared {n} rows"),
            ));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 + s {
            return Err(format_err(
                lineno,
                format!(
                    "row {count} has {} fields, expected {}",
                    fields.len(),
                    d + 1 + s
                ),
            ));
        }
        for (j, f) in fields[..d].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| format_err(lineno, format!("row {count}: bad feature `{f}`")))?;
            if !v.is_finite() {
                return Err(format_err(
                    lineno,
                    format!("row {count}: non-finite feature `{f}`"),
                ));
            }
            features[[count, j]] = v;
        }
        let parse_label = |f: &str, what: &str| -> Result<usize, DataError> {
            let v: usize = f
                .parse()
                .map_err(|_| format_err(lineno, format!("row {count}: bad {what} `{f}`")))?;
            if v >= c {
                return Err(format_err(
                    lineno,
                    format!("row {count}: {what} {v} is outside [0, {c})"),
                ));
            }
            Ok(v)
        };
        labels.push(parse_label(fields[d], "label")?);
        for k in 0..s {
            shortcuts[[count, k]] = parse_label(fields[d + 1 + k], "shortcut")?;
        }
        count += 1;
    }
    if count != n {
        return Err(format_err(
            count + 2,
            format!("expected {n} rows, found {count}"),
        ));
    }
    let samples = Samples::new(features, labels, c).map_err(|e| format_err(1, e.to_string()))?;
    LabeledDataset::new(name, samples, shortcuts).map_err(|e| format_err(1, e.to_string()))
}

pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(format_dataset(ds).as_bytes()).map_err(io)?;
    Ok(())
}

/// Loads a dataset file; the dataset is named after the file stem.
pub fn load_dataset(path: &Path) -> Result<LabeledDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&name, &text)
}
