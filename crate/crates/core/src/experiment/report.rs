use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::ExperimentError;
use crate::fgccdb::{CheckpointEval, WeightSemantics};
use crate::metrics::{GroupedAccuracy, IidWeighting, ModeQuality, ShortcutGaps};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    /// `[class, shortcut_1, ..]`
    pub group: Vec<usize>,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub per_group: Vec<GroupRow>,
    pub class_accuracy: Vec<f64>,
    pub iid_acc: f64,
    pub wga: f64,
    pub per_class_worst: f64,
    pub weighting: IidWeighting,
}

impl From<&GroupedAccuracy> for GroupReport {
    fn from(g: &GroupedAccuracy) -> Self {
        Self {
            per_group: g
                .per_group
                .iter()
                .map(|(k, s)| GroupRow {
                    group: k.clone(),
                    count: s.count,
                    correct: s.correct,
                    accuracy: s.accuracy,
                })
                .collect(),
            class_accuracy: g.class_accuracy.clone(),
            iid_acc: g.iid_acc,
            wga: g.wga,
            per_class_worst: g.per_class_worst,
            weighting: g.weighting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub train_size: usize,
    /// Rows: this stage's predicted bias label, columns: class label.
    pub confusion: Vec<Vec<u64>>,
    /// Share of bias-conflicting samples (first shortcut) in the stage's training set.
    pub conflicting_fraction: f64,
    /// Rows: predicted bias label, columns: true first-shortcut value.
    pub bias_vs_truth: Vec<Vec<u64>>,
    pub mode_quality: ModeQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub semantics: WeightSemantics,
    pub confusion: Vec<Vec<u64>>,
    #[serde(rename = "W")]
    pub mode_weights: Vec<Vec<f64>>,
    #[serde(rename = "w")]
    pub sample_weights: Vec<Vec<f64>>,
    pub matchable: Vec<bool>,
    pub mi_original_joint: f64,
    pub mi_multiplier_joint: f64,
    pub max_min_weight_ratio: f64,
    pub realized_class_masses: Vec<f64>,
    pub residual_mismatch: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasRecord {
    pub test: GroupReport,
    pub best_iteration: usize,
    /// Worst-class validation accuracy at every checkpoint.
    pub trace: Vec<CheckpointEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub erm: ShortcutGaps,
    pub debiased: ShortcutGaps,
    pub supervised: Option<ShortcutGaps>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub erm: GroupReport,
    pub mst_stages: Vec<StageRecord>,
    pub mst_warnings: Vec<String>,
    pub weights: WeightRecord,
    pub debiased: DebiasRecord,
    pub supervised: Option<DebiasRecord>,
    pub gaps: Option<GapRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedError {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub stddev: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, stddev }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryBlock {
    pub wga: MeanStd,
    pub iid_acc: MeanStd,
    pub per_class_worst: MeanStd,
}

impl SummaryBlock {
    fn of<'a>(reports: impl Iterator<Item = &'a GroupReport> + Clone) -> Self {
        let pick =
            |f: fn(&GroupReport) -> f64| MeanStd::of(&reports.clone().map(f).collect::<Vec<_>>());
        Self {
            wga: pick(|g| g.wga),
            iid_acc: pick(|g| g.iid_acc),
            per_class_worst: pick(|g| g.per_class_worst),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub id_acc: MeanStd,
    pub gap_a: MeanStd,
    pub gap_b: MeanStd,
    pub gap_both: MeanStd,
}

impl GapSummary {
    fn of(gaps: &[ShortcutGaps]) -> Self {
        let pick =
            |f: fn(&ShortcutGaps) -> f64| MeanStd::of(&gaps.iter().map(f).collect::<Vec<_>>());
        Self {
            id_acc: pick(|g| g.id_acc),
            gap_a: pick(|g| g.gap_a),
            gap_b: pick(|g| g.gap_b),
            gap_both: pick(|g| g.gap_both),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MstSummary {
    pub smallest_recall: MeanStd,
    pub smallest_precision: MeanStd,
    pub smallest_f1: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapsSummary {
    pub erm: GapSummary,
    pub debiased: GapSummary,
    pub supervised: Option<GapSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub erm: SummaryBlock,
    /// Final-stage quality of the predicted modes.
    pub mst: MstSummary,
    pub debiased: SummaryBlock,
    pub supervised: Option<SummaryBlock>,
    pub gaps: Option<GapsSummary>,
}

/// Means and sample standard deviations over per-seed records; `None` for
/// an empty slice. Optional blocks are present only when every record has them.
pub fn aggregate(records: &[SeedRecord]) -> Option<Aggregate> {
    if records.is_empty() {
        return None;
    }
    let last_stage = |r: &SeedRecord| {
        r.mst_stages
            .last()
            .expect("MST has an initial stage")
            .mode_quality
            .smallest
    };
    let mst_pick = |f: fn(&crate::metrics::ModeScore) -> f64| {
        MeanStd::of(
            &records
                .iter()
                .map(|r| f(&last_stage(r)))
                .collect::<Vec<_>>(),
        )
    };
    let supervised = records
        .iter()
        .map(|r| r.supervised.as_ref().map(|s| &s.test))
        .collect::<Option<Vec<_>>>()
        .map(|v| SummaryBlock::of(v.into_iter()));
    let gaps = records
        .iter()
        .map(|r| r.gaps.as_ref())
        .collect::<Option<Vec<_>>>()
        .map(|g| GapsSummary {
            erm: GapSummary::of(&g.iter().map(|x| x.erm).collect::<Vec<_>>()),
            debiased: GapSummary::of(&g.iter().map(|x| x.debiased).collect::<Vec<_>>()),
            supervised: g
                .iter()
                .map(|x| x.supervised)
                .collect::<Option<Vec<_>>>()
                .map(|s| GapSummary::of(&s)),
        });
    Some(Aggregate {
        seeds: records.len(),
        erm: SummaryBlock::of(records.iter().map(|r| &r.erm)),
        mst: MstSummary {
            smallest_recall: mst_pick(|s| s.recall),
            smallest_precision: mst_pick(|s| s.precision),
            smallest_f1: mst_pick(|s| s.f1),
        },
        debiased: SummaryBlock::of(records.iter().map(|r| &r.debiased.test)),
        supervised,
        gaps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    /// Completed seeds in the order of `seeds`.
    pub records: Vec<SeedRecord>,
    pub errors: Vec<SeedError>,
    pub aggregate: Option<Aggregate>,
}

/// Pretty JSON with every float written in scientific notation with 17
/// significant digits, so values survive a text roundtrip bit for bit.
struct SigDigits17(PrettyFormatter<'static>);

impl Formatter for SigDigits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, SigDigits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report types serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never see a partial file.
pub fn write_json_atomic<T: Serialize>(value: &T, path: &Path) -> Result<(), ExperimentError> {
    write_atomic(path, to_json_string(value).as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| ExperimentError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| ExperimentError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ExperimentError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
