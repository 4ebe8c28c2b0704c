use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{load_or_generate, run_seed, save_splits};
use super::report::{
    aggregate, read_json, write_atomic, write_json_atomic, ExperimentReport, GroupReport, MeanStd,
    SeedError, SeedRecord, SCHEMA_VERSION,
};
use super::ExperimentError;
use crate::datagen::load_dataset;
use crate::fgccdb::{derive_weights, WeightSemantics};
use crate::metrics::{group_frequencies, grouped_accuracy, worst_class_accuracy};
use crate::modes::mutual_information;
use crate::nn::{load_checkpoint, predict_labels};

/// Overrides the configured output directory (but not `--out`).
pub const OUTPUT_DIR_ENV: &str = "DBFORGE_OUTPUT_DIR";

/// `--out`, then `DBFORGE_OUTPUT_DIR`, then the config's `output_dir`.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| {
            std::env::var_os(OUTPUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
}

fn require_output_dir(
    flag: Option<&Path>,
    cfg: Option<&ExperimentConfig>,
) -> Result<PathBuf, ExperimentError> {
    resolve_output_dir(flag, cfg).ok_or_else(|| {
        ExperimentError::Usage(format!(
            "no output directory: pass --out, set {OUTPUT_DIR_ENV} or output_dir"
        ))
    })
}

fn load_config(
    path: &Path,
    seed_override: Option<u64>,
) -> Result<ExperimentConfig, ExperimentError> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(match seed_override {
        Some(s) => cfg.with_seeds(vec![s]),
        None => cfg,
    })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    if jobs == 0 {
        return Err(ExperimentError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Usage(format!("cannot start {jobs} workers: {e}")))
}

/// Writes the first seed's (or the override's) train/val/test files.
pub fn cmd_gen(
    config: &Path,
    out: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<PathBuf, ExperimentError> {
    let cfg = load_config(config, seed_override)?;
    if cfg.dataset.is_none() {
        return Err(ExperimentError::Config(
            "gen needs a [dataset] generator section".into(),
        ));
    }
    let dir = require_output_dir(out, Some(&cfg))?;
    let data = load_or_generate(&cfg, cfg.seeds[0])?;
    save_splits(&data, &dir)?;
    Ok(dir)
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredRecord {
    schema: u32,
    pipeline_digest: String,
    record: SeedRecord,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report_path: PathBuf,
    pub report: ExperimentReport,
    /// Seeds whose stored record was reused.
    pub reused: Vec<u64>,
    pub computed: Vec<u64>,
}

fn seed_record_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("seeds").join(format!("seed-{seed}.json"))
}

fn stored_record(path: &Path, digest: &str) -> Option<SeedRecord> {
    let stored: StoredRecord = read_json(path).ok()?;
    (stored.schema == SCHEMA_VERSION && stored.pipeline_digest == digest).then_some(stored.record)
}

/// Runs every seed (in parallel over `jobs` workers) and assembles
/// `report.json`. Seeds with a stored record from the same pipeline
/// settings are not recomputed.
pub fn cmd_run(
    config: &Path,
    out: Option<&Path>,
    jobs: usize,
    seed_override: Option<u64>,
) -> Result<RunOutcome, ExperimentError> {
    let cfg = load_config(config, seed_override)?;
    let dir = require_output_dir(out, Some(&cfg))?;
    run_experiment(&cfg, &dir, jobs)
}

/// [`cmd_run`] for an already parsed config.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dir: &Path,
    jobs: usize,
) -> Result<RunOutcome, ExperimentError> {
    let pool = thread_pool(jobs)?;
    let seeds_dir = dir.join("seeds");
    fs::create_dir_all(&seeds_dir).map_err(|e| ExperimentError::io(&seeds_dir, e))?;
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let digest = cfg.pipeline_digest();

    let results: Vec<(u64, bool, Result<SeedRecord, ExperimentError>)> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let path = seed_record_path(dir, seed);
                if let Some(record) = stored_record(&path, &digest) {
                    return (seed, true, Ok(record));
                }
                let result = load_or_generate(cfg, seed)
                    .and_then(|data| {
                        run_seed(
                            cfg,
                            seed,
                            &data,
                            Some(&seeds_dir.join(format!("seed-{seed}"))),
                        )
                    })
                    .and_then(|record| {
                        let stored = StoredRecord {
                            schema: SCHEMA_VERSION,
                            pipeline_digest: digest.clone(),
                            record,
                        };
                        write_json_atomic(&stored, &path)?;
                        Ok(stored.record)
                    });
                (seed, false, result)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut errors = Vec::new();
    let (mut reused, mut computed) = (Vec::new(), Vec::new());
    for (seed, was_stored, result) in results {
        match result {
            Ok(r) => {
                records.push(r);
                if was_stored {
                    reused.push(seed)
                } else {
                    computed.push(seed)
                }
            }
            Err(e) => errors.push(SeedError {
                seed,
                message: e.to_string(),
            }),
        }
    }
    let report = ExperimentReport {
        schema: SCHEMA_VERSION,
        config_digest: cfg.digest(),
        seeds: cfg.seeds.clone(),
        aggregate: aggregate(&records),
        records,
        errors,
    };
    let report_path = dir.join("report.json");
    write_json_atomic(&report, &report_path)?;
    if !report.errors.is_empty() {
        return Err(ExperimentError::Pipeline {
            failed: report.errors.len(),
            total: cfg.seeds.len(),
            report: report_path,
        });
    }
    Ok(RunOutcome {
        report_path,
        report,
        reused,
        computed,
    })
}

/// Sample ids, bias labels and class labels, row-aligned.
pub type ModeColumns = (Vec<String>, Vec<usize>, Vec<usize>);

/// Parses `sample_id,bias_label,class_label` rows.
pub fn parse_mode_csv(path: &Path, text: &str) -> Result<ModeColumns, ExperimentError> {
    let input_err = |message: String| ExperimentError::Input {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| input_err(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["sample_id", "bias_label", "class_label"] {
        return Err(input_err(
            "header must be `sample_id,bias_label,class_label`".into(),
        ));
    }
    let (mut ids, mut bias, mut class) = (Vec::new(), Vec::new(), Vec::new());
    for (k, row) in reader.records().enumerate() {
        let row_no = k + 1;
        let row = row.map_err(|e| input_err(format!("row {row_no}: {e}")))?;
        if row.len() != 3 {
            return Err(input_err(format!(
                "row {row_no}: expected 3 fields, found {}",
                row.len()
            )));
        }
        let label = |i: usize, what: &str| {
            row[i]
                .parse::<usize>()
                .map_err(|_| input_err(format!("row {row_no}: bad {what} `{}`", &row[i])))
        };
        ids.push(row[0].to_string());
        bias.push(label(1, "bias_label")?);
        class.push(label(2, "class_label")?);
    }
    if ids.is_empty() {
        return Err(input_err("no data rows".into()));
    }
    Ok((ids, bias, class))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsReport {
    pub schema: u32,
    pub samples: usize,
    pub classes: usize,
    pub semantics: WeightSemantics,
    pub confusion: Vec<Vec<u64>>,
    #[serde(rename = "W")]
    pub mode_weights: Vec<Vec<f64>>,
    #[serde(rename = "w")]
    pub sample_weights: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    #[serde(rename = "P")]
    pub conditional: Vec<Vec<f64>>,
    pub class_prior: Vec<f64>,
    pub matchable: Vec<bool>,
    pub mi_original_joint: f64,
    pub mi_multiplier_joint: f64,
    pub max_min_weight_ratio: f64,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Per-sample weights for a mode CSV. Writes `weights.csv` and
/// `weights.json` into `out`.
pub fn cmd_weights(
    csv_path: &Path,
    out: &Path,
    semantics: WeightSemantics,
) -> Result<WeightsReport, ExperimentError> {
    let text = fs::read_to_string(csv_path).map_err(|e| ExperimentError::io(csv_path, e))?;
    let (ids, bias, class) = parse_mode_csv(csv_path, &text)?;
    let classes = bias
        .iter()
        .chain(&class)
        .max()
        .map_or(2, |&m| (m + 1).max(2));
    let d = derive_weights(&bias, &class, classes).map_err(|e| ExperimentError::Input {
        path: csv_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let weights = d.sampling_weights(semantics);
    let mut csv = String::from("sample_id,weight\n");
    for (id, w) in ids.iter().zip(&weights) {
        writeln!(csv, "{id},{w:.16e}").unwrap();
    }
    let report = WeightsReport {
        schema: SCHEMA_VERSION,
        samples: ids.len(),
        classes,
        semantics,
        confusion: d.confusion.to_rows(),
        mode_weights: rows(&d.table.mode_weights),
        sample_weights: rows(&d.table.sample_weights),
        q: d.stats.marginal.to_vec(),
        conditional: rows(&d.stats.conditional),
        class_prior: d.stats.class_prior.to_vec(),
        matchable: d.table.matchable.clone(),
        mi_original_joint: d.mi_original_joint(),
        mi_multiplier_joint: d
            .mi_multiplier_joint()
            .map_err(|e| ExperimentError::Stage(e.to_string()))?,
        max_min_weight_ratio: d.table.max_min_weight_ratio(),
    };
    fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    write_atomic(&out.join("weights.csv"), csv.as_bytes())?;
    write_json_atomic(&report, &out.join("weights.json"))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Gamma,
    Beta,
    Repeats,
    Rho,
}

impl FromStr for SweepParameter {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "beta" => Ok(Self::Beta),
            "repeats" => Ok(Self::Repeats),
            "rho" => Ok(Self::Rho),
            other => Err(ExperimentError::Usage(format!(
                "unknown sweep parameter `{other}` (expected gamma, beta, repeats or rho)"
            ))),
        }
    }
}

impl SweepParameter {
    /// `base` with the parameter set to `value`; the supervised reference is
    /// skipped because sweeps only report the annotation-free path.
    pub fn apply(
        self,
        base: &ExperimentConfig,
        value: f64,
    ) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = base.clone();
        cfg.debias.supervised_reference = false;
        match self {
            Self::Gamma => cfg.mst.gamma_fraction = value,
            Self::Beta => cfg.mst.beta_fraction = value,
            Self::Repeats => {
                if !(value >= 0.0 && value.fract() == 0.0) {
                    return Err(ExperimentError::Usage(format!(
                        "repeats value {value} is not a whole number"
                    )));
                }
                cfg.mst.repeats = value as usize;
            }
            Self::Rho => match cfg.dataset.as_mut() {
                Some(d) => d.rho_aligned_fraction.iter_mut().for_each(|r| *r = value),
                None => {
                    return Err(ExperimentError::Config(
                        "rho sweeps need a [dataset] generator section".into(),
                    ))
                }
            },
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mst_smallest_recall: MeanStd,
    pub mst_smallest_f1: MeanStd,
    pub erm_wga: MeanStd,
    pub debiased_wga: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: u32,
    pub config_digest: String,
    pub parameter: SweepParameter,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>10}  {:>14}  {:>14}  {:>14}  {:>14}\n",
            format!("{:?}", self.parameter).to_lowercase(),
            "recall(small)",
            "f1(small)",
            "erm wga",
            "debiased wga"
        );
        for r in &self.rows {
            let cell = |m: &MeanStd| format!("{:.3} ± {:.3}", m.mean, m.stddev);
            writeln!(
                s,
                "{:>10}  {:>14}  {:>14}  {:>14}  {:>14}",
                r.value,
                cell(&r.mst_smallest_recall),
                cell(&r.mst_smallest_f1),
                cell(&r.erm_wga),
                cell(&r.debiased_wga)
            )
            .unwrap();
        }
        s
    }
}

/// One full pipeline per `(value, seed)`; the summary is written to
/// `sweep-<parameter>.json` when an output directory is known.
pub fn cmd_sweep(
    config: &Path,
    parameter: SweepParameter,
    values: &[f64],
    out: Option<&Path>,
    jobs: usize,
    seed_override: Option<u64>,
) -> Result<SweepReport, ExperimentError> {
    let cfg = load_config(config, seed_override)?;
    let report = sweep(&cfg, parameter, values, jobs)?;
    if let Some(dir) = resolve_output_dir(out, Some(&cfg)) {
        fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
        let name = format!("sweep-{:?}.json", parameter).to_lowercase();
        write_json_atomic(&report, &dir.join(name))?;
    }
    Ok(report)
}

/// [`cmd_sweep`] for an already parsed config, without writing files.
pub fn sweep(
    cfg: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[f64],
    jobs: usize,
) -> Result<SweepReport, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Usage(
            "sweep needs at least one value".into(),
        ));
    }
    let configs = values
        .iter()
        .map(|&v| parameter.apply(cfg, v))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs_list: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let pool = thread_pool(jobs)?;
    let results: Vec<Result<SeedRecord, ExperimentError>> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|&(k, seed)| {
                let c = &configs[k];
                load_or_generate(c, seed).and_then(|data| run_seed(c, seed, &data, None))
            })
            .collect()
    });
    let mut records: Vec<Vec<SeedRecord>> = vec![Vec::new(); values.len()];
    for (&(k, _), r) in jobs_list.iter().zip(results) {
        records[k].push(r?);
    }
    let rows = values
        .iter()
        .zip(&records)
        .map(|(&value, recs)| {
            let agg = aggregate(recs).expect("every value has at least one seed");
            SweepRow {
                value,
                mst_smallest_recall: agg.mst.smallest_recall,
                mst_smallest_f1: agg.mst.smallest_f1,
                erm_wga: agg.erm.wga,
                debiased_wga: agg.debiased.wga,
            }
        })
        .collect();
    Ok(SweepReport {
        schema: SCHEMA_VERSION,
        config_digest: cfg.digest(),
        parameter,
        seeds: cfg.seeds.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub samples: usize,
    pub accuracy: f64,
    pub class_accuracy: Vec<f64>,
    pub worst_class_accuracy: f64,
    /// Present when the dataset carries shortcut labels.
    pub grouped: Option<GroupReport>,
}

/// Scores a checkpoint on a dataset. Group frequencies for the
/// in-distribution accuracy come from `reference` (normally the training
/// split) or, without it, from the evaluated dataset itself.
pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    reference: Option<&Path>,
) -> Result<EvalReport, ExperimentError> {
    let model = load_checkpoint(checkpoint).map_err(|e| ExperimentError::Input {
        path: checkpoint.to_path_buf(),
        message: e.to_string(),
    })?;
    let ds = load_dataset(data)?;
    let input = |path: &Path, e: &dyn std::fmt::Display| ExperimentError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let pred = predict_labels(&model, ds.samples()).map_err(|e| input(data, &e))?;
    let (worst, class_accuracy) = worst_class_accuracy(&pred, ds.labels(), ds.classes());
    let correct = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    let grouped = if ds.num_shortcuts() == 0 {
        None
    } else {
        let freqs = match reference {
            Some(path) => {
                Some(group_frequencies(&load_dataset(path)?).map_err(|e| input(path, &e))?)
            }
            None => None,
        };
        let g = grouped_accuracy(&pred, &ds, freqs.as_ref()).map_err(|e| input(data, &e))?;
        Some(GroupReport::from(&g))
    };
    Ok(EvalReport {
        schema: SCHEMA_VERSION,
        samples: ds.len(),
        accuracy: correct as f64 / ds.len().max(1) as f64,
        class_accuracy,
        worst_class_accuracy: worst,
        grouped,
    })
}

/// A joint as comma-separated rows of nonnegative numbers (bias rows, class
/// columns); it is normalized before use.
pub fn parse_joint_csv(path: &Path, text: &str) -> Result<Array2<f64>, ExperimentError> {
    let input_err = |message: String| ExperimentError::Input {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut cols = 0;
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(|e| input_err(format!("row {}: {e}", k + 1)))?;
        cols = row.len();
        for field in row.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| input_err(format!("row {}: bad number `{field}`", k + 1)))?;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(input_err("empty joint".into()));
    }
    Array2::from_shape_vec((values.len() / cols, cols), values)
        .map_err(|e| input_err(e.to_string()))
}

/// Mutual information in nats of the joint stored at `path`.
pub fn cmd_mi(path: &Path) -> Result<f64, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    let joint = parse_joint_csv(path, &text)?;
    mutual_information(&joint).map_err(|e| ExperimentError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_csv_reports_row_numbers() {
        let p = Path::new("m.csv");
        let ok = "sample_id,bias_label,class_label\na,0,1\nb,1,1\n";
        let (ids, b, c) = parse_mode_csv(p, ok).unwrap();
        assert_eq!((ids.len(), b, c), (2, vec![0, 1], vec![1, 1]));
        let bad = "sample_id,bias_label,class_label\na,0,1\nb,x,1\n";
        assert!(parse_mode_csv(p, bad)
            .unwrap_err()
            .to_string()
            .contains("row 2"));
        let short = "sample_id,bias_label,class_label\na,0\n";
        assert!(parse_mode_csv(p, short)
            .unwrap_err()
            .to_string()
            .contains("row 1"));
        let empty = parse_mode_csv(p, "sample_id,bias_label,class_label\n").unwrap_err();
        assert_eq!(empty.exit_code(), 2);
        assert!(parse_mode_csv(p, "id,b,c\n1,0,0\n").is_err());
    }

    #[test]
    fn joint_csv_shapes() {
        let p = Path::new("j.csv");
        let j = parse_joint_csv(p, "0.25, 0.25\n0.25,0.25\n").unwrap();
        assert_eq!(j.dim(), (2, 2));
        assert!(parse_joint_csv(p, "1,2\n3\n").is_err());
        assert!(parse_joint_csv(p, "1,a\n").is_err());
    }

    #[test]
    fn sweep_values_are_checked() {
        let cfg = ExperimentConfig::benchmark(vec![1]);
        assert!(SweepParameter::Repeats.apply(&cfg, 1.5).is_err());
        assert_eq!(
            SweepParameter::Repeats
                .apply(&cfg, 2.0)
                .unwrap()
                .mst
                .repeats,
            2
        );
        assert_eq!(
            SweepParameter::Gamma
                .apply(&cfg, 0.6)
                .unwrap()
                .mst
                .gamma_fraction,
            0.6
        );
        assert_eq!(
            SweepParameter::Gamma
                .apply(&cfg, 0.0)
                .unwrap_err()
                .exit_code(),
            2
        );
        let rho = SweepParameter::Rho.apply(&cfg, 0.9).unwrap();
        assert_eq!(rho.dataset.unwrap().rho_aligned_fraction, vec![0.9]);
        assert_eq!(
            sweep(&cfg, SweepParameter::Gamma, &[], 1)
                .unwrap_err()
                .exit_code(),
            2
        );
        assert!("delta".parse::<SweepParameter>().is_err());
    }
}
