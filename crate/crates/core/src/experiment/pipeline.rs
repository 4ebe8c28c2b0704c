use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::report::{
    write_atomic, DebiasRecord, GapRecord, GroupReport, SeedRecord, StageRecord, WeightRecord,
};
use super::ExperimentError;
use crate::datagen::{generate, load_dataset, save_dataset, LabeledDataset, Splits};
use crate::fgccdb::{derive_weights, derive_weights_from_mst, train_debiased, DerivedWeights};
use crate::metrics::{group_frequencies, grouped_accuracy, shortcut_gaps, GroupKey};
use crate::modes::build_confusion;
use crate::mst::{run_mst, stage_diagnostics};
use crate::nn::{format_checkpoint, predict_labels, train_erm, Architecture, ClassifierModel};

/// The three splits one seed runs on.
pub type SeedData = Splits;

/// Generates the seed's dataset, or loads the fixed one from disk.
pub fn load_or_generate(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData, ExperimentError> {
    if let Some(g) = cfg.generator(seed) {
        return Ok(generate(&g)?);
    }
    let dir = &cfg
        .dataset_files
        .as_ref()
        .expect("validated config has a dataset")
        .dir;
    let load = |name: &str| load_dataset(&dir.join(format!("{name}.txt")));
    Ok(Splits {
        train: load("train")?,
        val: load("val")?,
        test: load("test")?,
    })
}

fn stage_err(seed: u64, what: &str, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Stage(format!("seed {seed}, {what}: {e}"))
}

fn to_rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn evaluate(
    model: &ClassifierModel,
    test: &LabeledDataset,
    freqs: &std::collections::BTreeMap<GroupKey, f64>,
) -> Result<crate::metrics::GroupedAccuracy, String> {
    let pred = predict_labels(model, test.samples()).map_err(|e| e.to_string())?;
    grouped_accuracy(&pred, test, Some(freqs)).map_err(|e| e.to_string())
}

fn weight_record(d: &DerivedWeights, cfg: &ExperimentConfig) -> Result<WeightRecord, String> {
    Ok(WeightRecord {
        semantics: cfg.debias.weight_semantics,
        confusion: d.confusion.to_rows(),
        mode_weights: to_rows(&d.table.mode_weights),
        sample_weights: to_rows(&d.table.sample_weights),
        matchable: d.table.matchable.clone(),
        mi_original_joint: d.mi_original_joint(),
        mi_multiplier_joint: d.mi_multiplier_joint().map_err(|e| e.to_string())?,
        max_min_weight_ratio: d.table.max_min_weight_ratio(),
        realized_class_masses: d.table.realized_class_masses(),
        residual_mismatch: d.residual_mismatch(),
    })
}

fn save_model(
    dir: Option<&Path>,
    name: &str,
    model: &ClassifierModel,
) -> Result<(), ExperimentError> {
    match dir {
        Some(dir) => write_atomic(&dir.join(name), format_checkpoint(model).as_bytes()),
        None => Ok(()),
    }
}

/// ERM baseline, MST, weight derivation and debiased training for one seed.
/// Every trained model is saved under `artifacts` when given.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &SeedData,
    artifacts: Option<&Path>,
) -> Result<SeedRecord, ExperimentError> {
    let (train, val, test) = (&data.train, &data.val, &data.test);
    if train.num_shortcuts() == 0 || test.num_shortcuts() != train.num_shortcuts() {
        return Err(ExperimentError::Config(
            "train and test splits need the same ground-truth shortcut columns for evaluation"
                .into(),
        ));
    }
    if let Some(dir) = artifacts {
        fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    let arch: Architecture = cfg.architecture(train.dim(), train.classes());
    let freqs = group_frequencies(train).map_err(|e| stage_err(seed, "group frequencies", e))?;

    let erm = train_erm(train.samples(), &arch, &cfg.erm_train(seed), None)
        .map_err(|e| stage_err(seed, "ERM", e))?;
    save_model(artifacts, "erm.ckpt", &erm.model)?;
    let erm_acc = evaluate(&erm.model, test, &freqs).map_err(|e| stage_err(seed, "ERM eval", e))?;

    let mst = run_mst(train.samples(), &arch, &cfg.mst_config(seed))
        .map_err(|e| stage_err(seed, "MST", e))?;
    let diags =
        stage_diagnostics(&mst, train, 0).map_err(|e| stage_err(seed, "MST diagnostics", e))?;
    let mut mst_stages = Vec::with_capacity(diags.len());
    for (st, d) in mst.stages.iter().zip(diags) {
        save_model(
            artifacts,
            &format!("mst-stage-{}.ckpt", st.stage),
            &st.model,
        )?;
        let confusion = build_confusion(&st.predictions, train.labels(), train.classes())
            .map_err(|e| stage_err(seed, "MST confusion", e))?;
        mst_stages.push(StageRecord {
            stage: d.stage,
            train_size: d.train_size,
            confusion: confusion.to_rows(),
            conflicting_fraction: d.conflicting_fraction,
            bias_vs_truth: d.bias_vs_truth,
            mode_quality: d.mode_quality,
        });
    }
    if let Some(dir) = artifacts {
        let mut csv = String::from("sample_id,bias_label,class_label\n");
        for (i, (b, y)) in mst.bias_labels.iter().zip(train.labels()).enumerate() {
            csv.push_str(&format!("{i},{b},{y}\n"));
        }
        write_atomic(&dir.join("modes.csv"), csv.as_bytes())?;
    }

    let derived = derive_weights_from_mst(&mst, train.samples())
        .map_err(|e| stage_err(seed, "weights", e))?;
    let weights = weight_record(&derived, cfg).map_err(|e| stage_err(seed, "weights", e))?;
    let dcfg = cfg.debias_config(seed);
    let debias = |d: &DerivedWeights,
                  name: &str|
     -> Result<(DebiasRecord, crate::metrics::GroupedAccuracy), ExperimentError> {
        let out = train_debiased(
            train.samples(),
            val.samples(),
            &d.sampling_weights(dcfg.semantics),
            &arch,
            &dcfg,
        )
        .map_err(|e| stage_err(seed, name, e))?;
        save_model(artifacts, &format!("{name}.ckpt"), &out.model)?;
        let acc = evaluate(&out.model, test, &freqs).map_err(|e| stage_err(seed, name, e))?;
        Ok((
            DebiasRecord {
                test: GroupReport::from(&acc),
                best_iteration: out.trace[out.best_index].iteration,
                trace: out.trace,
            },
            acc,
        ))
    };
    let (debiased, debiased_acc) = debias(&derived, "debiased")?;
    let supervised = if cfg.debias.supervised_reference {
        let truth = derive_weights(&train.shortcut_column(0), train.labels(), train.classes())
            .map_err(|e| stage_err(seed, "supervised weights", e))?;
        Some(debias(&truth, "supervised")?)
    } else {
        None
    };

    let gaps = if train.num_shortcuts() == 2 {
        let g = |a| shortcut_gaps(a).map_err(|e| stage_err(seed, "gaps", e));
        Some(GapRecord {
            erm: g(&erm_acc)?,
            debiased: g(&debiased_acc)?,
            supervised: supervised.as_ref().map(|(_, a)| g(a)).transpose()?,
        })
    } else {
        None
    };

    Ok(SeedRecord {
        seed,
        erm: GroupReport::from(&erm_acc),
        mst_stages,
        mst_warnings: mst.warnings,
        weights,
        debiased,
        supervised: supervised.map(|(r, _)| r),
        gaps,
    })
}

/// Writes a seed's three splits as `train.txt`, `val.txt` and `test.txt`.
pub(crate) fn save_splits(data: &SeedData, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    for (split, ds) in data.iter() {
        save_dataset(ds, &dir.join(format!("{}.txt", split.name())))?;
    }
    Ok(())
}
