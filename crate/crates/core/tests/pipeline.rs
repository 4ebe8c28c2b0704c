use std::fs;

use dbforge::datagen::{generate, GeneratorConfig, Samples};
use dbforge::experiment::{aggregate, run_experiment, ExperimentConfig, ExperimentReport};
use dbforge::fgccdb::{derive_weights, WeightSemantics};
use dbforge::metrics::empirical_joint_from_sampler;
use dbforge::modes::assignments;
use dbforge::mst::{run_mst, stage_diagnostics, MstConfig};
use dbforge::nn::{predict_labels, train_erm, Architecture, TrainConfig, WeightedSampler};

fn bench() -> ExperimentConfig {
    ExperimentConfig::benchmark(vec![1, 2, 3, 4, 5])
}

#[test]
fn report_has_every_seed_and_recomputable_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&bench(), dir.path(), 2).unwrap();
    let r = &out.report;
    assert_eq!(r.schema, 1);
    assert_eq!(
        r.records.iter().map(|s| s.seed).collect::<Vec<_>>(),
        vec![1, 2, 3, 4, 5]
    );
    assert!(r.errors.is_empty());
    assert_eq!(r.aggregate, aggregate(&r.records));
    for rec in &r.records {
        assert_eq!(rec.mst_stages.len(), 4);
        assert!(rec.weights.mi_multiplier_joint <= 1e-12);
        assert!(rec.weights.matchable.iter().all(|&m| m));
        assert!(rec.erm.wga <= rec.debiased.test.wga, "seed {}", rec.seed);
        assert!(rec.supervised.is_some() && rec.gaps.is_none());
        for f in [
            "erm.ckpt",
            "debiased.ckpt",
            "supervised.ckpt",
            "modes.csv",
            "mst-stage-3.ckpt",
        ] {
            assert!(
                dir.path()
                    .join(format!("seeds/seed-{}/{f}", rec.seed))
                    .exists(),
                "{f}"
            );
        }
    }
}

#[test]
fn deleting_one_seed_record_recomputes_only_that_seed() {
    let cfg = bench().with_seeds(vec![3, 4]);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, dir.path(), 1).unwrap();
    let first = fs::read(dir.path().join("report.json")).unwrap();

    fs::remove_file(dir.path().join("seeds/seed-4.json")).unwrap();
    let again = run_experiment(&cfg, dir.path(), 1).unwrap();
    assert_eq!((again.reused, again.computed), (vec![3], vec![4]));
    assert_eq!(fs::read(dir.path().join("report.json")).unwrap(), first);

    // changed pipeline settings invalidate stored records
    let mut other = cfg.clone();
    other.debias.iterations = 200;
    let third = run_experiment(&other, dir.path(), 1).unwrap();
    assert_eq!(third.computed, vec![3, 4]);
    let report: ExperimentReport =
        serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_ne!(
        report.config_digest,
        serde_json::from_slice::<ExperimentReport>(&first)
            .unwrap()
            .config_digest
    );
}

#[test]
fn two_shortcut_runs_report_gaps() {
    let mut cfg = bench().with_seeds(vec![1]);
    cfg.dataset.as_mut().unwrap().rho_aligned_fraction = vec![0.95, 0.95];
    let dir = tempfile::tempdir().unwrap();
    let rec = &run_experiment(&cfg, dir.path(), 1).unwrap().report.records[0];
    let gaps = rec.gaps.as_ref().unwrap();
    assert!(gaps.erm.gap_both < gaps.erm.gap_a.max(gaps.erm.gap_b));
    assert!(gaps.supervised.is_some());
    assert_eq!(rec.erm.per_group.len(), 8);
}

#[test]
fn filtering_purifies_later_stages() {
    let mut before = 0.0;
    let mut after = vec![0.0; 3];
    for seed in 1..=5 {
        let splits = generate(&GeneratorConfig::benchmark(seed)).unwrap();
        let train = &splits.train;
        let arch = Architecture::mlp(train.dim(), &[32], 2);
        let cfg = MstConfig::new(TrainConfig::epochs(20, 0), seed);
        let result = run_mst(train.samples(), &arch, &cfg).unwrap();
        let diags = stage_diagnostics(&result, train, 0).unwrap();
        before += diags[0].conflicting_fraction / 5.0;
        for r in 1..=3 {
            after[r - 1] += diags[r].conflicting_fraction / 5.0;
        }
    }
    assert!(after[0] <= before, "{after:?} vs {before}");
    assert!(after[1] <= after[0] && after[2] <= after[1], "{after:?}");
}

#[test]
fn spurious_block_alone_is_separable() {
    let splits = generate(&GeneratorConfig::benchmark(8)).unwrap();
    let keep_spurious = |ds: &dbforge::datagen::LabeledDataset| {
        let x = ds
            .samples()
            .features()
            .slice(ndarray::s![.., 2..4])
            .to_owned();
        // score the shortcut value as the target
        Samples::new(x, ds.shortcut_column(0), 2).unwrap()
    };
    let train = keep_spurious(&splits.train);
    let model = train_erm(
        &train,
        &Architecture::softmax_regression(2, 2),
        &TrainConfig::epochs(10, 1),
        None,
    )
    .unwrap()
    .model;
    let test = &splits.test;
    let pred = predict_labels(&model, &keep_spurious(test)).unwrap();
    let aligned: Vec<usize> = (0..test.len())
        .filter(|&i| test.shortcuts()[[i, 0]] == test.labels()[i])
        .collect();
    let hits = aligned
        .iter()
        .filter(|&&i| pred[i] == test.labels()[i])
        .count();
    assert!(
        hits as f64 / aligned.len() as f64 >= 0.99,
        "{hits}/{}",
        aligned.len()
    );
}

#[test]
fn sampled_mode_masses_follow_each_semantics() {
    let (mut bias, mut class) = (Vec::new(), Vec::new());
    for (s, y, n) in [(0, 0, 90), (0, 1, 20), (1, 0, 10), (1, 1, 80)] {
        bias.extend(std::iter::repeat_n(s, n));
        class.extend(std::iter::repeat_n(y, n));
    }
    let d = derive_weights(&bias, &class, 2).unwrap();
    let modes = assignments(&bias, &class).unwrap();
    let draws = 400_000;
    for (semantics, target) in [
        (WeightSemantics::ModeMass, d.mode_mass_joint()),
        (WeightSemantics::Multiplier, d.multiplier_joint().unwrap()),
    ] {
        let mut sampler = WeightedSampler::new(d.sampling_weights(semantics), 5).unwrap();
        let emp = empirical_joint_from_sampler(&sampler.sample_indices(draws), &modes, 2).unwrap();
        for ((i, j), &p) in target.indexed_iter() {
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (emp[[i, j]] - p).abs() <= 3.0 * sd,
                "{semantics:?} ({i},{j}) {} vs {p}",
                emp[[i, j]]
            );
        }
    }
    // the uniform sampler reproduces the data joint
    let mut uniform = WeightedSampler::new(vec![1.0; bias.len()], 6).unwrap();
    let emp = empirical_joint_from_sampler(&uniform.sample_indices(draws), &modes, 2).unwrap();
    for ((i, j), &p) in d.stats.joint.indexed_iter() {
        assert!((emp[[i, j]] - p).abs() <= 3.0 * (p * (1.0 - p) / draws as f64).sqrt());
    }
}
