use std::collections::BTreeMap;

use dbforge::datagen::{generate, GeneratorConfig, LabeledDataset, Samples};
use dbforge::diagnostics::{brute_force_mi, oracle_mi, oracle_sampler, oracle_weights};
use dbforge::metrics::{correlation_profile, grouped_accuracy, mode_quality, IidWeighting};
use dbforge::modes::{
    assignments, build_confusion, compute_weights, estimate_statistics, mutual_information, outer,
    reweighted_joint, ConfusionMatrix, ModeAssignment,
};
use dbforge::nn::{Architecture, ClassifierModel, TrainConfig, Trainer};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn counts(max_classes: usize, lo: u64, hi: u64) -> impl Strategy<Value = ConfusionMatrix> {
    (2..=max_classes).prop_flat_map(move |c| {
        prop::collection::vec(lo..=hi, c * c).prop_map(move |v| {
            ConfusionMatrix::from_counts(Array2::from_shape_vec((c, c), v).unwrap()).unwrap()
        })
    })
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_column_matches_the_marginal(m in counts(10, 1, 1_000_000)) {
        let stats = estimate_statistics(&m);
        let table = compute_weights(&stats, &m);
        prop_assert!(table.all_matchable());
        prop_assert!(table.residual_mismatch(&stats).iter().all(|&r| r <= 1e-12));
    }

    #[test]
    fn reweighted_joint_is_the_product_of_marginals(m in counts(10, 1, 1_000_000)) {
        let stats = estimate_statistics(&m);
        let joint = reweighted_joint(&stats, &compute_weights(&stats, &m)).unwrap();
        prop_assert!(max_abs(&joint, &outer(&stats.marginal, &stats.class_prior)) <= 1e-12);
        prop_assert!(mutual_information(&joint).unwrap() <= 1e-12);
    }

    #[test]
    fn oracle_agrees_including_empty_modes(m in counts(6, 0, 1_000)) {
        prop_assume!(m.total() > 0);
        let r = oracle_weights(&m).unwrap();
        prop_assert!(r.pass(), "{:?}", r.failures());
    }

    #[test]
    fn bigger_modes_get_smaller_weights(
        m in counts(6, 1, 10_000),
        pick in any::<(prop::sample::Index, prop::sample::Index, prop::sample::Index)>(),
    ) {
        // give rows a and b equal totals by topping up a cell outside column j
        let c = m.classes();
        let mut rows = m.to_rows();
        let j = pick.0.index(c);
        let a = pick.1.index(c);
        let b = (a + 1 + pick.2.index(c - 1)) % c;
        let k = (j + 1) % c;
        let (sa, sb): (u64, u64) = (rows[a].iter().sum(), rows[b].iter().sum());
        if sa < sb { rows[a][k] += sb - sa } else { rows[b][k] += sa - sb }
        prop_assume!(rows[a][j] != rows[b][j]);
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        let stats = estimate_statistics(&m);
        prop_assert!((stats.marginal[a] - stats.marginal[b]).abs() <= 1e-15);
        let w = compute_weights(&stats, &m).sample_weights;
        let (big, small) = if rows[a][j] > rows[b][j] { (a, b) } else { (b, a) };
        prop_assert!(w[[big, j]] < w[[small, j]]);
    }

    #[test]
    fn independent_counts_are_a_fixed_point(
        row in prop::collection::vec(1u64..200, 2..=6),
        col_seed in prop::collection::vec(1u64..200, 6),
    ) {
        let c = row.len();
        let m = ConfusionMatrix::from_counts(Array2::from_shape_fn((c, c), |(i, j)| row[i] * col_seed[j])).unwrap();
        let stats = estimate_statistics(&m);
        let table = compute_weights(&stats, &m);
        prop_assert!(table.mode_weights.iter().all(|&w| (w - 1.0).abs() <= 1e-12));
        prop_assert!(max_abs(&reweighted_joint(&stats, &table).unwrap(), &stats.joint) <= 1e-12);
    }

    #[test]
    fn joint_times_n_recovers_counts(
        labels in prop::collection::vec((0usize..5, 0usize..5), 1..400),
    ) {
        let (bias, class): (Vec<_>, Vec<_>) = labels.into_iter().unzip();
        let m = build_confusion(&bias, &class, 5).unwrap();
        let n = m.total() as f64;
        let stats = estimate_statistics(&m);
        for ((i, j), &p) in stats.joint.indexed_iter() {
            prop_assert_eq!((p * n).round() as u64, m.get(i, j));
        }
    }

    #[test]
    fn correlation_is_affine_invariant(
        rows in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), 0usize..3, 0usize..3), 5..60),
        scale in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        shift in -50.0f64..50.0,
        dim in 0usize..3,
    ) {
        let n = rows.len();
        let x = Array2::from_shape_fn((n, 3), |(i, k)| rows[i].0[k]);
        let y: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let s: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let mut moved = x.clone();
        moved.column_mut(dim).mapv_inplace(|v| scale * v + shift);
        let before = correlation_profile(&x, &y, &s, 3).unwrap();
        let after = correlation_profile(&moved, &y, &s, 3).unwrap();
        for (p, q) in before.iter().zip(&after) {
            prop_assert!((p.class_corr - q.class_corr).abs() <= 1e-9);
            prop_assert!((p.bias_corr - q.bias_corr).abs() <= 1e-9);
        }
    }

    #[test]
    fn mode_quality_matches_a_confusion_table(
        pairs in prop::collection::vec(((0usize..3, 0usize..3), (0usize..3, 0usize..3)), 1..1000),
    ) {
        let pred: Vec<ModeAssignment> = pairs.iter().map(|&((s, y), _)| ModeAssignment::new(s, y)).collect();
        let truth: Vec<ModeAssignment> = pairs.iter().map(|&(_, (s, y))| ModeAssignment::new(s, y)).collect();
        let q = mode_quality(&pred, &truth).unwrap();
        // 9x9 table over flattened modes
        let mut table = [[0usize; 9]; 9];
        for (p, t) in pred.iter().zip(&truth) {
            table[t.bias * 3 + t.class][p.bias * 3 + p.class] += 1;
        }
        let mut diag = 0;
        for (k, row) in table.iter().enumerate() {
            diag += row[k];
        }
        prop_assert_eq!(q.overall_accuracy, diag as f64 / pred.len() as f64);
        for score in &q.per_mode {
            let k = score.bias * 3 + score.class;
            let support: usize = table[k].iter().sum();
            let predicted: usize = table.iter().map(|r| r[k]).sum();
            let precision = if predicted == 0 { 0.0 } else { table[k][k] as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { table[k][k] as f64 / support as f64 };
            prop_assert_eq!(score.support, support);
            prop_assert_eq!(score.predicted, predicted);
            prop_assert_eq!(score.precision, precision);
            prop_assert_eq!(score.recall, recall);
        }
        let min_support = (0..9).map(|k| table[k].iter().sum::<usize>()).filter(|&s| s > 0).min().unwrap();
        prop_assert_eq!(q.smallest.support, min_support);
    }

    #[test]
    fn groups_refine_classes(
        flips in prop::collection::vec(0.0f64..1.0, 3),
        seed in 0u64..1000,
    ) {
        let ds = small_dataset(seed);
        // corrupt predictions with group-dependent rates
        let pred: Vec<usize> = (0..ds.len())
            .map(|i| {
                let y = ds.labels()[i];
                let s = ds.shortcuts()[[i, 0]];
                let r = flips[(y + s) % 3];
                let u = ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0;
                if u < r { 1 - y } else { y }
            })
            .collect();
        let g = grouped_accuracy(&pred, &ds, None).unwrap();
        prop_assert_eq!(g.weighting, IidWeighting::TestFrequency);
        prop_assert!(g.wga <= g.per_class_worst + 1e-15);
        prop_assert!(g.per_class_worst <= g.iid_acc + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mutual_information_matches_double_loop(cells in prop::collection::vec(0.0f64..1.0, 36), r in 2usize..=6, c in 2usize..=6) {
        let vals: Vec<f64> = cells[..r * c].to_vec();
        prop_assume!(vals.iter().sum::<f64>() > 0.0);
        let joint = Array2::from_shape_vec((r, c), vals).unwrap();
        let mi = mutual_information(&joint).unwrap();
        prop_assert!(mi >= 0.0);
        prop_assert!(oracle_mi(&joint).unwrap().pass());
    }

    #[test]
    fn product_joints_have_zero_information(
        a in prop::collection::vec(0.01f64..1.0, 2..=6),
        b in prop::collection::vec(0.01f64..1.0, 2..=6),
    ) {
        let joint = outer(&Array1::from(a), &Array1::from(b));
        let plain: Vec<Vec<f64>> = joint.rows().into_iter().map(|r| r.to_vec()).collect();
        prop_assert!(mutual_information(&joint).unwrap() <= 1e-12);
        prop_assert!(brute_force_mi(&plain).abs() <= 1e-12);
    }
}

fn small_dataset(seed: u64) -> LabeledDataset {
    let mut cfg = GeneratorConfig::benchmark(seed);
    cfg.per_class.train = 60;
    cfg.per_class.val = 10;
    cfg.per_class.test = 10;
    generate(&cfg).unwrap().train
}

#[test]
fn sampler_passes_chi_square_on_random_weights() {
    let weights: Vec<f64> = (0..50).map(|k| ((k * 37 % 11) + 1) as f64 * 0.3).collect();
    let r = oracle_sampler(&weights, 1_000_000, 77).unwrap();
    assert!(r.pass(), "{r:?}");
    let fixture: Vec<f64> = [0.0055402, 2.0, 2.0, 0.0055402].repeat(25);
    assert!(oracle_sampler(&fixture, 1_000_000, 78).unwrap().pass());
}

#[test]
fn mean_epoch_loss_never_rises_after_epoch_two() {
    // two well-separated blobs
    let n = 200;
    let features = Array2::from_shape_fn((n, 2), |(i, k)| {
        let centre = if i % 2 == 0 { 2.0 } else { -2.0 };
        centre + (((i * 7 + k * 13) % 17) as f64 / 17.0 - 0.5)
    });
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let samples = Samples::new(features, labels, 2).unwrap();
    let arch = Architecture::mlp(2, &[8], 2);
    let epochs = 12;
    let mut mean = vec![0.0; epochs];
    for seed in 0..5 {
        let cfg = TrainConfig::epochs(epochs, seed);
        let mut trainer = Trainer::new(
            &samples,
            ClassifierModel::init(arch.clone(), seed),
            &cfg,
            None,
        )
        .unwrap();
        trainer.run_to_end().unwrap();
        for (m, l) in mean.iter_mut().zip(trainer.epoch_losses()) {
            *m += l / 5.0;
        }
    }
    for e in 2..epochs {
        assert!(
            mean[e] <= mean[e - 1],
            "epoch {e}: {} > {}",
            mean[e],
            mean[e - 1]
        );
    }
}

#[test]
fn shortcut_columns_never_change_weights() {
    let ds = small_dataset(3);
    let bias: Vec<usize> = ds
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| if i % 9 == 0 { 1 - y } else { y })
        .collect();
    let with = dbforge::fgccdb::derive_weights(&bias, ds.labels(), 2).unwrap();
    let stripped = ds.without_shortcuts();
    let without = dbforge::fgccdb::derive_weights(&bias, stripped.labels(), 2).unwrap();
    assert_eq!(with.per_sample, without.per_sample);
    let modes = assignments(&bias, ds.labels()).unwrap();
    let mut per_mode: BTreeMap<ModeAssignment, f64> = BTreeMap::new();
    for (m, w) in modes.iter().zip(&with.per_sample) {
        assert_eq!(*per_mode.entry(*m).or_insert(*w), *w);
    }
}
