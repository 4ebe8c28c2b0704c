//! Two independent shortcuts: how much accuracy an ERM model loses when one
//! or both of them point the wrong way.

use dbforge::datagen::{generate, GeneratorConfig};
use dbforge::metrics::{group_frequencies, grouped_accuracy, shortcut_gaps};
use dbforge::nn::{predict_labels, train_erm, Architecture, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let splits = generate(&GeneratorConfig::two_shortcut_benchmark(4))?;
    let train = &splits.train;
    let arch = Architecture::mlp(train.dim(), &[32], 2);
    let model = train_erm(train.samples(), &arch, &TrainConfig::epochs(20, 4), None)?.model;

    let test = &splits.test;
    let acc = grouped_accuracy(
        &predict_labels(&model, test.samples())?,
        test,
        Some(&group_frequencies(train)?),
    )?;
    println!("group (class, s1, s2)   count  accuracy");
    for (key, g) in &acc.per_group {
        println!("{key:?}  {:>14}  {:.3}", g.count, g.accuracy);
    }
    let gaps = shortcut_gaps(&acc)?;
    println!("in-distribution accuracy {:.4}", gaps.id_acc);
    println!("gap, first uncommon      {:+.4}", gaps.gap_a);
    println!("gap, second uncommon     {:+.4}", gaps.gap_b);
    println!("gap, both uncommon       {:+.4}", gaps.gap_both);
    Ok(())
}
