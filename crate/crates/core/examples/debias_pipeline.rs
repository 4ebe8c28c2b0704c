//! End to end on one seed: ERM baseline, bias discovery, mode weights and
//! weighted retraining, compared by worst-group accuracy.

use dbforge::datagen::{generate, GeneratorConfig};
use dbforge::fgccdb::{derive_weights_from_mst, train_debiased, DebiasConfig, WeightSemantics};
use dbforge::metrics::{group_frequencies, grouped_accuracy};
use dbforge::mst::{run_mst, MstConfig};
use dbforge::nn::{predict_labels, train_erm, Architecture, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let splits = generate(&GeneratorConfig::benchmark(2))?;
    let (train, val, test) = (&splits.train, &splits.val, &splits.test);
    let arch = Architecture::mlp(train.dim(), &[32], 2);
    let freqs = group_frequencies(train)?;

    let erm = train_erm(train.samples(), &arch, &TrainConfig::epochs(20, 2), None)?.model;
    let erm_acc = grouped_accuracy(&predict_labels(&erm, test.samples())?, test, Some(&freqs))?;

    // shortcut labels are never shown to the pipeline below
    let mst = run_mst(
        train.samples(),
        &arch,
        &MstConfig::new(TrainConfig::epochs(20, 0), 2),
    )?;
    let weights = derive_weights_from_mst(&mst, train.samples())?;
    println!("discovered modes {:?}", weights.confusion.to_rows());
    println!("mode weights W {}", weights.table.mode_weights);

    let cfg = DebiasConfig {
        train: TrainConfig::iterations(5000, 22),
        checkpoint_every: 100,
        semantics: WeightSemantics::ModeMass,
    };
    let out = train_debiased(
        train.samples(),
        val.samples(),
        &weights.sampling_weights(cfg.semantics),
        &arch,
        &cfg,
    )?;
    let best = &out.trace[out.best_index];
    println!(
        "kept checkpoint at iteration {} (val worst-class {:.3})",
        best.iteration, best.worst_class_accuracy
    );
    let deb_acc = grouped_accuracy(
        &predict_labels(&out.model, test.samples())?,
        test,
        Some(&freqs),
    )?;

    println!("            iid acc  worst group");
    println!("ERM         {:.4}   {:.4}", erm_acc.iid_acc, erm_acc.wga);
    println!("debiased    {:.4}   {:.4}", deb_acc.iid_acc, deb_acc.wga);
    Ok(())
}
