//! Multi-stage training to recover the hidden shortcut labels, scored stage
//! by stage against the ground truth.

use dbforge::datagen::{generate, GeneratorConfig};
use dbforge::mst::{run_mst, stage_diagnostics, MstConfig};
use dbforge::nn::{Architecture, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let splits = generate(&GeneratorConfig::benchmark(1))?;
    let train = &splits.train;
    let arch = Architecture::mlp(train.dim(), &[32], 2);
    let cfg = MstConfig::new(TrainConfig::epochs(20, 0), 1);

    let result = run_mst(train.samples(), &arch, &cfg)?;
    println!("stage  size  conflicting  smallest-mode recall  f1     bias accuracy");
    for d in stage_diagnostics(&result, train, 0)? {
        let s = d.mode_quality.smallest;
        println!(
            "{:>5}  {:>4}  {:>11.3}  {:>20.3}  {:.3}  {:.3}",
            d.stage,
            d.train_size,
            d.conflicting_fraction,
            s.recall,
            s.f1,
            d.mode_quality.overall_accuracy
        );
    }
    println!(
        "discovered (bias, class) counts: {:?}",
        result.confusion.to_rows()
    );
    for w in &result.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
