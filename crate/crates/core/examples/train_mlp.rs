//! Plain ERM training of a small MLP, with a gradient check and a checkpoint
//! round trip.

use dbforge::datagen::{generate, GeneratorConfig};
use dbforge::metrics::worst_class_accuracy;
use dbforge::nn::{
    format_checkpoint, gradient_check, parse_checkpoint, predict_labels, train_erm, Architecture,
    GradientProbe, TrainConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let splits = generate(&GeneratorConfig::benchmark(3))?;
    let arch = Architecture::mlp(splits.train.dim(), &[32], 2);
    println!("{} ({} parameters)", arch.describe(), arch.num_params());

    let probe = GradientProbe::random(&arch, 11);
    println!(
        "gradient check, max relative error {:.2e}",
        gradient_check(&probe)
    );

    let out = train_erm(
        splits.train.samples(),
        &arch,
        &TrainConfig::epochs(20, 3),
        None,
    )?;
    for (epoch, loss) in out.epoch_losses.iter().enumerate().step_by(5) {
        println!("epoch {:>2}  loss {loss:.4}", epoch + 1);
    }
    let pred = predict_labels(&out.model, splits.test.samples())?;
    let (worst, per_class) = worst_class_accuracy(&pred, splits.test.labels(), 2);
    println!("unbiased test: per-class {per_class:.3?}, worst {worst:.3}");

    let restored = parse_checkpoint(&format_checkpoint(&out.model))?;
    println!(
        "checkpoint restores identical parameters: {}",
        restored.params() == out.model.params()
    );
    Ok(())
}
