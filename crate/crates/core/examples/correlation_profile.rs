//! Which feature dimensions track the class and which track the shortcut.

use dbforge::datagen::{generate, GeneratorConfig};
use dbforge::metrics::correlation_profile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GeneratorConfig::two_shortcut_benchmark(5);
    let train = generate(&cfg)?.train;
    for k in 0..train.num_shortcuts() {
        let profile = correlation_profile(
            train.samples().features(),
            train.labels(),
            &train.shortcut_column(k),
            2,
        )?;
        println!("shortcut {k}");
        println!("  dim  |corr| class  |corr| shortcut");
        for (d, c) in profile.iter().enumerate() {
            let role = if d < cfg.core_dim { "core" } else { "spurious" };
            println!(
                "  {d:>3}  {:>12.3}  {:>15.3}  {role}",
                c.class_corr, c.bias_corr
            );
        }
    }
    Ok(())
}
