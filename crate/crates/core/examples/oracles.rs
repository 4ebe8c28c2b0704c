//! Cross-checks of the closed forms and the sampler against independent,
//! deliberately naive reimplementations.

use dbforge::diagnostics::{oracle_mi, oracle_sampler, oracle_weights, OracleReport};
use dbforge::modes::ConfusionMatrix;
use ndarray::array;

fn show(title: &str, report: &OracleReport) {
    println!("{title}: {}", if report.pass() { "ok" } else { "FAILED" });
    for c in &report.checks {
        println!(
            "  {:<24} error {:.2e}  tolerance {:.0e}",
            c.name, c.max_abs_error, c.tolerance
        );
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m = ConfusionMatrix::from_rows(&[vec![50, 3, 0], vec![4, 40, 6], vec![1, 2, 30]])?;
    show("weights (3 classes, one empty mode)", &oracle_weights(&m)?);
    show(
        "mutual information",
        &oracle_mi(&array![[0.3, 0.1], [0.05, 0.55]])?,
    );

    let weights: Vec<f64> = (0..40)
        .map(|i| {
            if i % 7 == 0 {
                0.0
            } else {
                1.0 + (i % 5) as f64
            }
        })
        .collect();
    show("weighted sampler", &oracle_sampler(&weights, 200_000, 9)?);
    Ok(())
}
