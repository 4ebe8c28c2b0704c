//! The experiment runner as a library: a resumable multi-seed run followed
//! by a sweep over the initial-subset fraction.

use dbforge::experiment::{run_experiment, sweep, ExperimentConfig, SweepParameter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::benchmark(vec![1, 2, 3]);
    cfg.debias.iterations = 2000;
    let dir = std::env::temp_dir().join(format!("dbforge-run-{}", std::process::id()));

    let first = run_experiment(&cfg, &dir, 2)?;
    let again = run_experiment(&cfg, &dir, 2)?;
    println!(
        "computed {:?}, then reused {:?}",
        first.computed, again.reused
    );
    if let Some(a) = &first.report.aggregate {
        println!(
            "erm wga      {:.4} ± {:.4}",
            a.erm.wga.mean, a.erm.wga.stddev
        );
        println!(
            "debiased wga {:.4} ± {:.4}",
            a.debiased.wga.mean, a.debiased.wga.stddev
        );
    }
    println!("report at {}", first.report_path.display());

    let report = sweep(
        &cfg.with_seeds(vec![1, 2]),
        SweepParameter::Gamma,
        &[0.1, 0.3, 0.5],
        2,
    )?;
    print!("{}", report.table());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
