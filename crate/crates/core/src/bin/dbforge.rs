use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dbforge::experiment::{self, ExperimentError, SweepParameter};
use dbforge::fgccdb::WeightSemantics;

#[derive(Parser)]
#[command(
    name = "dbforge",
    version,
    about = "Bias discovery and mode reweighting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/val/test dataset files for one seed.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run the full pipeline for every seed and write report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Per-sample weights from a `sample_id,bias_label,class_label` CSV.
    Weights {
        modes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Semantics::ModeMass)]
        semantics: Semantics,
    },
    /// Rerun the pipeline over values of one hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// gamma, beta, repeats or rho
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Grouped accuracy of a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dataset whose group frequencies weight the in-distribution accuracy.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mutual information (nats) of a joint given as CSV rows.
    Mi { joint: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Semantics {
    ModeMass,
    Multiplier,
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Gen {
            config,
            out,
            seed_override,
        } => {
            let dir = experiment::cmd_gen(&config, out.as_deref(), seed_override)?;
            println!("wrote {}", dir.display());
        }
        Command::Run {
            config,
            out,
            jobs,
            seed_override,
        } => {
            let outcome = experiment::cmd_run(&config, out.as_deref(), jobs, seed_override)?;
            if let Some(a) = &outcome.report.aggregate {
                println!(
                    "seeds {} (reused {:?})  erm wga {:.4}  debiased wga {:.4}  smallest-mode recall {:.4}",
                    a.seeds, outcome.reused, a.erm.wga.mean, a.debiased.wga.mean, a.mst.smallest_recall.mean
                );
            }
            println!("wrote {}", outcome.report_path.display());
        }
        Command::Weights {
            modes,
            out,
            semantics,
        } => {
            let dir = experiment::resolve_output_dir(out.as_deref(), None).ok_or_else(|| {
                ExperimentError::Usage("weights needs --out or DBFORGE_OUTPUT_DIR".into())
            })?;
            let semantics = match semantics {
                Semantics::ModeMass => WeightSemantics::ModeMass,
                Semantics::Multiplier => WeightSemantics::Multiplier,
            };
            let report = experiment::cmd_weights(&modes, &dir, semantics)?;
            println!(
                "{} samples, {} classes, MI {:.6} -> {:.3e}; wrote {}",
                report.samples,
                report.classes,
                report.mi_original_joint,
                report.mi_multiplier_joint,
                dir.display()
            );
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
            jobs,
            seed_override,
        } => {
            let parameter: SweepParameter = param.parse()?;
            let report = experiment::cmd_sweep(
                &config,
                parameter,
                &values,
                out.as_deref(),
                jobs,
                seed_override,
            )?;
            print!("{}", report.table());
        }
        Command::Eval {
            checkpoint,
            data,
            reference,
            out,
        } => {
            let report = experiment::cmd_eval(&checkpoint, &data, reference.as_deref())?;
            match out {
                Some(path) => experiment::write_json_atomic(&report, &path)?,
                None => print!("{}", experiment::to_json_string(&report)),
            }
        }
        Command::Mi { joint } => println!("{:.17e}", experiment::cmd_mi(&joint)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
