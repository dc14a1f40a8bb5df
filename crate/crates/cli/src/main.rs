use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slq_cli::{
    parse_p, run_experiment, verify, ExperimentConfig, Pipeline, DEFAULT_TOL, EXIT_CONVERGED,
    EXIT_ERROR, EXIT_NOT_CONVERGED,
};

#[derive(Parser)]
#[command(
    name = "slq",
    version,
    about = "Policy iteration for stochastic LQ control with multiplicative noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or all pipelines and write trace.csv and summary.json.
    Run {
        config: PathBuf,
        #[arg(long, env = "SLQ_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Overrides the pipeline named in the config.
        #[arg(long, value_enum)]
        pipeline: Option<Pipeline>,
        /// Overrides `sim.seed`.
        #[arg(long, env = "SLQ_SEED")]
        seed: Option<u64>,
    },
    /// Print the Riccati residual of a candidate P.
    Verify {
        config: PathBuf,
        /// A file (summary.json, JSON rows or plain text) or inline rows such as "2,1;1,3".
        #[arg(long = "p", allow_hyphen_values = true)]
        p: String,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            pipeline,
            seed,
        } => match run_experiment(&config, &out, pipeline, seed) {
            Ok(report) => {
                for o in &report.outcomes {
                    let status = if o.converged() {
                        "converged"
                    } else {
                        "not converged"
                    };
                    let residual = if o.trace.iterates.is_empty() {
                        f64::NAN
                    } else {
                        o.trace.final_residual()
                    };
                    println!(
                        "{}: {status} after {} iterations, residual {residual:.6e} ({:.2}s)",
                        o.pipeline.name(),
                        o.trace.iterations,
                        o.seconds
                    );
                }
                println!("results in {}", report.out_dir.display());
                code(if report.converged() {
                    EXIT_CONVERGED
                } else {
                    EXIT_NOT_CONVERGED
                })
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                code(EXIT_ERROR)
            }
        },
        Command::Verify { config, p, tol } => {
            let result =
                ExperimentConfig::load(&config).and_then(|cfg| verify(&cfg, &parse_p(&p)?));
            match result {
                Ok(report) => {
                    println!("{report}");
                    let pass = report.passes(tol);
                    println!("{} (tol {tol:e})", if pass { "PASS" } else { "FAIL" });
                    code(if pass { EXIT_CONVERGED } else { EXIT_ERROR })
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    code(EXIT_ERROR)
                }
            }
        }
    }
}
