use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use slq_core::lyapunov::policy_iteration_exact;
use slq_core::matlib::Matrix;
use slq_core::model::{validate, GainSource, Stabilizability};
use slq_core::sde::{simulate, write_paths_csv};
use slq_core::sysid::{model_based_pipeline, DriftEstimate};
use slq_core::{rlpi, PiTrace, SlqError};

use crate::config::{ExperimentConfig, Pipeline, Problem};

/// Result of one pipeline.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub pipeline: Pipeline,
    pub trace: PiTrace,
    pub seconds: f64,
    pub estimate: Option<DriftEstimate>,
}

impl Outcome {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// Runs a single pipeline. Exhausting the iteration budget is not an error;
/// the partial trace comes back with `converged == false`.
pub fn run_pipeline(problem: &Problem, pipeline: Pipeline) -> anyhow::Result<Outcome> {
    let start = Instant::now();
    let mut estimate = None;
    let result = match pipeline {
        Pipeline::Exact => policy_iteration_exact(
            &problem.system,
            &problem.cost,
            &problem.k0,
            problem.eps,
            problem.max_iter,
        ),
        Pipeline::Rl => rlpi::run_on_model(
            &problem.system,
            &problem.cost,
            &problem.k0,
            &problem.plan,
            &problem.sim,
            &problem.rl,
        ),
        Pipeline::Sysid => model_based_pipeline(
            &problem.system,
            &problem.system.input_model(),
            &problem.cost,
            &problem.estimation,
            &problem.k0,
            problem.eps,
            problem.max_iter,
        )
        .map(|(trace, est)| {
            estimate = Some(est);
            trace
        }),
        Pipeline::All => anyhow::bail!("`all` is not a single pipeline"),
    };
    let trace = match result {
        Ok(trace) => trace,
        Err(SlqError::MaxIterationsExceeded { trace, .. }) => *trace,
        Err(e) => return Err(e).with_context(|| format!("{} pipeline", pipeline.name())),
    };
    Ok(Outcome {
        pipeline,
        trace,
        seconds: start.elapsed().as_secs_f64(),
        estimate,
    })
}

fn header(n: usize, m: usize) -> String {
    let mut cols = vec!["i".to_string()];
    for j in 0..n {
        for i in j..n {
            cols.push(format!("p{}{}", i + 1, j + 1));
        }
    }
    for i in 0..m {
        for j in 0..n {
            cols.push(format!("k{}{}", i + 1, j + 1));
        }
    }
    cols.push("delta_p".into());
    cols.push("residual".into());
    cols.join(",")
}

/// One row per iterate: index, packed lower triangle of `P` (column-major),
/// `K` row-major, `||ΔP||_F` and `||R(P)||_F`.
pub fn write_trace_csv<W: Write>(trace: &PiTrace, mut out: W) -> io::Result<()> {
    let Some(first) = trace.iterates.first() else {
        return Ok(());
    };
    let n = first.value.dim();
    let m = first.gain.matrix().nrows();
    writeln!(out, "{}", header(n, m))?;
    for (i, it) in trace.iterates.iter().enumerate() {
        write!(out, "{i}")?;
        for v in it.value.sym().lower() {
            write!(out, ",{v:.16e}")?;
        }
        let k = it.gain.matrix();
        for r in 0..k.nrows() {
            for c in 0..k.ncols() {
                write!(out, ",{:.16e}", k[(r, c)])?;
            }
        }
        writeln!(out, ",{:.16e},{:.16e}", trace.deltas[i], trace.residuals[i])?;
    }
    Ok(())
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct Assumptions {
    stabilizability: String,
    cost_definite: bool,
}

#[derive(Serialize)]
struct Identification {
    a_hat: Vec<Vec<f64>>,
    standard_errors: Vec<Vec<f64>>,
    condition: f64,
    sampling_gain: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Summary {
    pipeline: &'static str,
    converged: bool,
    iterations: usize,
    selected_iteration: usize,
    final_p: Vec<Vec<f64>>,
    final_k: Vec<Vec<f64>>,
    final_residual: f64,
    wall_clock_seconds: f64,
    seed: u64,
    assumptions: Assumptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    identification: Option<Identification>,
}

fn assumptions(problem: &Problem) -> Assumptions {
    let report = validate(
        &problem.system,
        &problem.cost,
        std::slice::from_ref(&problem.k0),
    );
    let stabilizability = match report.stabilizable {
        Stabilizability::Verified { source, .. } => match source {
            GainSource::Zero => "verified by K = 0".to_string(),
            GainSource::DiffusionCancelling => "verified by K = -(D'D)^-1 D'C".to_string(),
            GainSource::Candidate(_) => "verified by the initial gain".to_string(),
        },
        Stabilizability::Fails => "fails".to_string(),
        Stabilizability::NotVerified => "not verified".to_string(),
    };
    Assumptions {
        stabilizability,
        cost_definite: report.cost_definiteness.is_none(),
    }
}

fn write_summary(problem: &Problem, outcome: &Outcome, path: &Path) -> anyhow::Result<()> {
    let t = &outcome.trace;
    let (final_p, final_k, final_residual) = if t.iterates.is_empty() {
        (Vec::new(), Vec::new(), f64::NAN)
    } else {
        (
            rows(&t.final_value().to_full()),
            rows(t.final_gain().matrix()),
            t.final_residual(),
        )
    };
    let summary = Summary {
        pipeline: outcome.pipeline.name(),
        converged: t.converged,
        iterations: t.iterations,
        selected_iteration: t.selected,
        final_p,
        final_k,
        final_residual,
        wall_clock_seconds: outcome.seconds,
        seed: problem.sim.seed,
        assumptions: assumptions(problem),
        identification: outcome.estimate.as_ref().map(|e| Identification {
            a_hat: rows(&e.a_hat),
            standard_errors: rows(&e.standard_errors),
            condition: e.condition,
            sampling_gain: rows(e.gain.matrix()),
        }),
    };
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &summary)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Writes `trace.csv`, `summary.json` and, when requested, `paths.csv`.
pub fn write_outputs(problem: &Problem, outcome: &Outcome, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let trace_path = dir.join("trace.csv");
    let mut out = BufWriter::new(
        File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?,
    );
    write_trace_csv(&outcome.trace, &mut out)?;
    out.flush()?;
    write_summary(problem, outcome, &dir.join("summary.json"))?;
    if problem.dump_paths > 0 && !outcome.trace.iterates.is_empty() {
        let cfg = problem.sim.with_paths(problem.dump_paths);
        let batch = simulate(
            &problem.system,
            outcome.trace.final_gain(),
            &problem.x0,
            &cfg,
        )
        .context("simulating dumped paths")?;
        let mut out = BufWriter::new(File::create(dir.join("paths.csv"))?);
        write_paths_csv(&batch, &mut out)?;
        out.flush()?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub outcomes: Vec<Outcome>,
    pub out_dir: PathBuf,
}

impl RunReport {
    pub fn converged(&self) -> bool {
        self.outcomes.iter().all(Outcome::converged)
    }
}

/// Loads a configuration, runs the selected pipeline(s) and writes results.
/// With `all`, each pipeline writes into its own subdirectory.
pub fn run_experiment(
    config_path: &Path,
    out_dir: &Path,
    pipeline: Option<Pipeline>,
    seed: Option<u64>,
) -> anyhow::Result<RunReport> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.sim.seed = seed;
    }
    let problem = config
        .problem()
        .with_context(|| format!("invalid config {}", config_path.display()))?;
    let selected = pipeline.unwrap_or(config.pipeline);
    let mut outcomes = Vec::new();
    if selected == Pipeline::All {
        for p in [Pipeline::Exact, Pipeline::Rl, Pipeline::Sysid] {
            let outcome = run_pipeline(&problem, p)?;
            write_outputs(&problem, &outcome, &out_dir.join(p.name()))?;
            outcomes.push(outcome);
        }
    } else {
        let outcome = run_pipeline(&problem, selected)?;
        write_outputs(&problem, &outcome, out_dir)?;
        outcomes.push(outcome);
    }
    Ok(RunReport {
        outcomes,
        out_dir: out_dir.to_path_buf(),
    })
}
