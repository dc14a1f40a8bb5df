//! Experiment configuration files.
//!
//! Matrices are written row-major as arrays of arrays:
//!
//! ```toml
//! initial_state = [2.0, 3.0]
//! initial_gain = [[-8.3809, 7.4036]]
//!
//! [system]
//! a = [[0.3, 0.7], [-0.9, 0.5]]
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use slq_core::matlib::{Matrix, SymMatrix};
use slq_core::rlpi::ExcitationPlan;
use slq_core::sysid::EstimationConfig;
use slq_core::{CostSpec, FeedbackGain, RlOptions, SimConfig, SystemModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    #[default]
    Exact,
    Rl,
    Sysid,
    All,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Exact => "exact",
            Pipeline::Rl => "rl",
            Pipeline::Sysid => "sysid",
            Pipeline::All => "all",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub pipeline: Pipeline,
    pub initial_state: Vec<f64>,
    pub initial_gain: Vec<Vec<f64>>,
    pub system: SystemSection,
    pub cost: CostSection,
    pub sim: SimSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sysid: SysidSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Defaults to zero.
    pub s: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    /// Horizon of dumped paths.
    #[serde(default = "one")]
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    #[default]
    Restart,
    Sequential,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    #[serde(default = "one")]
    pub interval_length: f64,
    #[serde(default)]
    pub mode: PlanMode,
    /// Restart probes; the default plan is used when absent.
    pub probes: Option<Vec<Vec<f64>>>,
    /// Number of branch points in sequential mode; defaults to `2N`.
    pub n_probes: Option<usize>,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            interval_length: 1.0,
            mode: PlanMode::Restart,
            probes: None,
            n_probes: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "exact_eps")]
    pub eps: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
    #[serde(default = "rl_eps")]
    pub rl_eps: f64,
    #[serde(default = "max_iter")]
    pub rl_max_iter: usize,
    #[serde(default)]
    pub resample_noise: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            eps: exact_eps(),
            max_iter: max_iter(),
            rl_eps: rl_eps(),
            rl_max_iter: max_iter(),
            resample_noise: false,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SysidSection {
    /// Defaults to `n^2`.
    pub n_samples: Option<usize>,
    pub horizon: Option<f64>,
    /// Defaults to `sim.dt`.
    pub dt: Option<f64>,
    /// Defaults to `-(D'D)^{-1} D'C`.
    pub gain: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Paths written to `paths.csv` under the final gain; none when zero.
    #[serde(default)]
    pub dump_paths: usize,
}

fn one() -> f64 {
    1.0
}

fn exact_eps() -> f64 {
    1e-6
}

fn rl_eps() -> f64 {
    1e-3
}

fn max_iter() -> usize {
    100
}

/// Row-major nested arrays to a matrix.
pub fn matrix(rows: &[Vec<f64>], name: &str) -> anyhow::Result<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        bail!("matrix `{name}` is empty");
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        bail!(
            "matrix `{name}`: row {i} has {} entries, expected {ncols}",
            row.len()
        );
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), ncols, &flat))
}

fn symmetric(rows: &[Vec<f64>], name: &str) -> anyhow::Result<SymMatrix> {
    let m = matrix(rows, name)?;
    SymMatrix::from_full(&m).with_context(|| format!("matrix `{name}`"))
}

/// A configuration turned into validated model types.
#[derive(Clone, Debug)]
pub struct Problem {
    pub system: SystemModel,
    pub cost: CostSpec,
    pub x0: Vec<f64>,
    pub k0: FeedbackGain,
    pub sim: SimConfig,
    pub plan: ExcitationPlan,
    pub rl: RlOptions,
    pub eps: f64,
    pub max_iter: usize,
    pub estimation: EstimationConfig,
    pub dump_paths: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn system(&self) -> anyhow::Result<SystemModel> {
        let s = &self.system;
        Ok(SystemModel::new(
            matrix(&s.a, "system.a")?,
            matrix(&s.b, "system.b")?,
            matrix(&s.c, "system.c")?,
            matrix(&s.d, "system.d")?,
        )?)
    }

    pub fn cost(&self, n: usize, m: usize) -> anyhow::Result<CostSpec> {
        let q = symmetric(&self.cost.q, "cost.q")?;
        let r = symmetric(&self.cost.r, "cost.r")?;
        if q.dim() != n || r.dim() != m {
            bail!(
                "cost weights are sized for {} states and {} inputs, the system has {n} and {m}",
                q.dim(),
                r.dim()
            );
        }
        let s = match &self.cost.s {
            Some(rows) => matrix(rows, "cost.s")?,
            None => Matrix::zeros(m, n),
        };
        CostSpec::new(q, s, r).context("cost weights")
    }

    pub fn problem(&self) -> anyhow::Result<Problem> {
        let system = self.system()?;
        let (n, m) = (system.state_dim(), system.input_dim());
        let cost = self.cost(n, m)?;
        if self.initial_state.len() != n {
            bail!(
                "initial_state has {} entries, expected {n}",
                self.initial_state.len()
            );
        }
        let k0 = FeedbackGain::new(matrix(&self.initial_gain, "initial_gain")?)?;
        if k0.matrix().shape() != (m, n) {
            bail!("initial_gain must be {m}x{n}");
        }
        let sim = SimConfig::new(
            self.sim.dt,
            self.sim.horizon,
            self.sim.n_paths,
            self.sim.seed,
        )
        .context("[sim]")?;
        let plan = self.plan(n).context("[plan]")?;
        let estimation = EstimationConfig {
            n_samples: self.sysid.n_samples.unwrap_or(n * n),
            horizon: self.sysid.horizon.unwrap_or(1.0),
            dt: self.sysid.dt.unwrap_or(self.sim.dt),
            gain: match &self.sysid.gain {
                Some(rows) => Some(FeedbackGain::new(matrix(rows, "sysid.gain")?)?),
                None => None,
            },
            seed: self.sim.seed,
            x0: self.initial_state.clone(),
        };
        Ok(Problem {
            system,
            cost,
            x0: self.initial_state.clone(),
            k0,
            sim,
            plan,
            rl: RlOptions {
                eps: self.solver.rl_eps,
                max_iter: self.solver.rl_max_iter,
                resample_noise: self.solver.resample_noise,
            },
            eps: self.solver.eps,
            max_iter: self.solver.max_iter,
            estimation,
            dump_paths: self.output.dump_paths,
        })
    }

    fn plan(&self, n: usize) -> anyhow::Result<ExcitationPlan> {
        let p = &self.plan;
        let plan = match p.mode {
            PlanMode::Restart => match &p.probes {
                Some(states) => ExcitationPlan::restart_enlarged(
                    states.clone(),
                    n,
                    p.interval_length,
                    self.sim.seed,
                )?,
                None => ExcitationPlan::default_for(n, p.interval_length, self.sim.seed)?,
            },
            PlanMode::Sequential => {
                let probes = p.n_probes.unwrap_or(n * (n + 1));
                ExcitationPlan::sequential(self.initial_state.clone(), probes, p.interval_length)?
            }
        };
        Ok(plan)
    }
}
