//! Data-driven policy iteration.
//!
//! Each evaluation step probes the closed loop from a set of initial states
//! `x_j` over an interval of length `Δt` and fits `P` to the identities
//!
//! ```text
//! (x_j' ⊗ x_j' - E[X(Δt)' ⊗ X(Δt)']) vec(P) = E ∫_0^Δt X' (Q + K'S + S'K + K'RK) X ds
//! ```
//!
//! reduced to the `N = n(n+1)/2` free parameters through the duplication
//! matrix. Expectations are sample means over simulated paths. The drift
//! matrix only reaches this module through [`Plant`] trajectories;
//! improvement uses `B`, `C`, `D` from an [`InputModel`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SlqError};
use crate::lyapunov::{improve_gain, is_stabilizer, sare_residual, Iterate, PiTrace};
use crate::matlib::{
    condition_number, duplication, half_dim, least_squares, vec_plus_inverse, Matrix, RCOND,
};
use crate::model::{CostSpec, FeedbackGain, InputModel, SystemModel, ValueMatrix};
use crate::sde::{derive_seed, Plant, SimConfig};

/// Norm of the default probe states.
pub const PROBE_NORM: f64 = 2.0;

/// Seed tag of the reference path in sequential mode.
const REFERENCE_PATH_TAG: u64 = u64::MAX;

/// Upper bound on random probes added when enlarging a plan.
const MAX_ENLARGE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum ProbeMode {
    /// Every interval restarts from a fixed probe state.
    Restart,
    /// One reference path from the first state is recorded at `t_j = j Δt`
    /// and each recorded state is branched into a fresh batch.
    Sequential { probes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExcitationPlan {
    initial_states: Vec<Vec<f64>>,
    interval_length: f64,
    mode: ProbeMode,
}

fn outer_row(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut row = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            row[i * n + j] = x[i] * x[j];
        }
    }
    row
}

/// Condition number of the matrix with rows `(x_j ⊗ x_j)' T`.
fn excitation_condition(states: &[Vec<f64>], n: usize) -> f64 {
    let rows: Vec<f64> = states.iter().flat_map(|x| outer_row(x)).collect();
    let x = Matrix::from_row_slice(states.len(), n * n, &rows);
    condition_number(&(x * duplication(n)))
}

fn random_probe(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|c| PROBE_NORM * c / norm).collect();
        }
    }
}

fn check_interval(interval_length: f64) -> Result<()> {
    if interval_length > 0.0 && interval_length.is_finite() {
        Ok(())
    } else {
        Err(SlqError::InvalidInput(format!(
            "interval length must be positive, got {interval_length}"
        )))
    }
}

impl ExcitationPlan {
    /// Restart-mode plan; the probe states must make the reduced system
    /// full rank.
    pub fn restart(initial_states: Vec<Vec<f64>>, interval_length: f64) -> Result<Self> {
        check_interval(interval_length)?;
        let n = initial_states.first().map(Vec::len).unwrap_or(0);
        if n == 0 {
            return Err(SlqError::InvalidInput(
                "excitation plan needs at least one probe state".into(),
            ));
        }
        for (j, x) in initial_states.iter().enumerate() {
            if x.len() != n {
                return Err(SlqError::DimensionMismatch {
                    context: "probe state",
                    expected: n.to_string(),
                    actual: x.len().to_string(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SlqError::NonFinite("probe state"));
            }
            if x.iter().all(|&v| v == 0.0) {
                return Err(SlqError::InvalidInput(format!(
                    "probe state {j} is zero and carries no excitation"
                )));
            }
        }
        let needed = half_dim(n);
        if initial_states.len() < needed {
            return Err(SlqError::InvalidInput(format!(
                "{} probe states given, at least {needed} are needed",
                initial_states.len()
            )));
        }
        let condition = excitation_condition(&initial_states, n);
        if !(condition < 1.0 / RCOND) {
            return Err(SlqError::RankDeficient {
                rank: needed - 1,
                cols: needed,
                condition,
            });
        }
        Ok(Self {
            initial_states,
            interval_length,
            mode: ProbeMode::Restart,
        })
    }

    /// Restart-mode plan that appends seeded random probes of norm
    /// [`PROBE_NORM`] until the reduced system has full rank.
    pub fn restart_enlarged(
        mut initial_states: Vec<Vec<f64>>,
        n: usize,
        interval_length: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let needed = half_dim(n);
        for _ in 0..MAX_ENLARGE {
            if initial_states.len() >= needed
                && excitation_condition(&initial_states, n) < 1.0 / RCOND
            {
                break;
            }
            initial_states.push(random_probe(n, &mut rng));
        }
        Self::restart(initial_states, interval_length)
    }

    /// Default restart plan with `2N` probes: the states `e_a` and
    /// `e_a + e_b` (`a < b`), which span the symmetric matrices exactly,
    /// followed by `N` seeded random directions, all of norm [`PROBE_NORM`].
    pub fn default_for(n: usize, interval_length: f64, seed: u64) -> Result<Self> {
        let mut states = Vec::with_capacity(2 * half_dim(n));
        for a in 0..n {
            let mut e = vec![0.0; n];
            e[a] = PROBE_NORM;
            states.push(e);
        }
        let diag = PROBE_NORM / 2f64.sqrt();
        for a in 0..n {
            for b in a + 1..n {
                let mut e = vec![0.0; n];
                e[a] = diag;
                e[b] = diag;
                states.push(e);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..half_dim(n) {
            states.push(random_probe(n, &mut rng));
        }
        Self::restart(states, interval_length)
    }

    /// Sequential-mode plan branching `probes` states off one reference path from `x0`.
    pub fn sequential(x0: Vec<f64>, probes: usize, interval_length: f64) -> Result<Self> {
        check_interval(interval_length)?;
        let n = x0.len();
        if n == 0 || x0.iter().all(|&v| v == 0.0) {
            return Err(SlqError::InvalidInput(
                "sequential plan needs a nonzero start state".into(),
            ));
        }
        if probes < half_dim(n) {
            return Err(SlqError::InvalidInput(format!(
                "{probes} probes requested, at least {} are needed",
                half_dim(n)
            )));
        }
        Ok(Self {
            initial_states: vec![x0],
            interval_length,
            mode: ProbeMode::Sequential { probes },
        })
    }

    pub fn initial_states(&self) -> &[Vec<f64>] {
        &self.initial_states
    }

    pub fn interval_length(&self) -> f64 {
        self.interval_length
    }

    pub fn mode(&self) -> &ProbeMode {
        &self.mode
    }

    pub fn state_dim(&self) -> usize {
        self.initial_states[0].len()
    }

    pub fn probe_count(&self) -> usize {
        match self.mode {
            ProbeMode::Restart => self.initial_states.len(),
            ProbeMode::Sequential { probes } => probes,
        }
    }

    /// Probe states for one evaluation under gain `k`.
    fn realize<P: Plant + ?Sized>(
        &self,
        plant: &P,
        k: &FeedbackGain,
        cfg: &SimConfig,
    ) -> Result<Vec<Vec<f64>>> {
        match self.mode {
            ProbeMode::Restart => Ok(self.initial_states.clone()),
            ProbeMode::Sequential { probes } => {
                let stride = (self.interval_length / cfg.dt).round().max(1.0) as usize;
                let reference_cfg = SimConfig {
                    dt: cfg.dt,
                    horizon: (stride * probes) as f64 * cfg.dt,
                    n_paths: 1,
                    seed: derive_seed(cfg.seed, REFERENCE_PATH_TAG),
                };
                let path = plant.record(k, &self.initial_states[0], &reference_cfg)?;
                Ok((0..probes)
                    .map(|j| path.state(0, j * stride).to_vec())
                    .collect())
            }
        }
    }
}

/// Stacked evaluation identities `xmat vec(P) = jvec`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSystem {
    /// `M x n^2`, row `j` is `x_j' ⊗ x_j' - E[X(Δt)' ⊗ X(Δt)']`.
    pub xmat: Matrix,
    /// `M x 1` interval costs.
    pub jvec: Matrix,
    /// Condition number of `xmat * duplication(n)`.
    pub condition: f64,
}

/// Simulates every probe of `plan` under gain `k` and assembles the
/// evaluation identities. Probe `j` uses seed `derive_seed(cfg.seed, j)`;
/// `cfg.horizon` is replaced by the plan's interval length.
pub fn build_evaluation_system<P: Plant + ?Sized>(
    plant: &P,
    cost: &CostSpec,
    k: &FeedbackGain,
    plan: &ExcitationPlan,
    cfg: &SimConfig,
) -> Result<EvaluationSystem> {
    let n = plant.state_dim();
    if plan.state_dim() != n {
        return Err(SlqError::DimensionMismatch {
            context: "excitation plan",
            expected: n.to_string(),
            actual: plan.state_dim().to_string(),
        });
    }
    if let Some(sys) = plant.reference_model() {
        if !is_stabilizer(sys, k) {
            return Err(SlqError::NotStabilizing { iteration: None });
        }
    }
    let weight = cost.closed_loop_weight(k)?;
    let states = plan.realize(plant, k, cfg)?;
    let mut xmat = Matrix::zeros(states.len(), n * n);
    let mut jvec = Matrix::zeros(states.len(), 1);
    for (j, x) in states.iter().enumerate() {
        let batch_cfg = SimConfig {
            dt: cfg.dt,
            horizon: plan.interval_length,
            n_paths: cfg.n_paths,
            seed: derive_seed(cfg.seed, j as u64),
        };
        let summary = plant.run_batch(k, &weight, x, &batch_cfg)?;
        let moment = summary.terminal_second_moment();
        for (c, start) in outer_row(x).into_iter().enumerate() {
            xmat[(j, c)] = start - moment[c];
        }
        jvec[j] = summary.running_cost();
    }
    let condition = condition_number(&(&xmat * duplication(n)));
    Ok(EvaluationSystem {
        xmat,
        jvec,
        condition,
    })
}

/// Least-squares fit of `vec_plus(P)` to `(xmat T) vec_plus(P) = jvec`.
pub fn solve_evaluation(es: &EvaluationSystem, n: usize) -> Result<ValueMatrix> {
    if es.xmat.ncols() != n * n {
        return Err(SlqError::DimensionMismatch {
            context: "evaluation system",
            expected: format!("{} columns", n * n),
            actual: es.xmat.ncols().to_string(),
        });
    }
    let ls = least_squares(&(&es.xmat * duplication(n)), &es.jvec)?;
    Ok(ValueMatrix::new(vec_plus_inverse(
        ls.solution.as_slice(),
        n,
    )?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlOptions {
    /// Stop when `||P(i+1) - P(i)||_F < eps`.
    pub eps: f64,
    pub max_iter: usize,
    /// Draw fresh Brownian increments every iteration. When false every
    /// iteration reuses the same per-probe seeds.
    pub resample_noise: bool,
}

impl Default for RlOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iter: 100,
            resample_noise: false,
        }
    }
}

/// Trajectory-based policy iteration from stabilizer `k0`.
///
/// Without convergence after `max_iter` iterations the trace is returned
/// with `converged == false` and the lowest-residual iterate selected
/// (the last one when the plant offers no reference model).
pub fn run<P: Plant + ?Sized>(
    plant: &P,
    known: &InputModel,
    cost: &CostSpec,
    k0: &FeedbackGain,
    plan: &ExcitationPlan,
    cfg: &SimConfig,
    opts: &RlOptions,
) -> Result<PiTrace> {
    if !(opts.eps > 0.0) {
        return Err(SlqError::InvalidInput(format!(
            "eps must be positive, got {}",
            opts.eps
        )));
    }
    cfg.validate()?;
    let n = plant.state_dim();
    if known.state_dim() != n || known.input_dim() != plant.input_dim() {
        return Err(SlqError::DimensionMismatch {
            context: "input model",
            expected: format!("{n} states, {} inputs", plant.input_dim()),
            actual: format!("{} states, {} inputs", known.state_dim(), known.input_dim()),
        });
    }
    let reference = plant.reference_model();
    if let Some(sys) = reference {
        if !is_stabilizer(sys, k0) {
            return Err(SlqError::NotStabilizing { iteration: Some(0) });
        }
    }

    let mut trace = PiTrace::empty();
    let mut gain = k0.clone();
    let mut previous: Option<ValueMatrix> = None;
    for i in 0..opts.max_iter {
        let iter_cfg = if opts.resample_noise {
            cfg.with_seed(derive_seed(cfg.seed, 1 + i as u64))
        } else {
            cfg.clone()
        };
        let es =
            build_evaluation_system(plant, cost, &gain, plan, &iter_cfg).map_err(|e| match e {
                SlqError::NotStabilizing { .. } => SlqError::NotStabilizing { iteration: Some(i) },
                other => other,
            })?;
        let value = solve_evaluation(&es, n)?;
        let delta = previous
            .as_ref()
            .map_or(f64::NAN, |prev| (value.to_full() - prev.to_full()).norm());
        let next = improve_gain(&known.b, &known.c, &known.d, cost, &value)?;
        let residual = match reference {
            Some(sys) => {
                if !is_stabilizer(sys, &next) {
                    return Err(SlqError::NotStabilizing {
                        iteration: Some(i + 1),
                    });
                }
                sare_residual(sys, cost, &value)?.1
            }
            None => f64::NAN,
        };
        trace.push(
            Iterate {
                value: value.clone(),
                gain: next.clone(),
            },
            delta,
            residual,
        );
        if delta < opts.eps {
            trace.converged = true;
            return Ok(trace);
        }
        previous = Some(value);
        gain = next;
    }
    if let Some((best, _)) = trace
        .residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_nan())
        .min_by(|a, b| a.1.total_cmp(b.1))
    {
        trace.selected = best;
    }
    Ok(trace)
}

/// [`run`] against a simulated model, learning with its `B`, `C`, `D`.
pub fn run_on_model(
    sys: &SystemModel,
    cost: &CostSpec,
    k0: &FeedbackGain,
    plan: &ExcitationPlan,
    cfg: &SimConfig,
    opts: &RlOptions,
) -> Result<PiTrace> {
    run(sys, &sys.input_model(), cost, k0, plan, cfg, opts)
}
