//! Least-squares drift identification and the model-based baseline built on it.
//!
//! One closed-loop path under a fixed gain is sampled at `t_k = k T / m`,
//! forward differences `y_k = (x_{k+1} - x_k) / (t_{k+1} - t_k)` are
//! regressed on `x_k`, and the known `BK` is removed from the fitted
//! closed-loop drift.

use crate::error::{Result, SlqError};
use crate::lyapunov::{is_stabilizer, policy_iteration_exact, sare_residual, PiTrace};
use crate::matlib::{least_squares, Matrix, RCOND};
use crate::model::{diffusion_cancelling_gain, CostSpec, FeedbackGain, InputModel, SystemModel};
use crate::sde::{Plant, SimConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationConfig {
    /// Number of difference quotients `m`; the grid has `m + 1` points.
    pub n_samples: usize,
    /// Length `T` of the sampled window.
    pub horizon: f64,
    /// Simulation step; the grid spacing `T / m` must be a multiple of it.
    pub dt: f64,
    /// Gain applied while sampling. `None` selects `-(D'D)^{-1} D'C`.
    pub gain: Option<FeedbackGain>,
    pub seed: u64,
    pub x0: Vec<f64>,
}

impl EstimationConfig {
    /// `n^2` samples on `[0, 1]`.
    pub fn unit_window(x0: Vec<f64>, dt: f64, seed: u64) -> Self {
        let n = x0.len();
        Self {
            n_samples: n * n,
            horizon: 1.0,
            dt,
            gain: None,
            seed,
            x0,
        }
    }

    /// Simulation steps between consecutive grid points.
    pub fn stride(&self) -> Result<usize> {
        let spacing = self.horizon / self.n_samples as f64;
        let stride = (spacing / self.dt).round();
        if !(stride >= 1.0) || ((stride * self.dt - spacing).abs() > 1e-9 * spacing) {
            return Err(SlqError::InvalidInput(format!(
                "grid spacing {spacing} is not a positive multiple of dt = {}",
                self.dt
            )));
        }
        Ok(stride as usize)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.n_samples < n {
            return Err(SlqError::InvalidInput(format!(
                "{} samples cannot determine a {n}x{n} drift",
                self.n_samples
            )));
        }
        if self.x0.len() != n {
            return Err(SlqError::DimensionMismatch {
                context: "estimation start state",
                expected: n.to_string(),
                actual: self.x0.len().to_string(),
            });
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SlqError::InvalidInput(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        self.stride().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftEstimate {
    pub a_hat: Matrix,
    /// Condition number of the sample matrix `X'`, whose square is that of `XX'`.
    pub condition: f64,
    /// Ordinary least-squares standard errors of the entries of `a_hat`;
    /// NaN when there are no residual degrees of freedom.
    pub standard_errors: Matrix,
    pub gain: FeedbackGain,
}

fn sampling_gain(known: &InputModel, cfg: &EstimationConfig) -> Result<FeedbackGain> {
    match &cfg.gain {
        Some(k) => Ok(k.clone()),
        None => diffusion_cancelling_gain(&known.d, &known.c).ok_or(SlqError::NoValidGain),
    }
}

/// Estimates `A` as `Y X' (X X')^{-1} - BK` from one simulated path.
pub fn estimate_drift<P: Plant + ?Sized>(
    plant: &P,
    known: &InputModel,
    cfg: &EstimationConfig,
) -> Result<DriftEstimate> {
    let n = plant.state_dim();
    cfg.validate(n)?;
    let gain = sampling_gain(known, cfg)?;
    let stride = cfg.stride()?;
    let sim = SimConfig::new(
        cfg.dt,
        (stride * cfg.n_samples) as f64 * cfg.dt,
        1,
        cfg.seed,
    )?;
    let path = plant.record(&gain, &cfg.x0, &sim)?;
    let h = stride as f64 * cfg.dt;

    let m = cfg.n_samples;
    let mut xt = Matrix::zeros(m, n);
    let mut yt = Matrix::zeros(m, n);
    for k in 0..m {
        let now = path.state(0, k * stride);
        let next = path.state(0, (k + 1) * stride);
        for i in 0..n {
            xt[(k, i)] = now[i];
            yt[(k, i)] = (next[i] - now[i]) / h;
        }
    }
    let fit = least_squares(&xt, &yt).map_err(|e| match e {
        SlqError::RankDeficient { condition, .. } => SlqError::SingularGram { condition },
        other => other,
    })?;
    debug_assert!(fit.condition < 1.0 / RCOND);
    let residuals = &yt - &xt * &fit.solution;
    let dof = m.saturating_sub(n);
    let gram_inv = (xt.transpose() * &xt)
        .try_inverse()
        .ok_or(SlqError::SingularGram {
            condition: fit.condition,
        })?;
    let standard_errors = Matrix::from_fn(n, n, |i, j| {
        if dof == 0 {
            return f64::NAN;
        }
        let s2 = residuals.column(i).norm_squared() / dof as f64;
        (s2 * gram_inv[(j, j)]).sqrt()
    });
    let a_hat = fit.solution.transpose() - &known.b * gain.matrix();
    Ok(DriftEstimate {
        a_hat,
        condition: fit.condition,
        standard_errors,
        gain,
    })
}

/// Identifies `A`, then runs exact policy iteration on the identified model.
///
/// When the plant exposes its true model, residuals are rescored against
/// it and the final gain must stabilize it.
pub fn model_based_pipeline<P: Plant + ?Sized>(
    plant: &P,
    known: &InputModel,
    cost: &CostSpec,
    cfg: &EstimationConfig,
    k0: &FeedbackGain,
    eps: f64,
    max_iter: usize,
) -> Result<(PiTrace, DriftEstimate)> {
    let estimate = estimate_drift(plant, known, cfg)?;
    let identified = SystemModel::new(
        estimate.a_hat.clone(),
        known.b.clone(),
        known.c.clone(),
        known.d.clone(),
    )?;
    let mut trace = policy_iteration_exact(&identified, cost, k0, eps, max_iter)?;
    if let Some(truth) = plant.reference_model() {
        for (it, r) in trace.iterates.iter().zip(trace.residuals.iter_mut()) {
            *r = sare_residual(truth, cost, &it.value)?.1;
        }
        if !is_stabilizer(truth, trace.final_gain()) {
            return Err(SlqError::NotStabilizing {
                iteration: Some(trace.iterations),
            });
        }
    }
    Ok((trace, estimate))
}
