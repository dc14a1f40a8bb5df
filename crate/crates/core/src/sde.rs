//! Euler–Maruyama simulation of the closed loop
//! `dX = (A + BK)X dt + (C + DK)X dW` with a scalar Brownian motion.
//!
//! Path `k` of a batch draws its increments from ChaCha8 stream `k` of the
//! batch seed, so a batch is bit-identical however its paths are scheduled.
//! Reductions over paths are always accumulated in path order.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Result, SlqError};
use crate::matlib::{Matrix, SymMatrix};
use crate::model::{closed_loop, FeedbackGain, SystemModel};

/// A path whose state norm exceeds this is reported as a blow-up.
pub const BLOWUP_BOUND: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Euler step.
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            dt,
            horizon,
            n_paths,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SlqError::InvalidInput(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(SlqError::InvalidInput(format!(
                "horizon {} must be finite and at least dt {}",
                self.horizon, self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(SlqError::InvalidInput("n_paths must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of Euler steps; the grid is `l * dt` for `l = 0..=steps`.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_paths(&self, n_paths: usize) -> Self {
        Self {
            n_paths,
            ..self.clone()
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for sub-experiment `tag` of `master`.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// One-step Euler maps `I + Acl dt` and `Ccl sqrt(dt)`, row-major.
struct Coefficients {
    n: usize,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl Coefficients {
    fn new(acl: &Matrix, ccl: &Matrix, dt: f64) -> Self {
        let n = acl.nrows();
        let row_major = |m: &Matrix| m.transpose().as_slice().to_vec();
        Self {
            n,
            drift: row_major(&(Matrix::identity(n, n) + acl * dt)),
            diffusion: row_major(&(ccl * dt.sqrt())),
        }
    }
}

fn blowup(path: usize, step: usize) -> SlqError {
    SlqError::NumericalBlowup {
        path,
        step,
        bound: BLOWUP_BOUND,
    }
}

/// Integrates one path, calling `visit(l, x_l)` at every grid point, and
/// returns the terminal state.
fn integrate_path(
    coef: &Coefficients,
    x0: &[f64],
    steps: usize,
    rng: &mut ChaCha8Rng,
    path: usize,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    macro_rules! fixed {
        ($n:literal) => {
            integrate_fixed::<$n>(coef, x0, steps, rng, path, |l, x| visit(l, x))
                .map(|x| x.to_vec())
        };
    }
    match coef.n {
        1 => fixed!(1),
        2 => fixed!(2),
        3 => fixed!(3),
        4 => fixed!(4),
        _ => integrate_dynamic(coef, x0, steps, rng, path, visit),
    }
}

/// Paths advanced in lockstep by the cost kernel, so that independent
/// dependency chains overlap.
const LANES: usize = 4;

type PathCost = Result<(f64, Vec<f64>)>;

/// Running sums `sum_{l<L} x_l' W x_l` and terminal states of paths
/// `first..first + count`.
fn integrate_cost(
    coef: &Coefficients,
    w: &[f64],
    x0: &[f64],
    steps: usize,
    seed: u64,
    first: usize,
    count: usize,
) -> Vec<PathCost> {
    macro_rules! fixed {
        ($n:literal) => {{
            let wf = to_fixed::<$n>(w);
            if count == LANES {
                let mut rngs: [ChaCha8Rng; LANES] =
                    std::array::from_fn(|b| path_rng(seed, first + b));
                integrate_cost_lanes::<$n>(coef, &wf, x0, steps, &mut rngs, first)
            } else {
                (first..first + count)
                    .map(|path| {
                        let mut rng = path_rng(seed, path);
                        let mut acc = 0.0;
                        let x = integrate_fixed::<$n>(coef, x0, steps, &mut rng, path, |l, x| {
                            if l < steps {
                                acc += quadratic_fixed(&wf, x);
                            }
                        })?;
                        Ok((acc, x.to_vec()))
                    })
                    .collect()
            }
        }};
    }
    match coef.n {
        1 => fixed!(1),
        2 => fixed!(2),
        3 => fixed!(3),
        4 => fixed!(4),
        _ => (first..first + count)
            .map(|path| {
                let mut rng = path_rng(seed, path);
                let mut acc = 0.0;
                let x = integrate_dynamic(coef, x0, steps, &mut rng, path, |l, x| {
                    if l < steps {
                        acc += quadratic(w, x);
                    }
                })?;
                Ok((acc, x))
            })
            .collect(),
    }
}

/// Lockstep version of [`integrate_fixed`] with cost accumulation. Each lane
/// performs exactly the single-path arithmetic on its own stream.
fn integrate_cost_lanes<const N: usize>(
    coef: &Coefficients,
    w: &[[f64; N]; N],
    x0: &[f64],
    steps: usize,
    rngs: &mut [ChaCha8Rng; LANES],
    first: usize,
) -> Vec<PathCost> {
    let a = to_fixed::<N>(&coef.drift);
    let c = to_fixed::<N>(&coef.diffusion);
    let mut start = [0.0; N];
    start.copy_from_slice(x0);
    let mut x = [start; LANES];
    let mut acc = [0.0; LANES];
    let mut failed: [Option<usize>; LANES] = [None; LANES];
    for l in 0..steps {
        for b in 0..LANES {
            acc[b] += quadratic_fixed(w, &x[b]);
            let xi: f64 = rngs[b].sample(StandardNormal);
            let mut next = [0.0; N];
            let mut norm2 = 0.0;
            for i in 0..N {
                let mut drift = 0.0;
                let mut diffusion = 0.0;
                for j in 0..N {
                    drift += a[i][j] * x[b][j];
                    diffusion += c[i][j] * x[b][j];
                }
                next[i] = drift + diffusion * xi;
                norm2 += next[i] * next[i];
            }
            x[b] = next;
            if failed[b].is_none() && !(norm2 <= BLOWUP_BOUND * BLOWUP_BOUND) {
                failed[b] = Some(l + 1);
            }
        }
    }
    (0..LANES)
        .map(|b| match failed[b] {
            Some(step) => Err(blowup(first + b, step)),
            None => Ok((acc[b], x[b].to_vec())),
        })
        .collect()
}

fn to_fixed<const N: usize>(m: &[f64]) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            out[i][j] = m[i * N + j];
        }
    }
    out
}

/// Same operation order as [`quadratic`], so both give identical bits.
#[inline(always)]
fn quadratic_fixed<const N: usize>(w: &[[f64; N]; N], x: &[f64; N]) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let mut inner = 0.0;
        for j in 0..N {
            inner += w[i][j] * x[j];
        }
        acc += x[i] * inner;
    }
    acc
}

#[inline(always)]
fn integrate_fixed<const N: usize>(
    coef: &Coefficients,
    x0: &[f64],
    steps: usize,
    rng: &mut ChaCha8Rng,
    path: usize,
    mut visit: impl FnMut(usize, &[f64; N]),
) -> Result<[f64; N]> {
    let a = to_fixed::<N>(&coef.drift);
    let c = to_fixed::<N>(&coef.diffusion);
    let mut x = [0.0; N];
    x.copy_from_slice(x0);
    visit(0, &x);
    for l in 0..steps {
        let xi: f64 = rng.sample(StandardNormal);
        let mut next = [0.0; N];
        let mut norm2 = 0.0;
        for i in 0..N {
            let mut drift = 0.0;
            let mut diffusion = 0.0;
            for j in 0..N {
                drift += a[i][j] * x[j];
                diffusion += c[i][j] * x[j];
            }
            next[i] = drift + diffusion * xi;
            norm2 += next[i] * next[i];
        }
        x = next;
        // also rejects NaN
        if !(norm2 <= BLOWUP_BOUND * BLOWUP_BOUND) {
            return Err(blowup(path, l + 1));
        }
        visit(l + 1, &x);
    }
    Ok(x)
}

fn integrate_dynamic(
    coef: &Coefficients,
    x0: &[f64],
    steps: usize,
    rng: &mut ChaCha8Rng,
    path: usize,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let n = coef.n;
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    visit(0, &x);
    for l in 0..steps {
        let xi: f64 = rng.sample(StandardNormal);
        let mut norm2 = 0.0;
        for i in 0..n {
            let a_row = &coef.drift[i * n..(i + 1) * n];
            let c_row = &coef.diffusion[i * n..(i + 1) * n];
            let mut drift = 0.0;
            let mut diffusion = 0.0;
            for j in 0..n {
                drift += a_row[j] * x[j];
                diffusion += c_row[j] * x[j];
            }
            next[i] = drift + diffusion * xi;
            norm2 += next[i] * next[i];
        }
        std::mem::swap(&mut x, &mut next);
        if !(norm2 <= BLOWUP_BOUND * BLOWUP_BOUND) {
            return Err(blowup(path, l + 1));
        }
        visit(l + 1, &x);
    }
    Ok(x)
}

/// `x' W x` for row-major `W`.
#[inline]
fn quadratic(w: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let row = &w[i * n..(i + 1) * n];
        let mut inner = 0.0;
        for j in 0..n {
            inner += row[j] * x[j];
        }
        acc += x[i] * inner;
    }
    acc
}

fn check_state(x0: &[f64], n: usize) -> Result<()> {
    if x0.len() != n {
        return Err(SlqError::DimensionMismatch {
            context: "initial state",
            expected: n.to_string(),
            actual: x0.len().to_string(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SlqError::NonFinite("initial state"));
    }
    Ok(())
}

/// First error in path order, so failures are reported deterministically.
fn collect_ordered<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Fully stored trajectories of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    n: usize,
    n_paths: usize,
    times: Vec<f64>,
    /// path-major, then time, then state component
    states: Vec<f64>,
    seed: u64,
    gain: FeedbackGain,
}

impl PathBatch {
    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn gain(&self) -> &FeedbackGain {
        &self.gain
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let len = self.times.len();
        let start = (path * len + step) * self.n;
        &self.states[start..start + self.n]
    }

    pub fn path(&self, path: usize) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.times.len()).map(move |l| self.state(path, l))
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.times.len() - 1)
    }
}

/// Per-path running costs and terminal states, without the full trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSummary {
    n: usize,
    /// `dt * sum_{l<L} x_l' W x_l` per path.
    costs: Vec<f64>,
    /// terminal states, path-major
    terminals: Vec<f64>,
}

impl BatchSummary {
    pub fn n_paths(&self) -> usize {
        self.costs.len()
    }

    pub fn path_costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        &self.terminals[path * self.n..(path + 1) * self.n]
    }

    /// Path average of the left-endpoint Riemann sums.
    pub fn running_cost(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len() as f64
    }

    /// Sample mean of `x(T)' ⊗ x(T)'` as a `1 x n^2` row.
    pub fn terminal_second_moment(&self) -> Matrix {
        second_moment(self.n, (0..self.n_paths()).map(|k| self.terminal(k)))
    }
}

fn second_moment<'a>(n: usize, terminals: impl ExactSizeIterator<Item = &'a [f64]>) -> Matrix {
    let count = terminals.len();
    let mut acc = vec![0.0; n * n];
    for x in terminals {
        for i in 0..n {
            for j in 0..n {
                acc[i * n + j] += x[i] * x[j];
            }
        }
    }
    for v in &mut acc {
        *v /= count as f64;
    }
    Matrix::from_row_slice(1, n * n, &acc)
}

/// Simulates `cfg.n_paths` closed-loop paths from `x0` and stores them.
pub fn simulate(
    sys: &SystemModel,
    k: &FeedbackGain,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<PathBatch> {
    cfg.validate()?;
    let (acl, ccl) = closed_loop(sys, k)?;
    check_state(x0, sys.state_dim())?;
    let coef = Coefficients::new(&acl, &ccl, cfg.dt);
    let steps = cfg.steps();
    let n = coef.n;
    let per_path = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(cfg.seed, path);
            let mut states = Vec::with_capacity((steps + 1) * n);
            integrate_path(&coef, x0, steps, &mut rng, path, |_, x| {
                states.extend_from_slice(x)
            })?;
            Ok(states)
        })
        .collect::<Vec<_>>();
    let per_path = collect_ordered(per_path)?;
    Ok(PathBatch {
        n,
        n_paths: cfg.n_paths,
        times: (0..=steps).map(|l| l as f64 * cfg.dt).collect(),
        states: per_path.concat(),
        seed: cfg.seed,
        gain: k.clone(),
    })
}

/// Simulates closed-loop paths and keeps only what policy evaluation needs.
///
/// Produces exactly the numbers [`running_cost`] and
/// [`terminal_second_moment`] would compute from [`simulate`] with the same
/// inputs.
pub fn simulate_summary(
    acl: &Matrix,
    ccl: &Matrix,
    weight: &SymMatrix,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<BatchSummary> {
    cfg.validate()?;
    let n = acl.nrows();
    check_state(x0, n)?;
    if weight.dim() != n || ccl.shape() != (n, n) || acl.ncols() != n {
        return Err(SlqError::DimensionMismatch {
            context: "simulate_summary",
            expected: format!("{n}x{n} coefficients and weight"),
            actual: format!(
                "ccl {}x{}, weight {}",
                ccl.nrows(),
                ccl.ncols(),
                weight.dim()
            ),
        });
    }
    let coef = Coefficients::new(acl, ccl, cfg.dt);
    let w = row_major(weight);
    let steps = cfg.steps();
    let dt = cfg.dt;
    let per_path = (0..cfg.n_paths.div_ceil(LANES))
        .into_par_iter()
        .flat_map_iter(|block| {
            let first = block * LANES;
            let count = LANES.min(cfg.n_paths - first);
            integrate_cost(&coef, &w, x0, steps, cfg.seed, first, count)
        })
        .map(|r| r.map(|(acc, terminal)| (acc * dt, terminal)))
        .collect::<Vec<_>>();
    let per_path = collect_ordered(per_path)?;
    let mut costs = Vec::with_capacity(per_path.len());
    let mut terminals = Vec::with_capacity(per_path.len() * n);
    for (c, x) in per_path {
        costs.push(c);
        terminals.extend_from_slice(&x);
    }
    Ok(BatchSummary {
        n,
        costs,
        terminals,
    })
}

fn row_major(w: &SymMatrix) -> Vec<f64> {
    w.to_full().transpose().as_slice().to_vec()
}

/// Path average of `dt * sum_{l<L} x_l' M x_l` with `M = Q + K'S + S'K + K'RK`
/// for the batch gain.
pub fn running_cost(batch: &PathBatch, cost: &crate::model::CostSpec) -> Result<f64> {
    let w = row_major(&cost.closed_loop_weight(&batch.gain)?);
    let steps = batch.times.len() - 1;
    let dt = batch.dt();
    let mut total = 0.0;
    for k in 0..batch.n_paths {
        let mut acc = 0.0;
        for l in 0..steps {
            acc += quadratic(&w, batch.state(k, l));
        }
        total += acc * dt;
    }
    Ok(total / batch.n_paths as f64)
}

/// Sample mean over paths of `x(T)' ⊗ x(T)'`, a `1 x n^2` row.
pub fn terminal_second_moment(batch: &PathBatch) -> Matrix {
    second_moment(batch.n, (0..batch.n_paths).map(|k| batch.terminal(k)))
}

/// Writes `path_id,t,x1..xn` rows with 17 significant digits.
pub fn write_paths_csv<W: Write>(batch: &PathBatch, mut out: W) -> io::Result<()> {
    write!(out, "path_id,t")?;
    for i in 1..=batch.n {
        write!(out, ",x{i}")?;
    }
    writeln!(out)?;
    for k in 0..batch.n_paths {
        for (l, t) in batch.times.iter().enumerate() {
            write!(out, "{k},{t:.16e}")?;
            for v in batch.state(k, l) {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// A closed-loop data source for trajectory-based learning.
///
/// Learners only observe trajectories through this trait, so anything
/// generic over `Plant` cannot read the drift matrix.
pub trait Plant: Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Runs `cfg.n_paths` paths under `u = Kx` from `x0`, accumulating the
    /// running cost with weight `weight`.
    fn run_batch(
        &self,
        k: &FeedbackGain,
        weight: &SymMatrix,
        x0: &[f64],
        cfg: &SimConfig,
    ) -> Result<BatchSummary>;

    /// Runs and records full trajectories.
    fn record(&self, k: &FeedbackGain, x0: &[f64], cfg: &SimConfig) -> Result<PathBatch>;

    /// Ground truth for diagnostics (stability checks, residual scoring).
    /// Never consulted by the learning computations themselves.
    fn reference_model(&self) -> Option<&SystemModel> {
        None
    }
}

impl Plant for SystemModel {
    fn state_dim(&self) -> usize {
        SystemModel::state_dim(self)
    }

    fn input_dim(&self) -> usize {
        SystemModel::input_dim(self)
    }

    fn run_batch(
        &self,
        k: &FeedbackGain,
        weight: &SymMatrix,
        x0: &[f64],
        cfg: &SimConfig,
    ) -> Result<BatchSummary> {
        let (acl, ccl) = closed_loop(self, k)?;
        simulate_summary(&acl, &ccl, weight, x0, cfg)
    }

    fn record(&self, k: &FeedbackGain, x0: &[f64], cfg: &SimConfig) -> Result<PathBatch> {
        simulate(self, k, x0, cfg)
    }

    fn reference_model(&self) -> Option<&SystemModel> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::CostSpec;
    use approx::assert_abs_diff_eq;

    fn scalar(a: f64, c: f64) -> SystemModel {
        let s = |v| Matrix::from_element(1, 1, v);
        SystemModel::new(s(a), s(0.0), s(c), s(0.0)).unwrap()
    }

    fn unit_cost() -> CostSpec {
        CostSpec::without_cross_term(SymMatrix::identity(1), SymMatrix::identity(1)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.0, 1.0, 1, 0).is_err());
        assert!(SimConfig::new(0.1, 0.01, 1, 0).is_err());
        assert!(SimConfig::new(0.1, 1.0, 0, 0).is_err());
        assert_eq!(SimConfig::new(1e-3, 1.0, 1, 0).unwrap().steps(), 1000);
    }

    #[test]
    fn zero_initial_state_stays_zero() {
        let sys = instances::reference_2d_system();
        let cfg = SimConfig::new(1e-2, 1.0, 8, 3).unwrap();
        let batch = simulate(
            &sys,
            &instances::reference_initial_gain(),
            &[0.0, 0.0],
            &cfg,
        )
        .unwrap();
        assert!(batch.states.iter().all(|&v| v == 0.0));
        assert_eq!(
            running_cost(&batch, &instances::reference_2d_cost()).unwrap(),
            0.0
        );
        assert!(terminal_second_moment(&batch).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_free_path_follows_euler_recursion() {
        let sys = scalar(-1.0, 0.0);
        let cfg = SimConfig::new(1e-3, 1.0, 1, 9).unwrap();
        let batch = simulate(&sys, &FeedbackGain::zeros(1, 1), &[1.0], &cfg).unwrap();
        let expected = (1.0f64 - 1e-3).powi(1000);
        assert_abs_diff_eq!(batch.terminal(0)[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.36770, epsilon = 1e-5);
        let m = terminal_second_moment(&batch);
        assert_abs_diff_eq!(m[0], batch.terminal(0)[0].powi(2), epsilon = 0.0);
    }

    #[test]
    fn running_cost_of_decaying_exponential() {
        let sys = scalar(-1.0, 0.0);
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        let mut errors = Vec::new();
        for dt in [1e-2, 1e-3, 1e-4] {
            let cfg = SimConfig::new(dt, 1.0, 1, 0).unwrap();
            let batch = simulate(&sys, &FeedbackGain::zeros(1, 1), &[1.0], &cfg).unwrap();
            errors.push((running_cost(&batch, &unit_cost()).unwrap() - exact).abs());
        }
        assert!(errors[2] < 1e-4, "{errors:?}");
        // first order: each tenfold refinement shrinks the error about tenfold
        for pair in errors.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((8.0..12.0).contains(&ratio), "{errors:?}");
        }
    }

    #[test]
    fn running_cost_zero_weight() {
        let sys = scalar(-1.0, 0.3);
        let cost = CostSpec::unchecked(
            SymMatrix::zeros(1),
            Matrix::zeros(1, 1),
            SymMatrix::identity(1),
        )
        .unwrap();
        let batch = simulate(
            &sys,
            &FeedbackGain::zeros(1, 1),
            &[1.0],
            &SimConfig::new(1e-2, 1.0, 4, 0).unwrap(),
        )
        .unwrap();
        assert_eq!(running_cost(&batch, &cost).unwrap(), 0.0);
    }

    #[test]
    fn terminal_moment_single_scalar_path() {
        let batch = PathBatch {
            n: 1,
            n_paths: 1,
            times: vec![0.0, 1.0],
            states: vec![1.0, 0.5],
            seed: 0,
            gain: FeedbackGain::zeros(1, 1),
        };
        assert_eq!(terminal_second_moment(&batch)[0], 0.25);
    }

    #[test]
    fn summary_matches_stored_batch_bitwise() {
        let sys = instances::reference_2d_system();
        let k = instances::reference_initial_gain();
        let cost = instances::reference_2d_cost();
        let cfg = SimConfig::new(1e-2, 1.0, 64, 77).unwrap();
        let batch = simulate(&sys, &k, &[2.0, 3.0], &cfg).unwrap();
        let weight = cost.closed_loop_weight(&k).unwrap();
        let summary = sys.run_batch(&k, &weight, &[2.0, 3.0], &cfg).unwrap();
        assert_eq!(
            summary.running_cost().to_bits(),
            running_cost(&batch, &cost).unwrap().to_bits()
        );
        assert_eq!(
            summary.terminal_second_moment(),
            terminal_second_moment(&batch)
        );
    }

    #[test]
    fn same_seed_same_batch() {
        let sys = instances::reference_2d_system();
        let k = instances::reference_initial_gain();
        let cfg = SimConfig::new(1e-2, 0.5, 16, 5).unwrap();
        let a = simulate(&sys, &k, &[2.0, 3.0], &cfg).unwrap();
        let b = simulate(&sys, &k, &[2.0, 3.0], &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&sys, &k, &[2.0, 3.0], &cfg.with_seed(6)).unwrap();
        assert_ne!(a.states, c.states);
        // paths are independent of how many siblings were simulated
        let fewer = simulate(&sys, &k, &[2.0, 3.0], &cfg.with_paths(4)).unwrap();
        assert_eq!(fewer.state(3, 50), a.state(3, 50));
    }

    #[test]
    fn blowup_is_reported() {
        let sys = scalar(50.0, 0.0);
        let cfg = SimConfig::new(1e-2, 10.0, 2, 0).unwrap();
        let err = simulate(&sys, &FeedbackGain::zeros(1, 1), &[1.0], &cfg).unwrap_err();
        assert!(matches!(err, SlqError::NumericalBlowup { path: 0, .. }));
    }

    #[test]
    fn csv_dump_layout() {
        let sys = scalar(-1.0, 0.0);
        let batch = simulate(
            &sys,
            &FeedbackGain::zeros(1, 1),
            &[1.0],
            &SimConfig::new(0.5, 1.0, 2, 0).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&batch, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path_id,t,x1");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[3].starts_with("0,1.0000000000000000e0,"));
        assert!(lines[4].starts_with("1,0.0000000000000000e0,1.0000000000000000e0"));
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<_> = (0..100).map(|t| derive_seed(42, t)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
    }
}
