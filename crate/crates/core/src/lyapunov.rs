//! Model-based oracles: the generalized Lyapunov equation
//!
//! ```text
//! Acl' P + P Acl + Ccl' P Ccl + Λ = 0
//! ```
//!
//! its use as a mean-square stability test, the policy-improvement gain,
//! the Riccati residual and exact (trajectory-free) policy iteration.

use crate::error::{Result, SlqError};
use crate::matlib::{
    condition_number, duplication, is_positive_definite, kron, least_squares, vec,
    vec_plus_inverse, Matrix, SymMatrix, PD_TOL,
};
use crate::model::{closed_loop, CostSpec, FeedbackGain, SystemModel, ValueMatrix};

/// Largest condition number accepted for `R + D'PD`.
const INNER_COND_MAX: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct LyapunovProblem {
    /// Closed-loop drift `A + BK`.
    pub acl: Matrix,
    /// Closed-loop diffusion `C + DK`.
    pub ccl: Matrix,
    pub lambda: SymMatrix,
}

/// One step of policy iteration: the evaluated value and the gain improved from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub value: ValueMatrix,
    pub gain: FeedbackGain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiTrace {
    pub iterates: Vec<Iterate>,
    /// Frobenius norm of the Riccati residual at each value; NaN when no
    /// reference model was available to score against.
    pub residuals: Vec<f64>,
    /// `||P(i+1) - P(i)||_F`; NaN for the first iterate.
    pub deltas: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the iterate reported as the result.
    pub selected: usize,
}

impl PiTrace {
    pub(crate) fn empty() -> Self {
        Self {
            iterates: Vec::new(),
            residuals: Vec::new(),
            deltas: Vec::new(),
            converged: false,
            iterations: 0,
            selected: 0,
        }
    }

    pub(crate) fn push(&mut self, it: Iterate, delta: f64, residual: f64) {
        self.iterates.push(it);
        self.deltas.push(delta);
        self.residuals.push(residual);
        self.iterations = self.iterates.len();
        self.selected = self.iterations - 1;
    }

    pub fn final_iterate(&self) -> &Iterate {
        &self.iterates[self.selected]
    }

    pub fn final_value(&self) -> &ValueMatrix {
        &self.final_iterate().value
    }

    pub fn final_gain(&self) -> &FeedbackGain {
        &self.final_iterate().gain
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals[self.selected]
    }
}

/// The `n^2 x n^2` matrix of `P -> Acl'P + P Acl + Ccl'P Ccl` acting on `vec(P)`.
pub fn lyapunov_operator(acl: &Matrix, ccl: &Matrix) -> Matrix {
    let n = acl.nrows();
    let eye = Matrix::identity(n, n);
    let acl_t = acl.transpose();
    let ccl_t = ccl.transpose();
    kron(&eye, &acl_t) + kron(&acl_t, &eye) + kron(&ccl_t, &ccl_t)
}

/// Solves the generalized Lyapunov equation over symmetric unknowns.
pub fn solve_lyapunov(prob: &LyapunovProblem) -> Result<ValueMatrix> {
    let n = prob.lambda.dim();
    for (m, what) in [
        (&prob.acl, "closed-loop drift"),
        (&prob.ccl, "closed-loop diffusion"),
    ] {
        if m.shape() != (n, n) {
            return Err(SlqError::DimensionMismatch {
                context: what,
                expected: format!("{n}x{n}"),
                actual: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    let reduced = lyapunov_operator(&prob.acl, &prob.ccl) * duplication(n);
    let rhs = -vec(&prob.lambda.to_full());
    let ls = least_squares(&reduced, &rhs).map_err(|e| match e {
        SlqError::RankDeficient { .. } => SlqError::SingularOperator,
        other => other,
    })?;
    Ok(ValueMatrix::new(vec_plus_inverse(
        ls.solution.as_slice(),
        n,
    )?))
}

/// Mean-square stabilizer test: the Lyapunov equation with `Λ = I` has a
/// positive-definite solution.
pub fn is_stabilizer(sys: &SystemModel, k: &FeedbackGain) -> bool {
    let Ok((acl, ccl)) = closed_loop(sys, k) else {
        return false;
    };
    let prob = LyapunovProblem {
        acl,
        ccl,
        lambda: SymMatrix::identity(sys.state_dim()),
    };
    match solve_lyapunov(&prob) {
        Ok(p) => is_positive_definite(p.sym(), PD_TOL),
        Err(_) => false,
    }
}

/// `-(R + D'PD)^{-1} (B'P + D'PC + S)` from the input coefficients only.
pub fn improve_gain(
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    cost: &CostSpec,
    p: &ValueMatrix,
) -> Result<FeedbackGain> {
    let (inner, coupling) = riccati_terms(b, c, d, cost, p)?;
    let k = -solve_inner(&inner, &coupling)?;
    FeedbackGain::new(k)
}

/// Policy improvement step.
pub fn improve_policy(sys: &SystemModel, cost: &CostSpec, p: &ValueMatrix) -> Result<FeedbackGain> {
    improve_gain(sys.b(), sys.c(), sys.d(), cost, p)
}

/// Returns `(R + D'PD, B'P + D'PC + S)`.
fn riccati_terms(
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    cost: &CostSpec,
    p: &ValueMatrix,
) -> Result<(Matrix, Matrix)> {
    let n = p.dim();
    if b.nrows() != n || cost.state_dim() != n || cost.input_dim() != b.ncols() {
        return Err(SlqError::DimensionMismatch {
            context: "policy improvement",
            expected: format!("state dimension {n}"),
            actual: format!(
                "B {}x{}, cost {}x{}",
                b.nrows(),
                b.ncols(),
                cost.state_dim(),
                cost.input_dim()
            ),
        });
    }
    let pm = p.to_full();
    let dtp = d.transpose() * &pm;
    let inner = cost.r().to_full() + &dtp * d;
    let coupling = b.transpose() * &pm + &dtp * c + cost.s();
    Ok((inner, coupling))
}

fn solve_inner(inner: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if !inner.iter().all(|v| v.is_finite()) || condition_number(inner) > INNER_COND_MAX {
        return Err(SlqError::SingularInnerMatrix);
    }
    inner
        .clone()
        .lu()
        .solve(rhs)
        .ok_or(SlqError::SingularInnerMatrix)
}

/// Value of a stabilizing gain: solves the Lyapunov equation with
/// `Λ = Q + K'S + S'K + K'RK`.
pub fn evaluate_policy_exact(
    sys: &SystemModel,
    cost: &CostSpec,
    k: &FeedbackGain,
) -> Result<ValueMatrix> {
    let (acl, ccl) = closed_loop(sys, k)?;
    let lambda = cost.closed_loop_weight(k)?;
    let p = solve_lyapunov(&LyapunovProblem { acl, ccl, lambda }).map_err(|e| match e {
        SlqError::SingularOperator => SlqError::NotStabilizing { iteration: None },
        other => other,
    })?;
    // Λ > 0 under the cost assumptions, so P > 0 exactly when K stabilizes
    if !is_positive_definite(p.sym(), 0.0) {
        return Err(SlqError::NotStabilizing { iteration: None });
    }
    Ok(p)
}

/// Riccati residual
///
/// ```text
/// R(P) = A'P + PA + C'PC + Q - (PB + C'PD + S')(R + D'PD)^{-1}(B'P + D'PC + S)
/// ```
///
/// and its Frobenius norm.
pub fn sare_residual(
    sys: &SystemModel,
    cost: &CostSpec,
    p: &ValueMatrix,
) -> Result<(SymMatrix, f64)> {
    let (inner, coupling) = riccati_terms(sys.b(), sys.c(), sys.d(), cost, p)?;
    let pm = p.to_full();
    let a = sys.a();
    let c = sys.c();
    let linear = a.transpose() * &pm + &pm * a + c.transpose() * &pm * c + cost.q().to_full();
    let correction = coupling.transpose() * solve_inner(&inner, &coupling)?;
    let res = SymMatrix::symmetrize(&(linear - correction))?;
    let norm = res.frobenius_norm();
    Ok((res, norm))
}

/// Model-based policy iteration: alternate [`evaluate_policy_exact`] and
/// [`improve_policy`] until `||P(i+1) - P(i)||_F < eps`.
///
/// Every improved gain is re-checked with [`is_stabilizer`]; a failure
/// aborts with the offending iteration number.
pub fn policy_iteration_exact(
    sys: &SystemModel,
    cost: &CostSpec,
    k0: &FeedbackGain,
    eps: f64,
    max_iter: usize,
) -> Result<PiTrace> {
    if !(eps > 0.0) {
        return Err(SlqError::InvalidInput(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if !is_stabilizer(sys, k0) {
        return Err(SlqError::NotStabilizing { iteration: Some(0) });
    }
    let mut trace = PiTrace::empty();
    let mut gain = k0.clone();
    let mut previous: Option<ValueMatrix> = None;
    for i in 0..max_iter {
        let value = evaluate_policy_exact(sys, cost, &gain).map_err(|e| match e {
            SlqError::NotStabilizing { .. } => SlqError::NotStabilizing { iteration: Some(i) },
            other => other,
        })?;
        let delta = previous
            .as_ref()
            .map_or(f64::NAN, |prev| (value.to_full() - prev.to_full()).norm());
        let next = improve_policy(sys, cost, &value)?;
        if !is_stabilizer(sys, &next) {
            return Err(SlqError::NotStabilizing {
                iteration: Some(i + 1),
            });
        }
        let (_, residual) = sare_residual(sys, cost, &value)?;
        trace.push(
            Iterate {
                value: value.clone(),
                gain: next.clone(),
            },
            delta,
            residual,
        );
        if delta < eps {
            trace.converged = true;
            return Ok(trace);
        }
        previous = Some(value);
        gain = next;
    }
    Err(SlqError::MaxIterationsExceeded {
        iterations: max_iter,
        trace: Box::new(trace),
    })
}
