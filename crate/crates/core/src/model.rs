//! Problem data: dynamics `dX = (AX + Bu)ds + (CX + Du)dW`, quadratic cost
//! weights, feedback gains and value matrices.

use crate::error::{Result, SlqError};
use crate::lyapunov;
use crate::matlib::{ensure_finite, is_positive_definite, Matrix, SymMatrix, PD_TOL};

/// Constant coefficients `[A, C; B, D]` of the controlled Itô system.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    d: Matrix,
}

fn mismatch(context: &'static str, expected: (usize, usize), got: &Matrix) -> SlqError {
    SlqError::DimensionMismatch {
        context,
        expected: format!("{}x{}", expected.0, expected.1),
        actual: format!("{}x{}", got.nrows(), got.ncols()),
    }
}

impl SystemModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 {
            return Err(SlqError::InvalidInput(
                "state and input dimensions must be positive".into(),
            ));
        }
        if a.shape() != (n, n) {
            return Err(mismatch("system matrix A", (n, n), &a));
        }
        if b.shape() != (n, m) {
            return Err(mismatch("system matrix B", (n, m), &b));
        }
        if c.shape() != (n, n) {
            return Err(mismatch("system matrix C", (n, n), &c));
        }
        if d.shape() != (n, m) {
            return Err(mismatch("system matrix D", (n, m), &d));
        }
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        ensure_finite(&c, "C")?;
        ensure_finite(&d, "D")?;
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Same system with a different drift matrix.
    pub fn with_drift(&self, a: Matrix) -> Result<Self> {
        Self::new(a, self.b.clone(), self.c.clone(), self.d.clone())
    }

    /// The coefficients a partially model-free learner is allowed to see.
    pub fn input_model(&self) -> InputModel {
        InputModel {
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }
}

/// `B`, `C`, `D` without the drift matrix `A`.
///
/// Policy improvement needs only these; `A` enters data-driven evaluation
/// through simulated trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct InputModel {
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl InputModel {
    pub fn state_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Weights `Q`, `S`, `R` of the running cost `x'Qx + 2u'Sx + u'Ru`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    q: SymMatrix,
    s: Matrix,
    r: SymMatrix,
}

impl CostSpec {
    /// Checked constructor: requires `R > 0` and `Q - S'R^{-1}S > 0`.
    pub fn new(q: SymMatrix, s: Matrix, r: SymMatrix) -> Result<Self> {
        let cost = Self::unchecked(q, s, r)?;
        cost.check_definiteness()?;
        Ok(cost)
    }

    /// Builds a cost with only dimension checks; see [`CostSpec::check_definiteness`].
    pub fn unchecked(q: SymMatrix, s: Matrix, r: SymMatrix) -> Result<Self> {
        let (n, m) = (q.dim(), r.dim());
        if s.shape() != (m, n) {
            return Err(mismatch("cost cross weight S", (m, n), &s));
        }
        ensure_finite(&s, "S")?;
        Ok(Self { q, s, r })
    }

    /// Cost with `S = 0`.
    pub fn without_cross_term(q: SymMatrix, r: SymMatrix) -> Result<Self> {
        let s = Matrix::zeros(r.dim(), q.dim());
        Self::new(q, s, r)
    }

    pub fn check_definiteness(&self) -> Result<()> {
        if !is_positive_definite(&self.r, PD_TOL) {
            return Err(SlqError::InvalidInput("R is not positive definite".into()));
        }
        let r_inv = self
            .r
            .to_full()
            .try_inverse()
            .ok_or_else(|| SlqError::InvalidInput("R is singular".into()))?;
        let schur = self.q.to_full() - self.s.transpose() * r_inv * &self.s;
        let schur = SymMatrix::symmetrize(&schur)?;
        if !is_positive_definite(&schur, PD_TOL) {
            return Err(SlqError::InvalidInput(
                "Q - S'R^{-1}S is not positive definite".into(),
            ));
        }
        Ok(())
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn s(&self) -> &Matrix {
        &self.s
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    pub fn state_dim(&self) -> usize {
        self.q.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.r.dim()
    }

    /// Running-cost weight `Q + K'S + S'K + K'RK` under the law `u = Kx`.
    pub fn closed_loop_weight(&self, k: &FeedbackGain) -> Result<SymMatrix> {
        let km = k.matrix();
        if km.shape() != (self.input_dim(), self.state_dim()) {
            return Err(mismatch(
                "closed-loop weight gain",
                (self.input_dim(), self.state_dim()),
                km,
            ));
        }
        let cross = km.transpose() * &self.s;
        let w =
            self.q.to_full() + &cross + cross.transpose() + km.transpose() * self.r.to_full() * km;
        SymMatrix::symmetrize(&w)
    }
}

/// State-feedback gain `K` (`m x n`) of the law `u = Kx`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackGain(Matrix);

impl FeedbackGain {
    pub fn new(k: Matrix) -> Result<Self> {
        ensure_finite(&k, "feedback gain")?;
        Ok(Self(k))
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self(Matrix::zeros(m, n))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    fn check_for(&self, sys_n: usize, sys_m: usize) -> Result<()> {
        if self.0.shape() != (sys_m, sys_n) {
            return Err(mismatch("feedback gain", (sys_m, sys_n), &self.0));
        }
        Ok(())
    }
}

/// Quadratic value `x'Px`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueMatrix(SymMatrix);

impl ValueMatrix {
    pub fn new(p: SymMatrix) -> Self {
        Self(p)
    }

    pub fn sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn to_full(&self) -> Matrix {
        self.0.to_full()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += x[i] * self.0.get(i, j) * x[j];
            }
        }
        acc
    }
}

/// Closed-loop coefficients `(A + BK, C + DK)`.
pub fn closed_loop(sys: &SystemModel, k: &FeedbackGain) -> Result<(Matrix, Matrix)> {
    k.check_for(sys.state_dim(), sys.input_dim())?;
    let km = k.matrix();
    Ok((sys.a() + sys.b() * km, sys.c() + sys.d() * km))
}

/// Where a verified stabilizer came from.
#[derive(Clone, Debug, PartialEq)]
pub enum GainSource {
    Zero,
    /// `K = -(D'D)^{-1} D'C`.
    DiffusionCancelling,
    Candidate(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stabilizability {
    Verified {
        gain: FeedbackGain,
        source: GainSource,
    },
    /// `B = D = 0` and the open loop is unstable, so no gain can help.
    Fails,
    /// No tried gain stabilizes; stabilizability is undecided.
    NotVerified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub stabilizable: Stabilizability,
    /// `None` when `R > 0` and `Q - S'R^{-1}S > 0`, otherwise the reason.
    pub cost_definiteness: Option<String>,
}

impl ValidationReport {
    pub fn all_hold(&self) -> bool {
        matches!(self.stabilizable, Stabilizability::Verified { .. })
            && self.cost_definiteness.is_none()
    }
}

/// Gain `-(D'D)^{-1} D'C` when `D` has full column rank.
pub fn diffusion_cancelling_gain(d: &Matrix, c: &Matrix) -> Option<FeedbackGain> {
    let dtd = d.transpose() * d;
    let chol = dtd.cholesky()?;
    let min_pivot = chol.l_dirty().diagonal().min();
    if min_pivot * min_pivot <= 1e-12 * d.norm_squared().max(f64::MIN_POSITIVE) {
        return None;
    }
    let k = -chol.solve(&(d.transpose() * c));
    FeedbackGain::new(k).ok()
}

/// Checks the standing assumptions: mean-square stabilizability (by trying
/// `K = 0`, the diffusion-cancelling gain and `candidates` in that order)
/// and definiteness of the cost.
pub fn validate(
    sys: &SystemModel,
    cost: &CostSpec,
    candidates: &[FeedbackGain],
) -> ValidationReport {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mut tries = vec![(FeedbackGain::zeros(m, n), GainSource::Zero)];
    if let Some(k) = diffusion_cancelling_gain(sys.d(), sys.c()) {
        tries.push((k, GainSource::DiffusionCancelling));
    }
    tries.extend(
        candidates
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, k)| (k, GainSource::Candidate(i))),
    );

    let mut stabilizable = Stabilizability::NotVerified;
    for (gain, source) in tries {
        if lyapunov::is_stabilizer(sys, &gain) {
            stabilizable = Stabilizability::Verified { gain, source };
            break;
        }
    }
    if matches!(stabilizable, Stabilizability::NotVerified)
        && sys.b().amax() == 0.0
        && sys.d().amax() == 0.0
    {
        // the closed loop does not depend on K, so the K = 0 test was decisive
        stabilizable = Stabilizability::Fails;
    }

    let cost_definiteness = if cost.state_dim() != n || cost.input_dim() != m {
        Some(format!(
            "cost dimensions {}x{} do not match system {n}x{m}",
            cost.state_dim(),
            cost.input_dim()
        ))
    } else {
        cost.check_definiteness().err().map(|e| e.to_string())
    };

    ValidationReport {
        stabilizable,
        cost_definiteness,
    }
}
