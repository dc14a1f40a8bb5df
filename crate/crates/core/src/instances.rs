//! Reference problem instances.
//!
//! The two-dimensional instance has one input:
//!
//! ```text
//! A = [0.3 0.7; -0.9 0.5]   B = [0.2; 0]   C = [0.05 0.03; 0.05 0.02]   D = [0.05; 0.06]
//! Q = diag(3, 2)            S = 0          R = 1.25
//! ```
//!
//! with initial stabilizer `K0 = (-8.3809, 7.4036)` and initial state `(2, 3)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::lyapunov::{is_stabilizer, lyapunov_operator};
use crate::matlib::{Matrix, SymMatrix};
use crate::model::{closed_loop, CostSpec, FeedbackGain, SystemModel, ValueMatrix};

pub fn reference_2d_system() -> SystemModel {
    SystemModel::new(
        Matrix::from_row_slice(2, 2, &[0.3, 0.7, -0.9, 0.5]),
        Matrix::from_row_slice(2, 1, &[0.2, 0.0]),
        Matrix::from_row_slice(2, 2, &[0.05, 0.03, 0.05, 0.02]),
        Matrix::from_row_slice(2, 1, &[0.05, 0.06]),
    )
    .expect("reference system is well formed")
}

pub fn reference_2d_cost() -> CostSpec {
    CostSpec::without_cross_term(
        SymMatrix::from_lower(2, vec![3.0, 0.0, 2.0]).expect("valid Q"),
        SymMatrix::from_lower(1, vec![1.25]).expect("valid R"),
    )
    .expect("reference cost satisfies the definiteness assumptions")
}

pub fn reference_initial_gain() -> FeedbackGain {
    FeedbackGain::new(Matrix::from_row_slice(1, 2, &[-8.3809, 7.4036])).expect("finite gain")
}

pub fn reference_initial_state() -> Vec<f64> {
    vec![2.0, 3.0]
}

/// Reference optimal value, rounded to four decimals.
pub fn reference_p_star() -> ValueMatrix {
    ValueMatrix::new(SymMatrix::from_lower(2, vec![61.1422, -35.7578, 81.6610]).expect("valid P*"))
}

/// Reference optimal gain, rounded to four decimals.
pub fn reference_k_star() -> FeedbackGain {
    FeedbackGain::new(Matrix::from_row_slice(1, 2, &[-8.3854, 4.7642])).expect("finite gain")
}

/// Reference drift estimate from the least-squares baseline.
pub fn reference_a_hat() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.2984, 0.7015, -0.9036, 0.4988])
}

/// Scalar noise-free instance `a = -1, b = 1, c = d = 0, q = r = 1, s = 0`
/// whose Riccati root is `sqrt(2) - 1`.
pub fn scalar_system() -> SystemModel {
    let s = |v| Matrix::from_element(1, 1, v);
    SystemModel::new(s(-1.0), s(1.0), s(0.0), s(0.0)).expect("scalar system is well formed")
}

pub fn scalar_cost() -> CostSpec {
    CostSpec::without_cross_term(SymMatrix::identity(1), SymMatrix::identity(1))
        .expect("scalar cost is valid")
}

/// A randomly drawn problem together with a known stabilizer.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub system: SystemModel,
    pub cost: CostSpec,
    pub k0: FeedbackGain,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

fn gram<R: Rng + ?Sized>(rng: &mut R, n: usize, floor: f64) -> SymMatrix {
    let g = gaussian(rng, n, n, 1.0);
    SymMatrix::symmetrize(&(&g * g.transpose() + Matrix::identity(n, n) * floor))
        .expect("square input")
}

/// Largest real part in the spectrum of `P -> Acl'P + P Acl + Ccl'P Ccl`;
/// negative exactly for mean-square stable closed loops.
pub fn second_moment_abscissa(sys: &SystemModel, k: &FeedbackGain) -> f64 {
    match closed_loop(sys, k) {
        Ok((acl, ccl)) => lyapunov_operator(&acl, &ccl)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max),
        Err(_) => f64::NAN,
    }
}

/// Largest real part of the generator of `E[x⊗x⊗x⊗x]` under `u = Kx`.
/// Negative exactly when the quadratic running cost has finite variance
/// along every path, so Monte Carlo averages of it converge at the usual rate.
pub fn fourth_moment_abscissa(sys: &SystemModel, k: &FeedbackGain) -> f64 {
    let Ok((acl, ccl)) = closed_loop(sys, k) else {
        return f64::NAN;
    };
    let n = acl.nrows();
    let slot = |mats: [&Matrix; 4]| {
        mats[0]
            .kronecker(mats[1])
            .kronecker(mats[2])
            .kronecker(mats[3])
    };
    let eye = Matrix::identity(n, n);
    let mut gen = Matrix::zeros(n.pow(4), n.pow(4));
    for i in 0..4 {
        let mut mats = [&eye; 4];
        mats[i] = &acl;
        gen += slot(mats);
        for j in i + 1..4 {
            let mut mats = [&eye; 4];
            mats[i] = &ccl;
            mats[j] = &ccl;
            gen += slot(mats);
        }
    }
    // Restrict to symmetric tensors: one orthonormal column per multiset of
    // indices. The full Kronecker sum has heavily repeated eigenvalues.
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut seen = std::collections::BTreeMap::new();
    for flat in 0..n.pow(4) {
        let mut idx = [flat / n.pow(3), flat / n.pow(2) % n, flat / n % n, flat % n];
        idx.sort_unstable();
        let col = *seen.entry(idx).or_insert_with(|| {
            columns.push(vec![0.0; n.pow(4)]);
            columns.len() - 1
        });
        columns[col][flat] = 1.0;
    }
    let basis = Matrix::from_fn(n.pow(4), columns.len(), |r, c| {
        let norm = columns[c].iter().sum::<f64>().sqrt();
        columns[c][r] / norm
    });
    let reduced = basis.transpose() * gen * &basis;
    match reduced.try_schur(1e-14, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max),
        None => f64::NAN,
    }
}

/// Draws a mean-square stable closed loop `(Acl, Ccl)` and a gain `K0`,
/// then sets `A = Acl - B K0` and `C = Ccl - D K0` for random `B`, `D`.
/// The cost has `Q, R > 0` and a small cross term when admissible.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> RandomInstance {
    loop {
        let raw = gaussian(rng, n, n, 0.6);
        let abscissa = raw
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = abscissa + rng.random_range(0.3..1.5);
        let acl = raw - Matrix::identity(n, n) * shift;
        let mut ccl = gaussian(rng, n, n, 0.4);
        let b = gaussian(rng, n, m, 1.0);
        let d = gaussian(rng, n, m, 0.3);
        let k0 = FeedbackGain::new(gaussian(rng, m, n, 1.0)).expect("finite gain");
        let mut system = None;
        for _ in 0..20 {
            let candidate = SystemModel::new(
                &acl - &b * k0.matrix(),
                b.clone(),
                &ccl - &d * k0.matrix(),
                d.clone(),
            )
            .expect("conforming dimensions");
            if is_stabilizer(&candidate, &k0) {
                system = Some(candidate);
                break;
            }
            ccl *= 0.5;
        }
        let Some(system) = system else { continue };
        let q = gram(rng, n, 0.5);
        let r = gram(rng, m, 0.5);
        let s = gaussian(rng, m, n, 0.1);
        let cost = CostSpec::new(q.clone(), s, r.clone())
            .or_else(|_| CostSpec::without_cross_term(q, r))
            .expect("Q and R are positive definite");
        return RandomInstance { system, cost, k0 };
    }
}
