use slq_core::instances::{reference_2d_cost, reference_2d_system, reference_initial_gain};
use slq_core::lyapunov::{evaluate_policy_exact, is_stabilizer, policy_iteration_exact};
use slq_core::matlib::{Matrix, SymMatrix};
use slq_core::model::{FeedbackGain, SystemModel};
use slq_core::rlpi::{
    build_evaluation_system, run, run_on_model, solve_evaluation, ExcitationPlan, RlOptions,
};
use slq_core::sde::{BatchSummary, PathBatch, Plant, SimConfig};
use slq_core::Result;

/// Simulates the true system but exposes no model at all.
struct Blind(SystemModel);

impl Plant for Blind {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn run_batch(
        &self,
        k: &FeedbackGain,
        weight: &SymMatrix,
        x0: &[f64],
        cfg: &SimConfig,
    ) -> Result<BatchSummary> {
        self.0.run_batch(k, weight, x0, cfg)
    }

    fn record(&self, k: &FeedbackGain, x0: &[f64], cfg: &SimConfig) -> Result<PathBatch> {
        self.0.record(k, x0, cfg)
    }
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn trajectory_evaluation_agrees_with_lyapunov_solve() {
    let sys = reference_2d_system();
    let cost = reference_2d_cost();
    let k = reference_initial_gain();
    let plan = ExcitationPlan::default_for(2, 1.0, 0).unwrap();
    let cfg = SimConfig::new(1e-3, 1.0, 20_000, 3).unwrap();
    let p = solve_evaluation(
        &build_evaluation_system(&sys, &cost, &k, &plan, &cfg).unwrap(),
        2,
    )
    .unwrap();
    let exact = evaluate_policy_exact(&sys, &cost, &k).unwrap();
    assert!(rel(&p.to_full(), &exact.to_full()) < 0.05);
}

#[test]
fn drift_reaches_learner_only_through_trajectories() {
    let sys = reference_2d_system();
    let cost = reference_2d_cost();
    let plan = ExcitationPlan::default_for(2, 1.0, 1).unwrap();
    let cfg = SimConfig::new(1e-2, 1.0, 300, 4).unwrap();
    let opts = RlOptions {
        max_iter: 6,
        ..RlOptions::default()
    };
    let known = sys.input_model();
    let with_model = run(
        &sys,
        &known,
        &cost,
        &reference_initial_gain(),
        &plan,
        &cfg,
        &opts,
    )
    .unwrap();
    let blind = run(
        &Blind(sys.clone()),
        &known,
        &cost,
        &reference_initial_gain(),
        &plan,
        &cfg,
        &opts,
    )
    .unwrap();
    assert_eq!(with_model.iterates, blind.iterates);
    assert!(blind.residuals.iter().all(|r| r.is_nan()));

    let garbage = sys.with_drift(Matrix::from_element(2, 2, 1e6)).unwrap();
    let from_garbage = run(
        &Blind(sys),
        &garbage.input_model(),
        &cost,
        &reference_initial_gain(),
        &plan,
        &cfg,
        &opts,
    )
    .unwrap();
    assert_eq!(from_garbage.iterates, with_model.iterates);
}

#[test]
fn noise_free_run_tracks_exact_iterates() {
    let base = reference_2d_system();
    let sys = SystemModel::new(
        base.a().clone(),
        base.b().clone(),
        Matrix::zeros(2, 2),
        Matrix::zeros(2, 1),
    )
    .unwrap();
    let cost = reference_2d_cost();
    let k0 = reference_initial_gain();
    let plan = ExcitationPlan::default_for(2, 1.0, 0).unwrap();
    let exact = policy_iteration_exact(&sys, &cost, &k0, 1e-10, 100).unwrap();
    let worst = |dt: f64| {
        let cfg = SimConfig::new(dt, 1.0, 1, 0).unwrap();
        let opts = RlOptions {
            eps: 1e-9,
            max_iter: 8,
            ..RlOptions::default()
        };
        let trace = run_on_model(&sys, &cost, &k0, &plan, &cfg, &opts).unwrap();
        trace
            .iterates
            .iter()
            .zip(&exact.iterates)
            .map(|(r, e)| rel(&r.value.to_full(), &e.value.to_full()))
            .fold(0.0, f64::max)
    };
    let coarse = worst(1e-3);
    let fine = worst(5e-4);
    assert!(coarse < 1e-2, "{coarse}");
    assert!((fine / coarse - 0.5).abs() < 0.1, "{coarse} {fine}");
}

#[test]
fn rl_trace_is_a_stabilizer_chain_and_reproducible() {
    let sys = reference_2d_system();
    let cost = reference_2d_cost();
    let plan = ExcitationPlan::default_for(2, 1.0, 2).unwrap();
    let cfg = SimConfig::new(2e-3, 1.0, 2000, 17).unwrap();
    let opts = RlOptions::default();
    let a = run_on_model(&sys, &cost, &reference_initial_gain(), &plan, &cfg, &opts).unwrap();
    let b = run_on_model(&sys, &cost, &reference_initial_gain(), &plan, &cfg, &opts).unwrap();
    assert!(a.converged);
    assert!(a.iterates.iter().all(|it| is_stabilizer(&sys, &it.gain)));
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}
