use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slq_core::instances::random_instance;
use slq_core::lyapunov::{
    improve_policy, is_stabilizer, policy_iteration_exact, sare_residual, solve_lyapunov,
    LyapunovProblem,
};
use slq_core::matlib::{kron, vec, Matrix, SymMatrix};
use slq_core::model::closed_loop;

const EPS: f64 = 1e-9;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_pi_invariants(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, m);
        let trace = policy_iteration_exact(&inst.system, &inst.cost, &inst.k0, EPS, 200).unwrap();
        prop_assert!(trace.converged);
        for it in &trace.iterates {
            prop_assert!(is_stabilizer(&inst.system, &it.gain));
        }
        for pair in trace.iterates.windows(2) {
            let diff = SymMatrix::symmetrize(&(pair[0].value.to_full() - pair[1].value.to_full())).unwrap();
            let scale = pair[0].value.to_full().norm().max(1.0);
            prop_assert!(diff.min_eigenvalue() >= -1e-8 * scale, "min eig {}", diff.min_eigenvalue());
        }
        let last = trace.final_iterate();
        let again = improve_policy(&inst.system, &inst.cost, &last.value).unwrap();
        prop_assert!((again.matrix() - last.gain.matrix()).amax() < 1e-8);
        let (_, residual) = sare_residual(&inst.system, &inst.cost, &last.value).unwrap();
        prop_assert!(residual <= 10.0 * EPS * last.value.to_full().norm().max(1.0), "residual {residual}");
    }

    #[test]
    fn reduced_solve_matches_dense_kronecker(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 2, 1);
        let (acl, ccl) = closed_loop(&inst.system, &inst.k0).unwrap();
        let lambda = inst.cost.closed_loop_weight(&inst.k0).unwrap();
        let p = solve_lyapunov(&LyapunovProblem { acl: acl.clone(), ccl: ccl.clone(), lambda: lambda.clone() }).unwrap();
        let eye = Matrix::identity(2, 2);
        let op = kron(&eye, &acl.transpose()) + kron(&acl.transpose(), &eye) + kron(&ccl.transpose(), &ccl.transpose());
        let dense = op.lu().solve(&(-vec(&lambda.to_full()))).unwrap();
        let scale = dense.amax().max(1.0);
        prop_assert!((vec(&p.to_full()) - dense).amax() <= 1e-9 * scale);
    }
}
