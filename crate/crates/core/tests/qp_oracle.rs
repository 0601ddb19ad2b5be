mod common;

use common::{instance, oracle, QP_N as N};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use slosh_stop::qp::{QpProblem, QpSettings, QpSolver, QpStatus};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_active_set_oracle(inst in instance()) {
        let expected = oracle(&inst);
        let prob = inst.problem();
        let sol = QpSolver::new(QpSettings::default()).solve(&prob, None).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(sol.primal_residual <= 1e-6);
        prop_assert!(sol.dual_residual <= 1e-6);
        let err = (&sol.x - &expected).amax();
        prop_assert!(err <= 1e-6, "x error {err:e}");
    }

    #[test]
    fn beats_random_feasible_points(inst in instance(), samples in prop::collection::vec(prop::collection::vec(-1.5..1.5f64, N), 20)) {
        let prob = inst.problem();
        let sol = QpSolver::new(QpSettings::default()).solve(&prob, None).unwrap();
        prop_assert!(inst.feasible(&sol.x, 1e-6));
        let best = inst.objective(&sol.x);
        for s in samples {
            let x = DVector::from_vec(s);
            if inst.feasible(&x, 0.0) {
                prop_assert!(best <= inst.objective(&x) + 1e-9);
            }
        }
    }

    #[test]
    fn warm_start_from_solution_is_immediate(inst in instance()) {
        let prob = inst.problem();
        let mut solver = QpSolver::new(QpSettings::default());
        let cold = solver.solve(&prob, None).unwrap();
        let warm = slosh_stop::qp::WarmStart { x: cold.x.clone(), y: Some(cold.y.clone()) };
        let again = solver.solve(&prob, Some(&warm)).unwrap();
        prop_assert_eq!(again.status, QpStatus::Optimal);
        prop_assert!(again.iterations <= cold.iterations);
        prop_assert!((&again.x - &cold.x).amax() <= 1e-5);
    }
}

#[test]
fn equality_and_inequality_mixture() {
    // min ½‖x‖² s.t. x0 + x1 = 2, x1 ≤ 0.5
    let h = DMatrix::identity(2, 2);
    let prob = QpProblem::from_dense(
        &h,
        &DVector::zeros(2),
        &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        &DVector::from_vec(vec![2.0]),
        &DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        &DVector::from_vec(vec![f64::NEG_INFINITY]),
        &DVector::from_vec(vec![0.5]),
    )
    .unwrap();
    let sol = QpSolver::default().solve(&prob, None).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.x[0] - 1.5).abs() < 1e-6 && (sol.x[1] - 0.5).abs() < 1e-6);
    // y_in > 0 on the active upper bound
    assert!(sol.y[1] > 0.0);
}
