use std::sync::Arc;

use sosm_core::forms::{Block, Discretization, FluxFamily, MonolithicOptions};
use sosm_core::linalg::norm2;
use sosm_core::mms::{case_layout, compute_error_table, default_case, projected_initial_guess, solve_newton_case, solve_picard_case, ProblemKind};
use sosm_core::solver::{continuation_driver, newton_solve, NewtonOptions};

fn disc() -> Discretization {
    Discretization::new(2, 2, FluxFamily::RaviartThomas).unwrap()
}

#[test]
fn single_step_continuation_is_plain_newton() {
    let case = Arc::new(default_case());
    let layout = case_layout(&case, 4, disc(), true).unwrap();
    let u0 = projected_initial_guess(&case, &layout).unwrap();
    let data = case.problem_data();
    let set = case.constraints().unwrap();
    let opts = NewtonOptions::default();
    let mopts = MonolithicOptions::default();
    let plain = newton_solve(&layout, &data, &set, &opts, &mopts, u0.clone()).unwrap();
    let (state, reports) = continuation_driver(&layout, &data, &set, &opts, &mopts, u0).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0], plain.report);
    assert_eq!(state, plain.state);
}

#[test]
fn residuals_fall_fast_from_the_projection() {
    let case = Arc::new(default_case());
    let layout = case_layout(&case, 8, disc(), true).unwrap();
    let (_, report) = solve_newton_case(&case, &layout, &NewtonOptions::default(), &MonolithicOptions::default()).unwrap();
    assert!(report.converged);
    assert!(report.iterations <= 4, "{:?}", report.residuals);
    assert!(report.damping.iter().all(|&a| a == 1.0));
    // after the first step removes the linear part of the residual, the
    // tail is quadratic: r_{k+1} <= C r_k^2 down to the round-off floor
    let r = &report.residuals;
    assert!(r[1] < 1e-2 * r[0], "{r:?}");
    let floor = 1e3 * f64::EPSILON * r[0];
    for w in r[1..].windows(2).filter(|w| w[1] > floor) {
        assert!(w[1] <= 0.1 * w[0] * w[0], "{r:?}");
    }
}

#[test]
fn picard_and_newton_agree_at_h_sixteenth() {
    let case = Arc::new(default_case());
    let lp = case_layout(&case, 16, disc(), false).unwrap();
    let ln = case_layout(&case, 16, disc(), true).unwrap();
    let up = solve_picard_case(&case, &lp).unwrap();
    let (un, _) = solve_newton_case(&case, &ln, &NewtonOptions::default(), &MonolithicOptions::default()).unwrap();
    let ep = compute_error_table(&lp, &up, &case, ProblemKind::Picard).unwrap();
    let en = compute_error_table(&ln, &un, &case, ProblemKind::Monolithic).unwrap();
    // same spaces for v: compare coefficients directly
    let vp = &up[lp.range(Block::Velocity)];
    let vn = &un[ln.range(Block::Velocity)];
    let diff: Vec<f64> = vp.iter().zip(vn).map(|(a, b)| a - b).collect();
    assert!(norm2(&diff) / norm2(vp) < 0.05, "velocity coefficients differ by {:e}", norm2(&diff) / norm2(vp));
    for (name, a, b) in [("E_grad_v", ep.e_grad_v, en.e_grad_v), ("E_J", ep.e_j, en.e_j), ("E_mu", ep.e_mu, en.e_mu)] {
        assert!(a < 0.1 && b < 0.1, "{name}: picard {a:e}, newton {b:e}");
        assert!(b < 5.0 * a && a < 5.0 * b, "{name}: picard {a:e}, newton {b:e}");
    }
}
