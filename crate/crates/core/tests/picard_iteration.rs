use std::sync::Arc;

use sosm_core::fespace::{interpolate_scalar, ElementFamily, FunctionSpace};
use sosm_core::forms::{Discretization, FluxFamily, UnknownLayout};
use sosm_core::mms::{build_case, case_layout, compute_error_table, solve_picard_case, ManufacturedCase, ProblemKind, SinSin};
use sosm_core::solver::{picard_fixed_point, ConcentrationUpdate, PicardOptions};

fn setup(eta: f64) -> (Arc<ManufacturedCase>, UnknownLayout, Arc<FunctionSpace>) {
    let case = Arc::new(build_case(Arc::new(SinSin), &[0.5, 2.0], &[1.0, 1.0], eta, eta, 10.0).unwrap());
    let disc = Discretization::new(2, 2, FluxFamily::RaviartThomas).unwrap();
    let layout = case_layout(&case, 8, disc, false).unwrap();
    let cg2 = Arc::new(FunctionSpace::new(layout.mesh().clone(), ElementFamily::ContinuousLagrange(2)).unwrap());
    (case, layout, cg2)
}

#[test]
fn fixed_point_from_uniform_start_matches_the_frozen_exact_solve() {
    // small viscosity: the frozen-density map contracts
    let (case, layout, cg2) = setup(1e-3);
    let initial = case.totals.iter().map(|&t| interpolate_scalar(&cg2, |_| t)).collect();
    let opts = PicardOptions { tol: 1e-9, max_iters: 60 };
    let update = ConcentrationUpdate::IdealGasTotals(case.totals.clone());
    let (state, report) = picard_fixed_point(&layout, &case.problem_data(), &update, initial, &opts).unwrap();
    assert!(report.converged);
    assert!(report.update_norms.windows(2).all(|w| w[1] < w[0]), "{:?}", report.update_norms);

    let iterated = compute_error_table(&layout, &state.solution, &case, ProblemKind::Picard).unwrap();
    let frozen = compute_error_table(&layout, &solve_picard_case(&case, &layout).unwrap(), &case, ProblemKind::Picard).unwrap();
    for (a, b) in iterated.metrics().iter().zip(frozen.metrics()) {
        if let (Some(a), Some(b)) = (a, b) {
            assert!(*a < 2.0 * b + 1e-12, "iterated {a:e} vs frozen {b:e}");
        }
    }
}

#[test]
fn fixed_point_failure_is_reported_in_the_viscous_regime() {
    // at eta = 0.1 a density perturbation is amplified through the viscous
    // pressure response, so the iteration leaves the positive cone
    let (case, layout, cg2) = setup(0.1);
    let initial = (0..2).map(|i| interpolate_scalar(&cg2, |x| case.concentrations(x)[i])).collect();
    let opts = PicardOptions { tol: 1e-9, max_iters: 30 };
    let update = ConcentrationUpdate::IdealGasTotals(case.totals.clone());
    assert!(picard_fixed_point(&layout, &case.problem_data(), &update, initial, &opts).is_err());
}
