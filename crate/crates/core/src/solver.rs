//! Linear solves, the Picard fixed point, Newton's method and continuation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SosmError};
use crate::fespace::{mass_matrix, ElementFamily, Field, FunctionSpace};
use crate::forms::{
    assemble_monolithic_jacobian, assemble_monolithic_residual, assemble_picard_system, Block, ConstraintSet,
    FieldFrozen, FrozenSource, MonolithicOptions, ProblemData, UnknownLayout,
};
use crate::linalg::{norm2, CsrMatrix, LuFactor, SOLVE_TOLERANCE};
use crate::quadrature::TriangleRule;
use crate::thermo::{concentrations_from, constitutive_invert, ideal_gas_concentration_closed_form};

pub use crate::linalg::sparse_lu_solve;

const MAX_REFINEMENTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOptions {
    /// Bound on the L² norm of the concentration update.
    pub tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOptions {
    /// Bound on the Euclidean norm of the residual.
    pub residual_tol: f64,
    pub max_iters: usize,
    /// Backtracking factor applied when the residual does not decrease.
    pub damping: Option<f64>,
    pub max_backtracks: usize,
    pub continuation_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOptions {
    /// Relative residual bound checked after every solve.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverOptions {
    pub picard: PicardOptions,
    pub newton: NewtonOptions,
    pub linear: LinearOptions,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: 1e-10, max_iters: 100 }
    }
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { residual_tol: 1e-10, max_iters: 25, damping: Some(0.5), max_backtracks: 10, continuation_steps: 1 }
    }
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions { tolerance: SOLVE_TOLERANCE }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.picard.tol > 0.0
            && self.picard.max_iters >= 1
            && self.newton.residual_tol > 0.0
            && self.newton.max_iters >= 1
            && self.newton.continuation_steps >= 1
            && self.linear.tolerance > 0.0
            && self.newton.damping.is_none_or(|d| d > 0.0 && d < 1.0);
        if ok {
            Ok(())
        } else {
            Err(SosmError::InvalidInput(format!("invalid solver options {self:?}")))
        }
    }
}

/// Iteration history of a nonlinear solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonReport {
    /// Residual norm before each step, and after the last one.
    pub residuals: Vec<f64>,
    /// L² norm of the concentration change of each step.
    pub update_norms: Vec<f64>,
    /// Step length used in each step.
    pub damping: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub failure: Option<String>,
}

impl NewtonReport {
    /// Order estimate `log(r_{k+1}/r_k) / log(r_k/r_{k-1})` from the last
    /// three residuals above the round-off floor `1e3 ε r_0`.
    pub fn terminal_order(&self) -> Option<f64> {
        let r0 = *self.residuals.first()?;
        let floor = 1e3 * f64::EPSILON * r0;
        let r: Vec<f64> = self.residuals.iter().copied().filter(|&v| v > floor).collect();
        if r.len() < 3 {
            return None;
        }
        let (a, b, c) = (r[r.len() - 3], r[r.len() - 2], r[r.len() - 1]);
        Some((c / b).ln() / (b / a).ln())
    }
}

/// Sparse factorization plus a low-rank correction `A + U V^T`.
pub struct WoodburySolver {
    lu: LuFactor,
    us: Vec<Vec<f64>>,
    vs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    capacitance: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    tolerance: f64,
}

impl std::fmt::Debug for WoodburySolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WoodburySolver").field("dim", &self.lu.dim()).field("rank", &self.us.len()).finish()
    }
}

impl WoodburySolver {
    pub fn new(lu: LuFactor, us: Vec<Vec<f64>>, vs: Vec<Vec<f64>>, tolerance: f64) -> Result<Self> {
        if us.len() != vs.len() || us.iter().chain(&vs).any(|v| v.len() != lu.dim()) {
            return Err(SosmError::InvalidInput("low-rank factors do not match the matrix".into()));
        }
        // The auxiliary matrix may be nearly singular along the modes the update
        // removes, so only the full operator is held to `tolerance`.
        let z = us.iter().map(|u| lu.solve_with_tolerance(u, f64::INFINITY)).collect::<Result<Vec<_>>>()?;
        let k = us.len();
        let cap = DMatrix::from_fn(k, k, |i, j| {
            let d: f64 = vs[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum();
            d + if i == j { 1.0 } else { 0.0 }
        });
        let lu_cap = cap.clone().lu();
        let scale = cap.amax().max(1.0);
        if k > 0 {
            let diag = lu_cap.u().diagonal();
            if diag.iter().any(|d| d.abs() < 1e-13 * scale) {
                return Err(SosmError::Singular("capacitance matrix of the constraint update".into()));
            }
        }
        Ok(WoodburySolver { lu, us, vs, z, capacitance: lu_cap, tolerance })
    }

    pub fn dim(&self) -> usize {
        self.lu.dim()
    }

    /// `(A + U V^T) x` for the residual check.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.lu.matrix().matvec(x);
        for (u, v) in self.us.iter().zip(&self.vs) {
            let t: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
            for (yi, ui) in y.iter_mut().zip(u) {
                *yi += t * ui;
            }
        }
        y
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let bn = norm2(rhs);
        if bn == 0.0 {
            return Ok(vec![0.0; rhs.len()]);
        }
        let residual = |x: &[f64]| -> Vec<f64> { rhs.iter().zip(self.apply(x)).map(|(b, a)| b - a).collect() };
        let mut x = self.raw(rhs)?;
        let mut r = residual(&x);
        let mut rel = f64::INFINITY;
        // at least one refinement step against the full operator; more only
        // while the residual check fails
        for _ in 0..MAX_REFINEMENTS {
            let dx = self.raw(&r)?;
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
            r = residual(&x);
            rel = norm2(&r) / bn;
            if !(rel > self.tolerance) {
                break;
            }
        }
        if !rel.is_finite() {
            return Err(SosmError::Singular("nonfinite Woodbury solution".into()));
        }
        if rel > self.tolerance {
            return Err(SosmError::InaccurateSolve(rel));
        }
        Ok(x)
    }

    fn raw(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.lu.solve_with_tolerance(rhs, f64::INFINITY)?;
        if self.us.is_empty() {
            return Ok(x);
        }
        let t = DVector::from_iterator(self.vs.len(), self.vs.iter().map(|v| v.iter().zip(&x).map(|(a, b)| a * b).sum()));
        let s = self.capacitance.solve(&t).ok_or_else(|| SosmError::Singular("capacitance solve".into()))?;
        for (k, zk) in self.z.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(zk) {
                *xi -= s[k] * zi;
            }
        }
        Ok(x)
    }
}

/// Solves `(A + U V^T) x = rhs` with a factorization of `A`.
pub fn woodbury_solve(lu: LuFactor, us: Vec<Vec<f64>>, vs: Vec<Vec<f64>>, rhs: &[f64]) -> Result<Vec<f64>> {
    WoodburySolver::new(lu, us, vs, SOLVE_TOLERANCE)?.solve(rhs)
}

/// Shifts `p` and each `mu_i` of a Picard or monolithic vector to zero mean.
pub fn shift_to_zero_mean(layout: &UnknownLayout, u: &mut [f64]) {
    let mut blocks = vec![Block::Pressure];
    blocks.extend((0..layout.n).map(Block::Potential));
    for b in blocks {
        let mut f = layout.field(u, b);
        f.subtract_mean();
        layout.set_field(u, b, &f);
    }
}

/// One Picard linear solve with the given frozen concentrations. Returns the
/// zero-mean-shifted solution.
pub fn picard_solve(layout: &UnknownLayout, data: &ProblemData, frozen: &dyn FrozenSource) -> Result<Vec<f64>> {
    let (sys, _) = assemble_picard_system(layout, data, frozen)?;
    let mut u = sparse_lu_solve(&sys.matrix, &sys.rhs)?;
    shift_to_zero_mean(layout, &mut u);
    Ok(u)
}

/// How the Picard iteration refreshes the frozen concentrations.
#[derive(Debug, Clone, PartialEq)]
pub enum ConcentrationUpdate {
    /// Ideal gas closed form with prescribed species totals.
    IdealGasTotals(Vec<f64>),
    /// Pointwise inversion of the constitutive law, auxiliary constants zero.
    Pointwise,
}

/// Converged Picard iterate.
#[derive(Debug, Clone)]
pub struct PicardState {
    pub solution: Vec<f64>,
    /// Concentrations frozen in the final solve, continuous quadratics.
    pub concentrations: Vec<Field>,
}

/// L² projection onto a space with a cached factorization.
struct Projector {
    space: Arc<FunctionSpace>,
    lu: LuFactor,
    degree: usize,
}

impl Projector {
    fn new(space: Arc<FunctionSpace>, degree: usize) -> Result<Self> {
        let lu = LuFactor::new(mass_matrix(&space, degree))?;
        Ok(Projector { space, lu, degree })
    }

    /// Projects values given at the quadrature points of every cell.
    fn project(&self, values: impl Fn(usize, &crate::fespace::CellTable) -> Result<Vec<f64>>) -> Result<Field> {
        let rule = TriangleRule::new(self.degree);
        let rt = self.space.quadrature_table(&rule);
        let mut rhs = vec![0.0; self.space.ndof()];
        for cell in 0..self.space.mesh().num_cells() {
            let t = self.space.tabulate_with(cell, &rt);
            let v = values(cell, &t)?;
            for i in 0..t.nloc {
                let s: f64 = (0..t.nq).map(|q| t.jxw[q] * v[q] * t.value(q, i)).sum();
                rhs[self.space.dof(cell, 0, i)] += s;
            }
        }
        Field::from_coeffs(self.space.clone(), self.lu.solve_with_tolerance(&rhs, 1e-9)?)
    }
}

fn l2_difference(a: &Field, b: &Field) -> Result<f64> {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    crate::fespace::error_norm(&d, crate::fespace::NormKind::L2, |_| vec![0.0])
}

/// Picard iteration: freeze concentrations, solve the symmetric system,
/// refresh the concentrations from the potentials, repeat until the update
/// is below tolerance.
pub fn picard_fixed_point(
    layout: &UnknownLayout,
    data: &ProblemData,
    update: &ConcentrationUpdate,
    initial: Vec<Field>,
    opts: &PicardOptions,
) -> Result<(PicardState, NewtonReport)> {
    let n = layout.n;
    if initial.len() != n {
        return Err(SosmError::InvalidInput("one initial concentration per species required".into()));
    }
    let cg2 = Arc::new(FunctionSpace::new(layout.mesh().clone(), ElementFamily::ContinuousLagrange(2))?);
    let degree = layout.disc.quadrature_degree();
    let projector = Projector::new(cg2.clone(), degree)?;
    let mut conc: Vec<Field> = initial
        .into_iter()
        .map(|f| {
            if f.space().family() == ElementFamily::ContinuousLagrange(2) {
                Ok(Field::from_coeffs(cg2.clone(), f.into_coeffs())?)
            } else {
                Err(SosmError::InvalidInput("initial concentrations must be continuous quadratics".into()))
            }
        })
        .collect::<Result<_>>()?;
    let mut report = NewtonReport::default();
    let mm = data.spec.molar_masses.clone();
    for it in 0..opts.max_iters {
        let frozen = FieldFrozen::new(mm.clone(), conc.clone())?;
        let u = picard_solve(layout, data, &frozen)?;
        let mu: Vec<Field> = (0..n).map(|i| layout.field(&u, Block::Potential(i))).collect();
        let p = layout.field(&u, Block::Pressure);
        let fresh: Vec<Field> = match update {
            ConcentrationUpdate::IdealGasTotals(totals) => {
                let rt = data.law.ideal_gas_rt().ok_or_else(|| {
                    SosmError::InvalidInput("the closed-form update requires the ideal gas law".into())
                })?;
                let closed = ideal_gas_concentration_closed_form(&mu, totals, rt)?;
                let mu_space = layout.potential.clone();
                let rule = TriangleRule::new(degree);
                let rmu = mu_space.quadrature_table(&rule);
                (0..n)
                    .map(|i| {
                        projector.project(|cell, _| {
                            let t = mu_space.tabulate_with(cell, &rmu);
                            Ok(closed.at(cell, &t).swap_remove(i))
                        })
                    })
                    .collect::<Result<_>>()?
            }
            ConcentrationUpdate::Pointwise => {
                let rule = TriangleRule::new(degree);
                let rmu = layout.potential.quadrature_table(&rule);
                let rp = layout.pressure.quadrature_table(&rule);
                let law = data.law.as_ref();
                let per_species = |i: usize| {
                    projector.project(|cell, _| {
                        let tm = layout.potential.tabulate_with(cell, &rmu);
                        let tp = layout.pressure.tabulate_with(cell, &rp);
                        let muv: Vec<Vec<f64>> = mu.iter().map(|m| m.values_at(cell, &tm)).collect();
                        let pv = p.values_at(cell, &tp);
                        (0..tm.nq)
                            .map(|q| {
                                let m: Vec<f64> = muv.iter().map(|v| v[q]).collect();
                                let x = constitutive_invert(law, &m, pv[q], &vec![1.0 / n as f64; n])?;
                                Ok(concentrations_from(law, &mm, pv[q], &x)?.c[i])
                            })
                            .collect()
                    })
                };
                (0..n).map(per_species).collect::<Result<_>>()?
            }
        };
        let mut change = 0.0;
        for (a, b) in fresh.iter().zip(&conc) {
            change += l2_difference(a, b)?.powi(2);
        }
        let change = change.sqrt();
        report.update_norms.push(change);
        report.damping.push(1.0);
        report.iterations = it + 1;
        if !change.is_finite() {
            report.failure = Some("nonfinite concentration update".into());
            return Err(SosmError::Diverged { iteration: it + 1, norm: change });
        }
        if change < opts.tol {
            report.converged = true;
            return Ok((PicardState { solution: u, concentrations: conc }, report));
        }
        conc = fresh;
    }
    let last = report.update_norms.last().copied().unwrap_or(f64::NAN);
    Err(SosmError::NoConvergence { iterations: opts.max_iters, norm: last })
}

/// Result of a Newton solve: the last iterate and its history.
#[derive(Debug, Clone)]
pub struct NewtonRun {
    pub state: Vec<f64>,
    pub report: NewtonReport,
}

impl NewtonRun {
    pub fn into_result(self) -> Result<Vec<f64>> {
        if self.report.converged {
            Ok(self.state)
        } else {
            let norm = self.report.residuals.last().copied().unwrap_or(f64::NAN);
            Err(SosmError::NoConvergence { iterations: self.report.iterations, norm })
        }
    }
}

fn concentration_change(layout: &UnknownLayout, data: &ProblemData, a: &[f64], b: &[f64]) -> f64 {
    // the change of c(p, x) measured at quadrature points
    let n = layout.n;
    let law = data.law.as_ref();
    let mm = &data.spec.molar_masses;
    let rule = TriangleRule::new(layout.disc.quadrature_degree());
    let rp = layout.pressure.quadrature_table(&rule);
    let rx = layout.potential.quadrature_table(&rule);
    let fields = |u: &[f64]| -> (Field, Vec<Field>) {
        (layout.field(u, Block::Pressure), (0..n).map(|i| layout.field(u, Block::MoleFraction(i))).collect())
    };
    let (pa, xa) = fields(a);
    let (pb, xb) = fields(b);
    let mut total = 0.0;
    for cell in 0..layout.mesh().num_cells() {
        let tp = layout.pressure.tabulate_with(cell, &rp);
        let tx = layout.potential.tabulate_with(cell, &rx);
        let (pva, pvb) = (pa.values_at(cell, &tp), pb.values_at(cell, &tp));
        let xva: Vec<Vec<f64>> = xa.iter().map(|f| f.values_at(cell, &tx)).collect();
        let xvb: Vec<Vec<f64>> = xb.iter().map(|f| f.values_at(cell, &tx)).collect();
        for q in 0..tp.nq {
            let ca = concentrations_from(law, mm, pva[q], &xva.iter().map(|v| v[q]).collect::<Vec<_>>());
            let cb = concentrations_from(law, mm, pvb[q], &xvb.iter().map(|v| v[q]).collect::<Vec<_>>());
            match (ca, cb) {
                (Ok(ca), Ok(cb)) => {
                    total += tp.jxw[q] * ca.c.iter().zip(&cb.c).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
                }
                _ => return f64::NAN,
            }
        }
    }
    total.sqrt()
}

/// Newton's method on the monolithic residual with Woodbury solves of the
/// constraint-updated Jacobian.
pub fn newton_solve(
    layout: &UnknownLayout,
    data: &ProblemData,
    constraints: &ConstraintSet,
    opts: &NewtonOptions,
    mopts: &MonolithicOptions,
    initial: Vec<f64>,
) -> Result<NewtonRun> {
    let mut state = initial;
    let mut report = NewtonReport::default();
    let mut sys = assemble_monolithic_jacobian(layout, data, &state, constraints, mopts)?;
    let mut rnorm = norm2(&sys.residual);
    report.residuals.push(rnorm);
    for it in 0..opts.max_iters {
        if !rnorm.is_finite() {
            report.failure = Some("nonfinite residual".into());
            return Ok(NewtonRun { state, report });
        }
        if rnorm < opts.residual_tol {
            report.converged = true;
            return Ok(NewtonRun { state, report });
        }
        let jac = sys.jacobian.take().expect("jacobian assembled");
        let (us, vs) = sys.low_rank_update();
        let step = match LuFactor::new(jac)
            .and_then(|lu| WoodburySolver::new(lu, us, vs, SOLVE_TOLERANCE))
            .and_then(|w| w.solve(&sys.residual))
        {
            Ok(s) => s,
            Err(e) => {
                report.failure = Some(format!("linear solve failed: {e}"));
                return Ok(NewtonRun { state, report });
            }
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for attempt in 0..=opts.max_backtracks {
            let trial: Vec<f64> = state.iter().zip(&step).map(|(u, d)| u - alpha * d).collect();
            let r = assemble_monolithic_residual(layout, data, &trial, constraints, mopts);
            let ok = match &r {
                Ok(r) => {
                    let tn = norm2(r);
                    tn.is_finite() && (opts.damping.is_none() || tn < rnorm)
                }
                Err(_) => false,
            };
            if ok {
                accepted = Some(trial);
                break;
            }
            match opts.damping {
                Some(f) if attempt < opts.max_backtracks => alpha *= f,
                _ => break,
            }
        }
        let Some(trial) = accepted else {
            report.failure = Some(format!("no acceptable step at iteration {}", it + 1));
            report.iterations = it + 1;
            return Ok(NewtonRun { state, report });
        };
        report.update_norms.push(concentration_change(layout, data, &trial, &state));
        report.damping.push(alpha);
        report.iterations = it + 1;
        state = trial;
        sys = assemble_monolithic_jacobian(layout, data, &state, constraints, mopts)?;
        rnorm = norm2(&sys.residual);
        report.residuals.push(rnorm);
    }
    if rnorm < opts.residual_tol {
        report.converged = true;
    } else {
        report.failure = Some(format!("no convergence in {} iterations", opts.max_iters));
    }
    Ok(NewtonRun { state, report })
}

/// Outcome of a continuation run, including the reports of a failed step.
#[derive(Debug, Clone)]
pub struct ContinuationRun {
    /// Last converged state, or the initial state if the first step failed.
    pub state: Vec<f64>,
    pub reports: Vec<NewtonReport>,
    /// Scale of the step that failed.
    pub failed_at: Option<f64>,
}

impl ContinuationRun {
    pub fn into_result(self) -> Result<(Vec<f64>, Vec<NewtonReport>)> {
        match self.failed_at {
            None => Ok((self.state, self.reports)),
            Some(scale) => {
                let last = self.reports.last();
                let norm = last.and_then(|r| r.residuals.last().copied()).unwrap_or(f64::NAN);
                let iterations = last.map_or(0, |r| r.iterations);
                Err(SosmError::Continuation { scale, source: Box::new(SosmError::NoConvergence { iterations, norm }) })
            }
        }
    }
}

/// Newton's method with continuation on the boundary data magnitude, using
/// the ramp `s = 1/m, 2/m, ..., 1`. Stops at the first step that fails.
pub fn continuation_run(
    layout: &UnknownLayout,
    data: &ProblemData,
    constraints: &ConstraintSet,
    opts: &NewtonOptions,
    mopts: &MonolithicOptions,
    initial: Vec<f64>,
) -> Result<ContinuationRun> {
    let m = opts.continuation_steps.max(1);
    let base = data.boundary.scale;
    let mut state = initial;
    let mut reports = Vec::with_capacity(m);
    for step in 1..=m {
        let s = step as f64 / m as f64;
        let mut scaled = data.clone();
        scaled.boundary = data.boundary.scaled(base * s);
        let run = newton_solve(layout, &scaled, constraints, opts, mopts, state.clone())?;
        let converged = run.report.converged;
        if !converged {
            log::warn!("continuation failed at scale {s}: {}", run.report.failure.clone().unwrap_or_default());
            reports.push(run.report);
            return Ok(ContinuationRun { state, reports, failed_at: Some(s) });
        }
        reports.push(run.report);
        state = run.state;
    }
    Ok(ContinuationRun { state, reports, failed_at: None })
}

/// [`continuation_run`] as a `Result`.
pub fn continuation_driver(
    layout: &UnknownLayout,
    data: &ProblemData,
    constraints: &ConstraintSet,
    opts: &NewtonOptions,
    mopts: &MonolithicOptions,
    initial: Vec<f64>,
) -> Result<(Vec<f64>, Vec<NewtonReport>)> {
    continuation_run(layout, data, constraints, opts, mopts, initial)?.into_result()
}

/// Dense `(A + U V^T)` for small checks.
pub fn dense_updated(a: &CsrMatrix, us: &[Vec<f64>], vs: &[Vec<f64>]) -> DMatrix<f64> {
    let mut d = a.to_dense();
    for (u, v) in us.iter().zip(vs) {
        for i in 0..d.nrows() {
            if u[i] != 0.0 {
                for j in 0..d.ncols() {
                    d[(i, j)] += u[i] * v[j];
                }
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TripletBuilder;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(n: usize, seed: u64) -> (CsrMatrix, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 4.0 + rng.gen::<f64>());
            for _ in 0..3 {
                b.push(i, rng.gen_range(0..n), rng.gen_range(-1.0..1.0));
            }
        }
        (b.build(), rng)
    }

    #[test]
    fn woodbury_without_update_is_plain_lu() {
        let (a, mut rng) = random_system(30, 1);
        let rhs: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let x = woodbury_solve(LuFactor::new(a.clone()).unwrap(), vec![], vec![], &rhs).unwrap();
        let y = sparse_lu_solve(&a, &rhs).unwrap();
        let err = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn woodbury_matches_dense_rank_three() {
        let n = 40;
        let (a, mut rng) = random_system(n, 2);
        let us: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let vs: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let dense = dense_updated(&a, &us, &vs);
        let expect = dense.lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
        let x = woodbury_solve(LuFactor::new(a).unwrap(), us, vs, &rhs).unwrap();
        let err = x.iter().zip(expect.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err / expect.norm() < 1e-11, "{err}");
    }

    #[test]
    fn terminal_order_of_quadratic_sequence() {
        let r = NewtonReport { residuals: vec![1e-2, 1e-4, 1e-8], ..Default::default() };
        assert!((r.terminal_order().unwrap() - 2.0).abs() < 1e-12);
        // the last entry sits on the round-off floor and is ignored
        let r = NewtonReport { residuals: vec![1.0, 1e-2, 1e-4, 1e-8, 1e-16], ..Default::default() };
        assert!((r.terminal_order().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn options_are_validated() {
        let mut o = SolverOptions::default();
        assert!(o.validate().is_ok());
        o.newton.max_iters = 0;
        assert!(o.validate().is_err());
    }
}
