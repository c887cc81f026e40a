//! Residual and exact Jacobian of the monolithic discretization.

use nalgebra::DMatrix;

use crate::error::{Result, SosmError};
use crate::linalg::CsrMatrix;
use crate::quadrature::{LineRule, TriangleRule};
use crate::thermo::{concentrations_with_jacobian, scaled_matrix, scaled_matrix_derivatives};

use super::{
    assemble_cells, boundary_facets, build_liftings, constraint_functional, Block, ConstraintSet, ProblemData,
    UnknownLayout, VectorFn,
};

/// Switches of the monolithic assembly.
#[derive(Clone)]
pub struct MonolithicOptions {
    /// Boundary terms `∮ q (v - Psi sum J)·n` in the pressure rows.
    pub density_consistency: bool,
    /// Drop the chain-rule terms through `c(p, x)` from the Jacobian.
    pub freeze_concentrations: bool,
    /// Replace `∇Psi_h` by this exact gradient (diagnostic).
    pub exact_grad_psi: Option<VectorFn>,
}

impl Default for MonolithicOptions {
    fn default() -> Self {
        MonolithicOptions { density_consistency: true, freeze_concentrations: false, exact_grad_psi: None }
    }
}

impl std::fmt::Debug for MonolithicOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MonolithicOptions")
            .field("density_consistency", &self.density_consistency)
            .field("freeze_concentrations", &self.freeze_concentrations)
            .field("exact_grad_psi", &self.exact_grad_psi.is_some())
            .finish()
    }
}

/// Residual and auxiliary Jacobian. The rows in `constraint_rows` hold the
/// constraint values in the residual and unit rows in the Jacobian; the true
/// Jacobian adds `e_row (grad F - e_row)^T` for each of them.
#[derive(Debug, Clone)]
pub struct MonolithicSystem {
    pub residual: Vec<f64>,
    pub jacobian: Option<CsrMatrix>,
    pub constraint_rows: Vec<usize>,
    pub constraint_gradients: Vec<Vec<f64>>,
}

impl MonolithicSystem {
    /// Low-rank factors `U`, `V` with `J_true = J_aux + U V^T`.
    pub fn low_rank_update(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.residual.len();
        let mut us = Vec::new();
        let mut vs = Vec::new();
        for (&row, g) in self.constraint_rows.iter().zip(&self.constraint_gradients) {
            let mut u = vec![0.0; n];
            u[row] = 1.0;
            let mut v = g.clone();
            v[row] -= 1.0;
            us.push(u);
            vs.push(v);
        }
        (us, vs)
    }

    /// True Jacobian applied to a vector.
    pub fn apply_jacobian(&self, w: &[f64]) -> Vec<f64> {
        let jac = self.jacobian.as_ref().expect("jacobian assembled");
        let mut y = jac.matvec(w);
        for (&row, g) in self.constraint_rows.iter().zip(&self.constraint_gradients) {
            y[row] = g.iter().zip(w).map(|(a, b)| a * b).sum();
        }
        y
    }

    /// Dense true Jacobian (small problems only).
    pub fn dense_jacobian(&self) -> DMatrix<f64> {
        let mut d = self.jacobian.as_ref().expect("jacobian assembled").to_dense();
        for (&row, g) in self.constraint_rows.iter().zip(&self.constraint_gradients) {
            for (j, v) in g.iter().enumerate() {
                d[(row, j)] = *v;
            }
        }
        d
    }
}

fn locate(e: SosmError, cell: usize) -> SosmError {
    match e {
        SosmError::Positivity { quantity, value, .. } => SosmError::Positivity { quantity, value, cell },
        other => other,
    }
}

/// Full residual including Dirichlet rows `u - g` and constraint rows.
pub fn assemble_monolithic_residual(
    layout: &UnknownLayout,
    data: &ProblemData,
    state: &[f64],
    constraints: &ConstraintSet,
    opts: &MonolithicOptions,
) -> Result<Vec<f64>> {
    Ok(assemble_monolithic(layout, data, state, constraints, opts, false)?.residual)
}

/// Residual together with the auxiliary Jacobian and constraint gradients.
pub fn assemble_monolithic_jacobian(
    layout: &UnknownLayout,
    data: &ProblemData,
    state: &[f64],
    constraints: &ConstraintSet,
    opts: &MonolithicOptions,
) -> Result<MonolithicSystem> {
    assemble_monolithic(layout, data, state, constraints, opts, true)
}

pub fn assemble_monolithic(
    layout: &UnknownLayout,
    data: &ProblemData,
    state: &[f64],
    constraints: &ConstraintSet,
    opts: &MonolithicOptions,
    with_jacobian: bool,
) -> Result<MonolithicSystem> {
    if !layout.monolithic {
        return Err(SosmError::InvalidInput("monolithic assembly needs the monolithic layout".into()));
    }
    if state.len() != layout.total() {
        return Err(SosmError::InvalidInput(format!("state has {} entries, layout {}", state.len(), layout.total())));
    }
    let (mut residual, mut jacobian) = assemble_interior(layout, data, state, opts, with_jacobian)?;
    if opts.density_consistency {
        let (r, entries) = assemble_density_consistency(layout, state, with_jacobian)?;
        for (a, b) in residual.iter_mut().zip(&r) {
            *a += b;
        }
        if let Some(m) = jacobian.as_mut() {
            for (i, j, v) in entries {
                m.add_at(i, j, v);
            }
        }
    }
    let lift = build_liftings(layout, data)?;
    for &(k, g) in &lift.values {
        residual[k] = state[k] - g;
        if let Some(m) = jacobian.as_mut() {
            m.set_identity_row(k);
        }
    }
    let cv = constraint_functional(layout, data, state, constraints)?;
    let rows = layout.pinned_dofs();
    for (&row, v) in rows.iter().zip(&cv.values) {
        residual[row] = *v;
        if let Some(m) = jacobian.as_mut() {
            m.set_identity_row(row);
        }
    }
    Ok(MonolithicSystem { residual, jacobian, constraint_rows: rows, constraint_gradients: cv.gradients })
}

fn assemble_interior(
    layout: &UnknownLayout,
    data: &ProblemData,
    state: &[f64],
    opts: &MonolithicOptions,
    with_jacobian: bool,
) -> Result<(Vec<f64>, Option<CsrMatrix>)> {
    let n = layout.n;
    let spec = &data.spec;
    let law = data.law.as_ref();
    let mm = &spec.molar_masses;
    let (eta, lambda, gamma) = (spec.eta, spec.lambda(), spec.gamma);
    let rule = TriangleRule::new(layout.disc.quadrature_degree());
    let rv = layout.velocity.quadrature_table(&rule);
    let rj = layout.flux.quadrature_table(&rule);
    let rp = layout.pressure.quadrature_table(&rule);
    let rm = layout.potential.quadrature_table(&rule);
    let mut matrix = if with_jacobian { Some(layout.pattern()) } else { None };
    let mut rhs = vec![0.0; layout.total()];
    let coupling = layout.coupling();
    let exact_gpsi = opts.exact_grad_psi.as_ref();
    let chain = !opts.freeze_concentrations;
    assemble_cells(layout, with_jacobian, matrix.as_mut(), &mut rhs, &coupling, |cell, ls| {
        let tv = layout.velocity.tabulate_with(cell, &rv);
        let tj = layout.flux.tabulate_with(cell, &rj);
        let tp = layout.pressure.tabulate_with(cell, &rp);
        let tm = layout.potential.tabulate_with(cell, &rm);
        // Psi shares the CG1 space and table with p
        let tq = &tp;
        let (nv, nj, np, nm) = (tv.nloc, tj.nloc, tp.nloc, tm.nloc);
        let vs = ls.starts[0];
        let js: Vec<usize> = (0..n).map(|i| ls.starts[1 + i]).collect();
        let ps = ls.starts[1 + n];
        let ms: Vec<usize> = (0..n).map(|i| ls.starts[2 + n + i]).collect();
        let xs: Vec<usize> = (0..n).map(|i| ls.starts[2 + 2 * n + i]).collect();
        let qs = ls.starts[2 + 3 * n];
        let u: Vec<f64> = ls.dofs.iter().map(|&d| state[d]).collect();

        for q in 0..tv.nq {
            let w = tv.jxw[q];
            let xq = tv.points[q];
            let f = data.force(xq);

            let mut vval = [0.0; 2];
            let mut vg = [[0.0; 2]; 2];
            for a in 0..2 {
                for i in 0..nv {
                    let c = u[vs + a * nv + i];
                    vval[a] += c * tv.value(q, i);
                    let g = tv.grad(q, i);
                    vg[a][0] += c * g[0];
                    vg[a][1] += c * g[1];
                }
            }
            let divv = vg[0][0] + vg[1][1];
            let mut jv = vec![[0.0; 2]; n];
            let mut jd = vec![0.0; n];
            for i in 0..n {
                for r in 0..nj {
                    let c = u[js[i] + r];
                    let ph = tj.vvalue(q, r);
                    jv[i][0] += c * ph[0];
                    jv[i][1] += c * ph[1];
                    jd[i] += c * tj.div(q, r);
                }
            }
            let s = [jv.iter().map(|j| j[0]).sum::<f64>(), jv.iter().map(|j| j[1]).sum::<f64>()];
            let divs: f64 = jd.iter().sum();
            let p: f64 = (0..np).map(|k| u[ps + k] * tp.value(q, k)).sum();
            let mu: Vec<f64> = (0..n).map(|i| (0..nm).map(|k| u[ms[i] + k] * tm.value(q, k)).sum()).collect();
            let xr: Vec<f64> = (0..n).map(|i| (0..nm).map(|k| u[xs[i] + k] * tm.value(q, k)).sum()).collect();
            let psi: f64 = (0..np).map(|k| u[qs + k] * tq.value(q, k)).sum();
            let mut gpsi = [0.0; 2];
            for k in 0..np {
                let g = tq.grad(q, k);
                gpsi[0] += u[qs + k] * g[0];
                gpsi[1] += u[qs + k] * g[1];
            }
            if let Some(e) = exact_gpsi {
                gpsi = e(xq);
            }
            if !(psi > 0.0) {
                return Err(SosmError::Positivity { quantity: "density reciprocal", value: psi, cell });
            }
            let (c, cj) = concentrations_with_jacobian(law, p, &xr).map_err(|e| locate(e, cell))?;
            let rho: f64 = c.iter().zip(mm).map(|(c, m)| c * m).sum();
            let mt = scaled_matrix(spec, &c);
            let g_val = law.gibbs(p, &xr);
            let m = [vval[0] - psi * s[0], vval[1] - psi * s[1]];

            // residual
            for i in 0..nv {
                let (phi, g) = (tv.value(q, i), tv.grad(q, i));
                for a in 0..2 {
                    let visc = eta * ((vg[a][0] + vg[0][a]) * g[0] + (vg[a][1] + vg[1][a]) * g[1]);
                    ls.rhs[vs + a * nv + i] +=
                        w * (visc + lambda * divv * g[a] + gamma * m[a] * phi - p * g[a] - rho * f[a] * phi);
                }
            }
            for i in 0..n {
                let inv_m = 1.0 / mm[i];
                let mut drag = [0.0; 2];
                for j in 0..n {
                    drag[0] += mt[(i, j)] * jv[j][0];
                    drag[1] += mt[(i, j)] * jv[j][1];
                }
                for r in 0..nj {
                    let (ph, d) = (tj.vvalue(q, r), tj.div(q, r));
                    let dot = |a: [f64; 2]| a[0] * ph[0] + a[1] * ph[1];
                    ls.rhs[js[i] + r] +=
                        w * (-gamma * psi * dot(m) + dot(drag) + p * (dot(gpsi) + psi * d) - mu[i] * d * inv_m);
                }
                let ri = data.reaction(i, xq);
                for r in 0..nm {
                    let chi = tm.value(q, r);
                    ls.rhs[ms[i] + r] += w * chi * (-jd[i] * inv_m + ri);
                    ls.rhs[xs[i] + r] += w * chi * (mu[i] - g_val[i]);
                }
            }
            let cont = -divv + gpsi[0] * s[0] + gpsi[1] * s[1] + psi * divs;
            for r in 0..np {
                ls.rhs[ps + r] += w * tp.value(q, r) * cont;
                ls.rhs[qs + r] += w * tq.value(q, r) * (1.0 / psi - rho);
            }
            if !with_jacobian {
                continue;
            }

            // derivatives of c-dependent coefficients
            let a_p: Vec<f64> = if chain { cj.dc_dp.clone() } else { vec![0.0; n] };
            let b_x = if chain { cj.dc_dx.clone() } else { DMatrix::zeros(n, n) };
            let rho_p: f64 = (0..n).map(|i| mm[i] * a_p[i]).sum();
            let rho_x: Vec<f64> = (0..n).map(|k| (0..n).map(|i| mm[i] * b_x[(i, k)]).sum()).collect();
            let (mt_p, mt_x) = if chain {
                let dm = scaled_matrix_derivatives(spec, &c);
                let mut mp = DMatrix::zeros(n, n);
                let mut mx = vec![DMatrix::zeros(n, n); n];
                for (k, d) in dm.iter().enumerate() {
                    mp += d * a_p[k];
                    for (mk, mxk) in mx.iter_mut().enumerate() {
                        *mxk += d * b_x[(k, mk)];
                    }
                }
                (mp, mx)
            } else {
                (DMatrix::zeros(n, n), vec![DMatrix::zeros(n, n); n])
            };
            let (dg_dp, dg_dx) = law.gibbs_derivatives(p, &xr);
            let psi_grad_live = exact_gpsi.is_none();

            // velocity rows
            for i in 0..nv {
                let (phi_i, gi) = (tv.value(q, i), tv.grad(q, i));
                for a in 0..2 {
                    let row = vs + a * nv + i;
                    for j in 0..nv {
                        let (phi_j, gj) = (tv.value(q, j), tv.grad(q, j));
                        let dot = gi[0] * gj[0] + gi[1] * gj[1];
                        for b in 0..2 {
                            let mut v = eta * (gi[b] * gj[a]) + lambda * (gi[a] * gj[b]);
                            if a == b {
                                v += eta * dot + gamma * (phi_i * phi_j);
                            }
                            ls.add(row, vs + b * nv + j, w * v);
                        }
                    }
                    for l in 0..n {
                        for sdx in 0..nj {
                            ls.add(row, js[l] + sdx, -w * gamma * psi * tj.vvalue(q, sdx)[a] * phi_i);
                        }
                    }
                    for sdx in 0..np {
                        let ph = tp.value(q, sdx);
                        ls.add(row, ps + sdx, -w * (ph * gi[a] + rho_p * ph * f[a] * phi_i));
                        ls.add(row, qs + sdx, -w * gamma * tq.value(q, sdx) * s[a] * phi_i);
                    }
                    for k in 0..n {
                        for sdx in 0..nm {
                            ls.add(row, xs[k] + sdx, -w * rho_x[k] * tm.value(q, sdx) * f[a] * phi_i);
                        }
                    }
                }
            }
            // flux rows
            for i in 0..n {
                let inv_m = 1.0 / mm[i];
                let mut jp = [0.0; 2];
                for j in 0..n {
                    jp[0] += mt_p[(i, j)] * jv[j][0];
                    jp[1] += mt_p[(i, j)] * jv[j][1];
                }
                let jx: Vec<[f64; 2]> = (0..n)
                    .map(|k| {
                        let mut t = [0.0; 2];
                        for j in 0..n {
                            t[0] += mt_x[k][(i, j)] * jv[j][0];
                            t[1] += mt_x[k][(i, j)] * jv[j][1];
                        }
                        t
                    })
                    .collect();
                for r in 0..nj {
                    let row = js[i] + r;
                    let (ph, d) = (tj.vvalue(q, r), tj.div(q, r));
                    let dot = |a: [f64; 2]| a[0] * ph[0] + a[1] * ph[1];
                    for j in 0..nv {
                        let phi_j = tv.value(q, j);
                        for b in 0..2 {
                            ls.add(row, vs + b * nv + j, -w * gamma * psi * phi_j * ph[b]);
                        }
                    }
                    for l in 0..n {
                        let coef = gamma * psi * psi + mt[(i, l)];
                        for sdx in 0..nj {
                            ls.add(row, js[l] + sdx, w * coef * dot(tj.vvalue(q, sdx)));
                        }
                    }
                    let bp = dot(gpsi) + psi * d + dot(jp);
                    for sdx in 0..np {
                        ls.add(row, ps + sdx, w * tp.value(q, sdx) * bp);
                        let th = tq.value(q, sdx);
                        let gth = if psi_grad_live { dot(tq.grad(q, sdx)) } else { 0.0 };
                        let v = -gamma * th * dot(m) + gamma * psi * th * dot(s) + p * (gth + th * d);
                        ls.add(row, qs + sdx, w * v);
                    }
                    for sdx in 0..nm {
                        let chi = tm.value(q, sdx);
                        ls.add(row, ms[i] + sdx, -w * chi * d * inv_m);
                        for k in 0..n {
                            ls.add(row, xs[k] + sdx, w * chi * dot(jx[k]));
                        }
                    }
                }
            }
            // pressure (continuity) rows
            for r in 0..np {
                let row = ps + r;
                let phr = tp.value(q, r);
                for j in 0..nv {
                    let gj = tv.grad(q, j);
                    for b in 0..2 {
                        ls.add(row, vs + b * nv + j, -w * phr * gj[b]);
                    }
                }
                for l in 0..n {
                    for sdx in 0..nj {
                        let ph = tj.vvalue(q, sdx);
                        let v = gpsi[0] * ph[0] + gpsi[1] * ph[1] + psi * tj.div(q, sdx);
                        ls.add(row, js[l] + sdx, w * phr * v);
                    }
                }
                for sdx in 0..np {
                    let th = tq.value(q, sdx);
                    let gth = if psi_grad_live {
                        let g = tq.grad(q, sdx);
                        g[0] * s[0] + g[1] * s[1]
                    } else {
                        0.0
                    };
                    ls.add(row, qs + sdx, w * phr * (gth + th * divs));
                }
            }
            // molar continuity and constitutive rows
            for i in 0..n {
                let inv_m = 1.0 / mm[i];
                for r in 0..nm {
                    let chi = tm.value(q, r);
                    for sdx in 0..nj {
                        ls.add(ms[i] + r, js[i] + sdx, -w * chi * tj.div(q, sdx) * inv_m);
                    }
                    let row = xs[i] + r;
                    for sdx in 0..nm {
                        let cs = tm.value(q, sdx);
                        ls.add(row, ms[i] + sdx, w * chi * cs);
                        for k in 0..n {
                            ls.add(row, xs[k] + sdx, -w * dg_dx[(i, k)] * cs * chi);
                        }
                    }
                    for sdx in 0..np {
                        ls.add(row, ps + sdx, -w * dg_dp[i] * tp.value(q, sdx) * chi);
                    }
                }
            }
            // density reciprocal rows
            for r in 0..np {
                let row = qs + r;
                let th_r = tq.value(q, r);
                for sdx in 0..np {
                    ls.add(row, qs + sdx, -w * tq.value(q, sdx) / (psi * psi) * th_r);
                    ls.add(row, ps + sdx, -w * rho_p * tp.value(q, sdx) * th_r);
                }
                for k in 0..n {
                    for sdx in 0..nm {
                        ls.add(row, xs[k] + sdx, -w * rho_x[k] * tm.value(q, sdx) * th_r);
                    }
                }
            }
        }
        Ok(())
    })?;
    Ok((rhs, matrix))
}

/// Density consistency terms `∮ q (v - Psi sum_i J_i)·n ds` in the pressure
/// rows, with their derivatives as `(row, col, value)` entries.
pub fn assemble_density_consistency(
    layout: &UnknownLayout,
    state: &[f64],
    with_jacobian: bool,
) -> Result<(Vec<f64>, Vec<(usize, usize, f64)>)> {
    let n = layout.n;
    let mesh = layout.mesh();
    let line = LineRule::new(layout.disc.quadrature_degree());
    let mut res = vec![0.0; layout.total()];
    let mut entries = Vec::new();
    let vel = &layout.velocity;
    let flux = &layout.flux;
    let cg1 = &layout.pressure;
    for bf in boundary_facets(mesh) {
        let (xi, _, wts) = bf.quadrature(mesh, &line);
        let cell = bf.cell;
        let tv = vel.tabulate_with(cell, &vel.reference_table(xi.clone(), wts.clone()));
        let tj = flux.tabulate_with(cell, &flux.reference_table(xi.clone(), wts.clone()));
        let tp = cg1.tabulate_with(cell, &cg1.reference_table(xi, wts.clone()));
        let nrm = bf.outward_normal();
        let vdof = |a: usize, i: usize| layout.offset(Block::Velocity) + vel.dof(cell, a, i);
        let jdof = |l: usize, s: usize| layout.offset(Block::Flux(l)) + flux.dof(cell, 0, s);
        let pdof = |s: usize| layout.offset(Block::Pressure) + cg1.dof(cell, 0, s);
        let qdof = |s: usize| layout.offset(Block::Psi) + cg1.dof(cell, 0, s);
        for (q, &w) in wts.iter().enumerate() {
            let mut v = [0.0; 2];
            for a in 0..2 {
                for i in 0..tv.nloc {
                    v[a] += state[vdof(a, i)] * tv.value(q, i);
                }
            }
            let mut s = [0.0; 2];
            for l in 0..n {
                for k in 0..tj.nloc {
                    let ph = tj.vvalue(q, k);
                    s[0] += state[jdof(l, k)] * ph[0];
                    s[1] += state[jdof(l, k)] * ph[1];
                }
            }
            let psi: f64 = (0..tp.nloc).map(|k| state[qdof(k)] * tp.value(q, k)).sum();
            let flux_n = (v[0] - psi * s[0]) * nrm[0] + (v[1] - psi * s[1]) * nrm[1];
            let sn = s[0] * nrm[0] + s[1] * nrm[1];
            for r in 0..tp.nloc {
                let phr = tp.value(q, r);
                res[pdof(r)] += w * phr * flux_n;
                if !with_jacobian {
                    continue;
                }
                for a in 0..2 {
                    for j in 0..tv.nloc {
                        entries.push((pdof(r), vdof(a, j), w * phr * tv.value(q, j) * nrm[a]));
                    }
                }
                for l in 0..n {
                    for k in 0..tj.nloc {
                        let ph = tj.vvalue(q, k);
                        entries.push((pdof(r), jdof(l, k), -w * phr * psi * (ph[0] * nrm[0] + ph[1] * nrm[1])));
                    }
                }
                for k in 0..tp.nloc {
                    entries.push((pdof(r), qdof(k), -w * phr * tp.value(q, k) * sn));
                }
            }
        }
    }
    Ok((res, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::tests::{layout, toy_problem};
    use crate::forms::{assemble_picard_raw, Constraint, FrozenPoint, FrozenSource};
    use crate::linalg::norm2;
    use crate::thermo::{Margules, SharedLaw};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// A state with positive pressure, mole fractions and density reciprocal.
    fn random_state(l: &UnknownLayout, rng: &mut ChaCha8Rng, p0: f64) -> Vec<f64> {
        let mut u: Vec<f64> = (0..l.total()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        for k in l.range(Block::Pressure) {
            u[k] = p0 * (1.0 + rng.gen_range(-0.1..0.1));
        }
        for k in l.range(Block::Psi) {
            u[k] = rng.gen_range(0.3..0.6);
        }
        for i in 0..l.n {
            for k in l.range(Block::MoleFraction(i)) {
                u[k] = rng.gen_range(0.3..0.7);
            }
        }
        u
    }

    fn fd_check(law: SharedLaw, p0: f64, k: usize, seed: u64) {
        let (mut data, _) = toy_problem();
        data.law = law;
        let l = layout(2, k, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_state(&l, &mut rng, p0);
        let set = ConstraintSet::new(
            2,
            vec![
                Constraint::MoleFractionMean,
                Constraint::Total { species: 0, amount: 1.0 },
                Constraint::BoundaryMassDifference { tag: 2 },
            ],
        )
        .unwrap();
        let opts = MonolithicOptions::default();
        let sys = assemble_monolithic_jacobian(&l, &data, &state, &set, &opts).unwrap();
        let res = |u: &[f64]| assemble_monolithic_residual(&l, &data, u, &set, &opts).unwrap();
        for _ in 0..10 {
            let dir: Vec<f64> = (0..l.total()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jw = sys.apply_jacobian(&dir);
            let best = [1e-4, 1e-5, 1e-6]
                .iter()
                .map(|&eps| {
                    let plus: Vec<f64> = state.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
                    let minus: Vec<f64> = state.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
                    let fd: Vec<f64> =
                        res(&plus).iter().zip(res(&minus)).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
                    let diff: Vec<f64> = fd.iter().zip(&jw).map(|(a, b)| a - b).collect();
                    norm2(&diff) / norm2(&jw)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "relative error {best:e}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_ideal_gas() {
        fd_check(Arc::new(crate::thermo::IdealGas { n: 2, rt: 1.0 }), 2.0, 1, 3);
        fd_check(Arc::new(crate::thermo::IdealGas { n: 2, rt: 1.0 }), 2.0, 2, 4);
    }

    #[test]
    fn jacobian_matches_finite_differences_margules() {
        let (a12, a21) = Margules::BENZENE_CYCLOHEXANE;
        fd_check(Arc::new(Margules { rt: 1.0, a12, a21, c_ref: [1.5, 1.0] }), 0.5, 2, 5);
    }

    /// Frozen values read off the state's `c(p, x)` and `Psi_h`.
    struct StateFrozen<'a> {
        layout: &'a UnknownLayout,
        data: &'a ProblemData,
        state: &'a [f64],
    }

    impl FrozenSource for StateFrozen<'_> {
        fn evaluate(&self, cell: usize, xi: &[[f64; 2]], _x: &[[f64; 2]]) -> Result<Vec<FrozenPoint>> {
            let l = self.layout;
            let w = vec![0.0; xi.len()];
            let tp = l.pressure.tabulate_with(cell, &l.pressure.reference_table(xi.to_vec(), w.clone()));
            let tm = l.potential.tabulate_with(cell, &l.potential.reference_table(xi.to_vec(), w));
            let p = l.field(self.state, Block::Pressure).values_at(cell, &tp);
            let psi = l.field(self.state, Block::Psi);
            let (pv, gv) = (psi.values_at(cell, &tp), psi.grads_at(cell, &tp));
            let xs: Vec<Vec<f64>> =
                (0..l.n).map(|i| l.field(self.state, Block::MoleFraction(i)).values_at(cell, &tm)).collect();
            (0..xi.len())
                .map(|q| {
                    let x: Vec<f64> = xs.iter().map(|v| v[q]).collect();
                    let (c, _) = concentrations_with_jacobian(self.data.law.as_ref(), p[q], &x)?;
                    Ok(FrozenPoint { c, psi: pv[q], grad_psi: [gv[2 * q], gv[2 * q + 1]] })
                })
                .collect()
        }
    }

    #[test]
    fn frozen_jacobian_reduces_to_picard_block() {
        let (data, _) = toy_problem();
        let l = layout(2, 2, true);
        let lp = layout(2, 2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let state = random_state(&l, &mut rng, 2.0);
        let set = ConstraintSet::totals(&[1.0, 1.0]).unwrap();
        let opts = MonolithicOptions { density_consistency: false, freeze_concentrations: true, exact_grad_psi: None };
        let sys = assemble_monolithic_jacobian(&l, &data, &state, &set, &opts).unwrap();
        let jac = sys.jacobian.unwrap();
        let frozen = StateFrozen { layout: &l, data: &data, state: &state };
        let (picard, _) = assemble_picard_raw(&lp, &data, &frozen).unwrap();
        let lift = build_liftings(&l, &data).unwrap();
        let skip: std::collections::HashSet<usize> =
            lift.values.iter().map(|v| v.0).chain(l.pinned_dofs()).collect();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in (0..lp.total()).filter(|i| !skip.contains(i)) {
            for j in 0..lp.total() {
                let (a, b) = (jac.get(i, j), picard.get(i, j));
                worst = worst.max((a - b).abs());
                scale = scale.max(b.abs());
            }
        }
        assert!(worst <= 1e-12 * scale, "{worst:e} vs {scale:e}");
    }

    #[test]
    fn positivity_loss_names_the_cell() {
        let (data, _) = toy_problem();
        let l = layout(2, 1, true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut state = random_state(&l, &mut rng, 2.0);
        let k = l.range(Block::MoleFraction(0)).start + 3;
        state[k] = -0.1;
        let set = ConstraintSet::totals(&[1.0, 1.0]).unwrap();
        let err = assemble_monolithic_residual(&l, &data, &state, &set, &MonolithicOptions::default()).unwrap_err();
        match err {
            SosmError::Positivity { cell, .. } => assert_eq!(cell, 3),
            other => panic!("unexpected {other}"),
        }
    }
}
