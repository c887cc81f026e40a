//! Symmetric Picard system with frozen concentrations.

use std::sync::{Arc, Mutex};

use crate::error::{Result, SosmError};
use crate::fespace::{Field, RefTable};
use crate::linalg::CsrMatrix;
use crate::quadrature::TriangleRule;
use crate::thermo::scaled_matrix;

use super::{
    apply_boundary_lifting, assemble_cells, basis_integrals, build_liftings, Block, BlockSystem, Liftings, ProblemData,
    UnknownLayout,
};

/// Frozen concentration data at one quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPoint {
    pub c: Vec<f64>,
    pub psi: f64,
    pub grad_psi: [f64; 2],
}

impl FrozenPoint {
    /// Builds `Psi = 1 / sum M_i c_i` and its gradient from concentrations
    /// and their gradients.
    pub fn from_concentrations(molar_masses: &[f64], c: Vec<f64>, grad_c: &[[f64; 2]]) -> Self {
        let rho: f64 = c.iter().zip(molar_masses).map(|(c, m)| c * m).sum();
        let psi = 1.0 / rho;
        let mut g = [0.0; 2];
        for (gc, m) in grad_c.iter().zip(molar_masses) {
            g[0] -= psi * psi * m * gc[0];
            g[1] -= psi * psi * m * gc[1];
        }
        FrozenPoint { c, psi, grad_psi: g }
    }
}

/// Source of frozen concentrations for the Picard forms.
pub trait FrozenSource: Sync {
    /// Values at reference points `xi` of `cell`, whose images are `x`.
    fn evaluate(&self, cell: usize, xi: &[[f64; 2]], x: &[[f64; 2]]) -> Result<Vec<FrozenPoint>>;
}

type ConcFn = Arc<dyn Fn([f64; 2]) -> Vec<f64> + Send + Sync>;
type ConcGradFn = Arc<dyn Fn([f64; 2]) -> Vec<[f64; 2]> + Send + Sync>;

/// Concentrations given by closures, such as an exact solution.
#[derive(Clone)]
pub struct ClosureFrozen {
    pub molar_masses: Vec<f64>,
    pub concentrations: ConcFn,
    pub gradients: ConcGradFn,
}

impl FrozenSource for ClosureFrozen {
    fn evaluate(&self, _cell: usize, _xi: &[[f64; 2]], x: &[[f64; 2]]) -> Result<Vec<FrozenPoint>> {
        Ok(x.iter()
            .map(|&p| FrozenPoint::from_concentrations(&self.molar_masses, (self.concentrations)(p), &(self.gradients)(p)))
            .collect())
    }
}

/// Concentrations stored as continuous finite element fields.
#[derive(Debug)]
pub struct FieldFrozen {
    pub molar_masses: Vec<f64>,
    pub fields: Vec<Field>,
    table: Mutex<Option<Arc<RefTable>>>,
}

impl FieldFrozen {
    pub fn new(molar_masses: Vec<f64>, fields: Vec<Field>) -> Result<Self> {
        if fields.is_empty() || fields.len() != molar_masses.len() {
            return Err(SosmError::InvalidInput("one concentration field per species required".into()));
        }
        if fields.iter().any(|f| !f.space().family().is_continuous() || f.space().ncomp() != 1) {
            return Err(SosmError::InvalidInput("frozen concentrations must be scalar continuous fields".into()));
        }
        Ok(FieldFrozen { molar_masses, fields, table: Mutex::new(None) })
    }

    fn table_for(&self, xi: &[[f64; 2]]) -> Arc<RefTable> {
        let mut guard = self.table.lock().expect("table lock");
        match guard.as_ref() {
            Some(t) if t.points == xi => t.clone(),
            _ => {
                let t = Arc::new(self.fields[0].space().reference_table(xi.to_vec(), vec![0.0; xi.len()]));
                *guard = Some(t.clone());
                t
            }
        }
    }
}

impl FrozenSource for FieldFrozen {
    fn evaluate(&self, cell: usize, xi: &[[f64; 2]], _x: &[[f64; 2]]) -> Result<Vec<FrozenPoint>> {
        let rt = self.table_for(xi);
        let t = self.fields[0].space().tabulate_with(cell, &rt);
        let vals: Vec<Vec<f64>> = self.fields.iter().map(|f| f.values_at(cell, &t)).collect();
        let grads: Vec<Vec<f64>> = self.fields.iter().map(|f| f.grads_at(cell, &t)).collect();
        let n = self.fields.len();
        (0..xi.len())
            .map(|q| {
                let c: Vec<f64> = (0..n).map(|i| vals[i][q]).collect();
                if let Some(&bad) = c.iter().find(|&&v| !(v > 0.0)) {
                    return Err(SosmError::Positivity { quantity: "frozen concentration", value: bad, cell });
                }
                let g: Vec<[f64; 2]> = (0..n).map(|i| [grads[i][2 * q], grads[i][2 * q + 1]]).collect();
                Ok(FrozenPoint::from_concentrations(&self.molar_masses, c, &g))
            })
            .collect()
    }
}

/// Picard matrix and load vector before any Dirichlet or pin elimination.
pub fn assemble_picard_raw(
    layout: &UnknownLayout,
    data: &ProblemData,
    frozen: &dyn FrozenSource,
) -> Result<(CsrMatrix, Vec<f64>)> {
    if layout.monolithic {
        return Err(SosmError::InvalidInput("Picard assembly needs the Picard layout".into()));
    }
    let n = layout.n;
    let spec = &data.spec;
    let (eta, lambda, gamma) = (spec.eta, spec.lambda(), spec.gamma);
    let rule = TriangleRule::new(layout.disc.quadrature_degree());
    let rv = layout.velocity.quadrature_table(&rule);
    let rj = layout.flux.quadrature_table(&rule);
    let rp = layout.pressure.quadrature_table(&rule);
    let rm = layout.potential.quadrature_table(&rule);
    let mut matrix = layout.pattern();
    let mut rhs = vec![0.0; layout.total()];
    let coupling = layout.coupling();
    assemble_cells(layout, true, Some(&mut matrix), &mut rhs, &coupling, |cell, ls| {
        let tv = layout.velocity.tabulate_with(cell, &rv);
        let tj = layout.flux.tabulate_with(cell, &rj);
        let tp = layout.pressure.tabulate_with(cell, &rp);
        let tm = layout.potential.tabulate_with(cell, &rm);
        let frozen_pts = frozen.evaluate(cell, &rule.points, &tv.points)?;
        let (nv, nj, np, nm) = (tv.nloc, tj.nloc, tp.nloc, tm.nloc);
        let vs = ls.starts[0];
        let js: Vec<usize> = (0..n).map(|i| ls.starts[1 + i]).collect();
        let ps = ls.starts[1 + n];
        let ms: Vec<usize> = (0..n).map(|i| ls.starts[2 + n + i]).collect();
        for q in 0..tv.nq {
            let w = tv.jxw[q];
            let fp = &frozen_pts[q];
            if let Some(&bad) = fp.c.iter().find(|&&v| !(v > 0.0)) {
                return Err(SosmError::Positivity { quantity: "frozen concentration", value: bad, cell });
            }
            let mt = scaled_matrix(spec, &fp.c);
            let rho: f64 = fp.c.iter().zip(&spec.molar_masses).map(|(c, m)| c * m).sum();
            let x = tv.points[q];
            let f = data.force(x);
            let psi = fp.psi;
            let gp = fp.grad_psi;

            for i in 0..nv {
                let (phi_i, gi) = (tv.value(q, i), tv.grad(q, i));
                for a in 0..2 {
                    let row = vs + a * nv + i;
                    ls.rhs[row] += w * rho * f[a] * phi_i;
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
                        for s in 0..nj {
                            let v = -w * gamma * psi * tj.vvalue(q, s)[a] * phi_i;
                            ls.add(row, js[l] + s, v);
                            ls.add(js[l] + s, row, v);
                        }
                    }
                    for s in 0..np {
                        let v = -w * tp.value(q, s) * gi[a];
                        ls.add(row, ps + s, v);
                        ls.add(ps + s, row, v);
                    }
                }
            }
            for i in 0..n {
                let inv_m = 1.0 / spec.molar_masses[i];
                let r_i = data.reaction(i, x);
                for r in 0..nj {
                    let (pr, dr) = (tj.vvalue(q, r), tj.div(q, r));
                    for l in 0..n {
                        let coef = gamma * psi * psi + mt[(i, l)];
                        for s in 0..nj {
                            let ps_ = tj.vvalue(q, s);
                            ls.add(js[i] + r, js[l] + s, w * coef * (pr[0] * ps_[0] + pr[1] * ps_[1]));
                        }
                    }
                    let b_p = gp[0] * pr[0] + gp[1] * pr[1] + psi * dr;
                    for s in 0..np {
                        let v = w * tp.value(q, s) * b_p;
                        ls.add(js[i] + r, ps + s, v);
                        ls.add(ps + s, js[i] + r, v);
                    }
                    for s in 0..nm {
                        let v = -w * tm.value(q, s) * dr * inv_m;
                        ls.add(js[i] + r, ms[i] + s, v);
                        ls.add(ms[i] + s, js[i] + r, v);
                    }
                }
                for s in 0..nm {
                    ls.rhs[ms[i] + s] -= w * r_i * tm.value(q, s);
                }
            }
        }
        Ok(())
    })?;
    Ok((matrix, rhs))
}

/// Picard system with Dirichlet DOFs eliminated against the liftings and the
/// first DOF of `p` and each `mu_i` pinned to zero. The load of the remaining
/// pressure and potential rows is adjusted so that the discrete equations are
/// the ones tested against zero-mean functions.
pub fn assemble_picard_system(
    layout: &UnknownLayout,
    data: &ProblemData,
    frozen: &dyn FrozenSource,
) -> Result<(BlockSystem, Liftings)> {
    let lift = build_liftings(layout, data)?;
    let (matrix, mut rhs) = assemble_picard_raw(layout, data, frozen)?;
    let mut u = vec![0.0; layout.total()];
    lift.apply_to(&mut u);
    let au = matrix.matvec(&u);
    let area = layout.mesh().total_area();
    let mut blocks = vec![Block::Pressure];
    blocks.extend((0..layout.n).map(Block::Potential));
    for b in blocks {
        let range = layout.range(b);
        let defect: f64 = range.clone().map(|k| au[k] - rhs[k]).sum();
        let ints = basis_integrals(layout.space(b));
        for (k, a) in range.zip(ints) {
            rhs[k] += a / area * defect;
        }
    }
    let pinned = layout.pinned_dofs();
    let mut fixed = lift.values.clone();
    fixed.extend(pinned.iter().map(|&k| (k, 0.0)));
    let (matrix, rhs) = apply_boundary_lifting(matrix, rhs, &fixed);
    Ok((BlockSystem { matrix, rhs, dirichlet: lift.values.clone(), pinned, symmetric: true }, lift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::tests::{layout, toy_problem};

    #[test]
    fn picard_matrix_is_symmetric() {
        for k in [1, 2] {
            let l = layout(2, k, false);
            let (data, frozen) = toy_problem();
            let (m, _) = assemble_picard_raw(&l, &data, &frozen).unwrap();
            assert_eq!(m.asymmetry(), 0.0);
            let (sys, _) = assemble_picard_system(&l, &data, &frozen).unwrap();
            assert_eq!(sys.matrix.asymmetry(), 0.0);
        }
    }

    #[test]
    fn field_and_closure_sources_agree_on_quadratics() {
        let l = layout(2, 2, false);
        let (data, closure) = toy_problem();
        let cg2 = Arc::new(
            crate::fespace::FunctionSpace::new(l.mesh().clone(), crate::fespace::ElementFamily::ContinuousLagrange(2))
                .unwrap(),
        );
        let fields = (0..2)
            .map(|i| crate::fespace::interpolate_scalar(&cg2, |x| (closure.concentrations)(x)[i]))
            .collect();
        let ff = FieldFrozen::new(data.spec.molar_masses.clone(), fields).unwrap();
        let xi = [[0.2, 0.3], [0.6, 0.1]];
        for cell in 0..l.mesh().num_cells() {
            let g = crate::fespace::CellGeometry::new(l.mesh(), cell);
            let x: Vec<[f64; 2]> = xi.iter().map(|&p| g.map(p)).collect();
            let a = ff.evaluate(cell, &xi, &x).unwrap();
            let b = closure.evaluate(cell, &xi, &x).unwrap();
            for (a, b) in a.iter().zip(&b) {
                assert!((a.psi - b.psi).abs() < 1e-13);
                assert!((a.grad_psi[0] - b.grad_psi[0]).abs() < 1e-12);
            }
        }
    }
}
