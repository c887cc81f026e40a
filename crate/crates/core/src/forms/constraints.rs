//! Integral constraints fixing the constants of pressure and potentials.

use crate::error::{Result, SosmError};
use crate::fespace::RefTable;
use crate::quadrature::{LineRule, TriangleRule};
use crate::thermo::concentrations_with_jacobian;

use super::{boundary_facets, Block, ProblemData, UnknownLayout};

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `∫ (1 - sum_j x_j) dx = 0`
    MoleFractionMean,
    /// `∫ c_i dx = amount`
    Total { species: usize, amount: f64 },
    /// `∫ p dx = 0`
    PressureMean,
    /// `∫_Γ (M_1 c_1 - M_2 c_2) ds = 0` over the facets carrying `tag`.
    BoundaryMassDifference { tag: i32 },
}

/// Exactly `n + 1` constraints, one of which is [`Constraint::MoleFractionMean`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(n: usize, constraints: Vec<Constraint>) -> Result<Self> {
        if constraints.len() != n + 1 {
            return Err(SosmError::InvalidInput(format!(
                "{} constraints given, {} required",
                constraints.len(),
                n + 1
            )));
        }
        if !constraints.contains(&Constraint::MoleFractionMean) {
            return Err(SosmError::InvalidInput("the mole fraction mean constraint is required".into()));
        }
        for c in &constraints {
            match c {
                Constraint::Total { species, amount } if *species >= n || !(*amount > 0.0) => {
                    return Err(SosmError::InvalidInput(format!("invalid total constraint {c:?}")));
                }
                Constraint::BoundaryMassDifference { .. } if n != 2 => {
                    return Err(SosmError::InvalidInput("boundary mass difference needs two species".into()));
                }
                _ => {}
            }
        }
        Ok(ConstraintSet { constraints })
    }

    /// Mole fraction mean plus prescribed totals of every species.
    pub fn totals(amounts: &[f64]) -> Result<Self> {
        let mut c = vec![Constraint::MoleFractionMean];
        c.extend(amounts.iter().enumerate().map(|(species, &amount)| Constraint::Total { species, amount }));
        Self::new(amounts.len(), c)
    }
}

/// Constraint values and dense gradients over the whole unknown vector.
#[derive(Debug, Clone)]
pub struct ConstraintValues {
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
}

/// Evaluates the constraints at a monolithic state.
pub fn constraint_functional(
    layout: &UnknownLayout,
    data: &ProblemData,
    state: &[f64],
    set: &ConstraintSet,
) -> Result<ConstraintValues> {
    if !layout.monolithic {
        return Err(SosmError::InvalidInput("constraints act on the monolithic layout".into()));
    }
    let n = layout.n;
    if set.constraints.len() != n + 1 {
        return Err(SosmError::InvalidInput("constraint count must be n + 1".into()));
    }
    let mesh = layout.mesh();
    let law = data.law.as_ref();
    let mm = &data.spec.molar_masses;
    let nt = layout.total();
    let mut values = vec![0.0; n + 1];
    let mut gradients = vec![vec![0.0; nt]; n + 1];
    let pspace = &layout.pressure;
    let xspace = &layout.potential;
    let poff = layout.offset(Block::Pressure);
    let xoffs: Vec<usize> = (0..n).map(|i| layout.offset(Block::MoleFraction(i))).collect();

    // evaluates p, x at reference points of a cell and accumulates weighted
    // integrands of the requested constraints
    let mut accumulate = |cell: usize, rp: &RefTable, rx: &RefTable, which: &[usize], physical: bool| -> Result<()> {
        let tp = pspace.tabulate_with(cell, rp);
        let tx = xspace.tabulate_with(cell, rx);
        let scale = if physical { 1.0 } else { tp.geometry.det.abs() };
        for q in 0..tp.nq {
            let w = rp.weights[q] * scale;
            let p: f64 = (0..tp.nloc).map(|k| state[poff + pspace.dof(cell, 0, k)] * tp.value(q, k)).sum();
            let x: Vec<f64> = (0..n)
                .map(|i| (0..tx.nloc).map(|k| state[xoffs[i] + xspace.dof(cell, 0, k)] * tx.value(q, k)).sum())
                .collect();
            let needs_c = which.iter().any(|&k| {
                matches!(set.constraints[k], Constraint::Total { .. } | Constraint::BoundaryMassDifference { .. })
            });
            let cj = if needs_c {
                Some(concentrations_with_jacobian(law, p, &x).map_err(|e| match e {
                    SosmError::Positivity { quantity, value, .. } => SosmError::Positivity { quantity, value, cell },
                    other => other,
                })?)
            } else {
                None
            };
            for &k in which {
                let g = &mut gradients[k];
                // (integrand, d/dp, d/dx_j)
                let (f, dp, dx): (f64, f64, Vec<f64>) = match &set.constraints[k] {
                    Constraint::MoleFractionMean => (1.0 - x.iter().sum::<f64>(), 0.0, vec![-1.0; n]),
                    Constraint::PressureMean => (p, 1.0, vec![0.0; n]),
                    Constraint::Total { species, .. } => {
                        let (c, j) = cj.as_ref().unwrap();
                        (c[*species], j.dc_dp[*species], (0..n).map(|m| j.dc_dx[(*species, m)]).collect())
                    }
                    Constraint::BoundaryMassDifference { .. } => {
                        let (c, j) = cj.as_ref().unwrap();
                        (
                            mm[0] * c[0] - mm[1] * c[1],
                            mm[0] * j.dc_dp[0] - mm[1] * j.dc_dp[1],
                            (0..n).map(|m| mm[0] * j.dc_dx[(0, m)] - mm[1] * j.dc_dx[(1, m)]).collect(),
                        )
                    }
                };
                values[k] += w * f;
                if dp != 0.0 {
                    for s in 0..tp.nloc {
                        g[poff + pspace.dof(cell, 0, s)] += w * dp * tp.value(q, s);
                    }
                }
                for (m, d) in dx.iter().enumerate() {
                    if *d != 0.0 {
                        for s in 0..tx.nloc {
                            g[xoffs[m] + xspace.dof(cell, 0, s)] += w * d * tx.value(q, s);
                        }
                    }
                }
            }
        }
        Ok(())
    };

    let volume: Vec<usize> = (0..=n)
        .filter(|&k| !matches!(set.constraints[k], Constraint::BoundaryMassDifference { .. }))
        .collect();
    let rule = TriangleRule::new(layout.disc.quadrature_degree());
    let (rp, rx) = (pspace.quadrature_table(&rule), xspace.quadrature_table(&rule));
    for cell in 0..mesh.num_cells() {
        accumulate(cell, &rp, &rx, &volume, false)?;
    }
    let line = LineRule::new(layout.disc.quadrature_degree());
    let facets = boundary_facets(mesh);
    for k in 0..=n {
        if let Constraint::BoundaryMassDifference { tag } = set.constraints[k] {
            for bf in facets.iter().filter(|f| f.tag == tag) {
                let (xi, _, w) = bf.quadrature(mesh, &line);
                let rp = pspace.reference_table(xi.clone(), w.clone());
                let rx = xspace.reference_table(xi, w);
                accumulate(bf.cell, &rp, &rx, &[k], true)?;
            }
        }
    }
    for (k, c) in set.constraints.iter().enumerate() {
        if let Constraint::Total { amount, .. } = c {
            values[k] -= amount;
        }
    }
    Ok(ConstraintValues { values, gradients })
}
