//! Mixture constants, Onsager transport matrices and constitutive laws.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SosmError};
use crate::fespace::{CellTable, Field};
use crate::quadrature::TriangleRule;

/// Physical constants of an `n`-species mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub molar_masses: Vec<f64>,
    /// Symmetric Stefan-Maxwell diffusivities; the diagonal is unused.
    pub diffusivities: DMatrix<f64>,
    pub rt: f64,
    pub eta: f64,
    pub zeta: f64,
    pub gamma: f64,
}

impl MixtureSpec {
    pub fn new(
        molar_masses: Vec<f64>,
        diffusivities: DMatrix<f64>,
        rt: f64,
        eta: f64,
        zeta: f64,
        gamma: f64,
    ) -> Result<Self> {
        let n = molar_masses.len();
        if n < 2 {
            return Err(SosmError::InvalidInput("a mixture needs at least two species".into()));
        }
        if diffusivities.nrows() != n || diffusivities.ncols() != n {
            return Err(SosmError::InvalidInput(format!("diffusivity table must be {n}x{n}")));
        }
        if molar_masses.iter().any(|&m| !(m > 0.0)) {
            return Err(SosmError::InvalidInput("molar masses must be positive".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = diffusivities[(i, j)];
                if !(d > 0.0) || d != diffusivities[(j, i)] {
                    return Err(SosmError::InvalidInput(format!("diffusivity ({i},{j}) must be positive and symmetric")));
                }
            }
        }
        for (name, v) in [("RT", rt), ("eta", eta), ("zeta", zeta)] {
            if !(v > 0.0) {
                return Err(SosmError::InvalidInput(format!("{name} must be positive")));
            }
        }
        if !(gamma >= 0.0) {
            return Err(SosmError::InvalidInput("gamma must be nonnegative".into()));
        }
        Ok(MixtureSpec { molar_masses, diffusivities, rt, eta, zeta, gamma })
    }

    /// Diffusivities of the product form `D_ij = D_i D_j`.
    pub fn product_diffusivities(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(d.len(), d.len(), |i, j| d[i] * d[j])
    }

    pub fn n(&self) -> usize {
        self.molar_masses.len()
    }

    /// Lamé coefficient `zeta - 2 eta / d` with `d = 2`.
    pub fn lambda(&self) -> f64 {
        self.zeta - self.eta
    }
}

fn check_positive(c: &[f64]) -> Result<()> {
    for &v in c {
        if !(v > 0.0) {
            return Err(SosmError::Positivity { quantity: "concentration", value: v, cell: usize::MAX });
        }
    }
    Ok(())
}

/// Onsager transport matrix.
pub fn transport_matrix(spec: &MixtureSpec, c: &[f64]) -> Result<DMatrix<f64>> {
    check_positive(c)?;
    let n = spec.n();
    let ct: f64 = c.iter().sum();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = spec.rt * c[i] * c[j] / (spec.diffusivities[(i, j)] * ct);
            m[(i, j)] = -v;
            m[(j, i)] = -v;
            m[(i, i)] += v;
            m[(j, j)] += v;
        }
    }
    Ok(m)
}

/// Scaled transport matrix `M_ij / (M_i M_j c_i c_j)` without augmentation,
/// written so no cancellation occurs.
pub fn scaled_matrix(spec: &MixtureSpec, c: &[f64]) -> DMatrix<f64> {
    let n = spec.n();
    let ct: f64 = c.iter().sum();
    let mm = &spec.molar_masses;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            let s: f64 = (0..n).filter(|&l| l != i).map(|l| c[l] / spec.diffusivities[(i, l)]).sum();
            spec.rt * s / (mm[i] * mm[i] * c[i] * ct)
        } else {
            -spec.rt / (spec.diffusivities[(i, j)] * ct * mm[i] * mm[j])
        }
    })
}

/// Derivatives of [`scaled_matrix`] with respect to each concentration.
pub fn scaled_matrix_derivatives(spec: &MixtureSpec, c: &[f64]) -> Vec<DMatrix<f64>> {
    let n = spec.n();
    let ct: f64 = c.iter().sum();
    let mm = &spec.molar_masses;
    (0..n)
        .map(|k| {
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    let s: f64 = (0..n).filter(|&l| l != i).map(|l| c[l] / spec.diffusivities[(i, l)]).sum();
                    let ds = if k != i { 1.0 / spec.diffusivities[(i, k)] } else { 0.0 };
                    let denom = c[i] * ct;
                    let ddenom = if k == i { ct + c[i] } else { c[i] };
                    spec.rt * (ds / denom - s * ddenom / (denom * denom)) / (mm[i] * mm[i])
                } else {
                    spec.rt / (spec.diffusivities[(i, j)] * ct * ct * mm[i] * mm[j])
                }
            })
        })
        .collect()
}

/// `M_ij / (M_i M_j c_i c_j) + gamma Psi^2` with `Psi = 1 / rho`.
pub fn scaled_augmented_matrix(spec: &MixtureSpec, c: &[f64]) -> Result<DMatrix<f64>> {
    check_positive(c)?;
    let rho: f64 = c.iter().zip(&spec.molar_masses).map(|(c, m)| c * m).sum();
    let psi = 1.0 / rho;
    Ok(scaled_matrix(spec, c).add_scalar(spec.gamma * psi * psi))
}

/// Partial molar Gibbs energies `G_i(p, x)` and volumes `V_i(p, x)`.
///
/// Derivative methods default to central differences; laws override them
/// with exact expressions.
pub trait ConstitutiveLaw: Send + Sync + std::fmt::Debug {
    fn n(&self) -> usize;
    fn gibbs(&self, p: f64, x: &[f64]) -> Vec<f64>;
    fn volumes(&self, p: f64, x: &[f64]) -> Vec<f64>;

    /// `(dG/dp, dG_i/dx_j)`.
    fn gibbs_derivatives(&self, p: f64, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        central_differences(p, x, |p, x| self.gibbs(p, x))
    }

    /// `(dV/dp, dV_i/dx_j)`.
    fn volume_derivatives(&self, p: f64, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        central_differences(p, x, |p, x| self.volumes(p, x))
    }

    /// `Some(RT)` when the law is the ideal gas, enabling closed forms.
    fn ideal_gas_rt(&self) -> Option<f64> {
        None
    }

    /// Whether relabelling the species leaves the law unchanged.
    fn is_species_symmetric(&self) -> bool {
        false
    }

    /// Whether `p` and `x` lie in the law's domain.
    fn admissible(&self, p: f64, x: &[f64]) -> bool {
        p.is_finite() && x.iter().all(|&v| v > 0.0)
    }
}

/// Central-difference derivatives of a vector function of `(p, x)`.
pub fn central_differences<F>(p: f64, x: &[f64], f: F) -> (Vec<f64>, DMatrix<f64>)
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let n = x.len();
    let hp = 1e-6 * p.abs().max(1.0);
    let fp = f(p + hp, x);
    let fm = f(p - hp, x);
    let dp = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * hp)).collect();
    let mut dx = DMatrix::zeros(fp.len(), n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        let a = f(p, &xp);
        xp[j] = x[j] - h;
        let b = f(p, &xp);
        xp[j] = x[j];
        for i in 0..a.len() {
            dx[(i, j)] = (a[i] - b[i]) / (2.0 * h);
        }
    }
    (dp, dx)
}

/// `G_i = RT ln(x_i p)`, `V_i = RT / p`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealGas {
    pub n: usize,
    pub rt: f64,
}

impl ConstitutiveLaw for IdealGas {
    fn n(&self) -> usize {
        self.n
    }

    fn gibbs(&self, p: f64, x: &[f64]) -> Vec<f64> {
        x.iter().map(|xi| self.rt * (xi * p).ln()).collect()
    }

    fn volumes(&self, p: f64, _x: &[f64]) -> Vec<f64> {
        vec![self.rt / p; self.n]
    }

    fn gibbs_derivatives(&self, p: f64, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.n;
        (vec![self.rt / p; n], DMatrix::from_fn(n, n, |i, j| if i == j { self.rt / x[i] } else { 0.0 }))
    }

    fn volume_derivatives(&self, p: f64, _x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        (vec![-self.rt / (p * p); self.n], DMatrix::zeros(self.n, self.n))
    }

    fn ideal_gas_rt(&self) -> Option<f64> {
        Some(self.rt)
    }

    fn is_species_symmetric(&self) -> bool {
        true
    }

    fn admissible(&self, p: f64, x: &[f64]) -> bool {
        p > 0.0 && x.iter().all(|&v| v > 0.0)
    }
}

/// Binary two-parameter Margules liquid with constant partial volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Margules {
    pub rt: f64,
    pub a12: f64,
    pub a21: f64,
    pub c_ref: [f64; 2],
}

impl Margules {
    pub const BENZENE_CYCLOHEXANE: (f64, f64) = (0.4498, 0.4952);
}

impl ConstitutiveLaw for Margules {
    fn n(&self) -> usize {
        2
    }

    fn gibbs(&self, p: f64, x: &[f64]) -> Vec<f64> {
        let (x1, x2) = (x[0], x[1]);
        let (a, b) = (self.a12, self.a21);
        vec![
            p / self.c_ref[0] + self.rt * x1.ln() + self.rt * x2 * x2 * (a + 2.0 * (b - a) * x1),
            p / self.c_ref[1] + self.rt * x2.ln() + self.rt * x1 * x1 * (b + 2.0 * (a - b) * x2),
        ]
    }

    fn volumes(&self, _p: f64, _x: &[f64]) -> Vec<f64> {
        vec![1.0 / self.c_ref[0], 1.0 / self.c_ref[1]]
    }

    fn gibbs_derivatives(&self, _p: f64, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let (x1, x2) = (x[0], x[1]);
        let (a, b) = (self.a12, self.a21);
        let rt = self.rt;
        let d = DMatrix::from_row_slice(
            2,
            2,
            &[
                rt / x1 + rt * x2 * x2 * 2.0 * (b - a),
                rt * 2.0 * x2 * (a + 2.0 * (b - a) * x1),
                rt * 2.0 * x1 * (b + 2.0 * (a - b) * x2),
                rt / x2 + rt * x1 * x1 * 2.0 * (a - b),
            ],
        );
        (vec![1.0 / self.c_ref[0], 1.0 / self.c_ref[1]], d)
    }

    fn volume_derivatives(&self, _p: f64, _x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        (vec![0.0; 2], DMatrix::zeros(2, 2))
    }

    fn is_species_symmetric(&self) -> bool {
        self.a12 == self.a21 && self.c_ref[0] == self.c_ref[1]
    }
}

/// Pointwise thermodynamic state built from concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationState {
    pub c: Vec<f64>,
    pub c_total: f64,
    pub rho: f64,
    pub psi: f64,
    pub omega: Vec<f64>,
    pub x: Vec<f64>,
}

impl ConcentrationState {
    pub fn from_concentrations(molar_masses: &[f64], c: Vec<f64>) -> Result<Self> {
        check_positive(&c)?;
        let c_total: f64 = c.iter().sum();
        let rho: f64 = c.iter().zip(molar_masses).map(|(c, m)| c * m).sum();
        let omega = c.iter().zip(molar_masses).map(|(c, m)| m * c / rho).collect();
        let x = c.iter().map(|c| c / c_total).collect();
        Ok(ConcentrationState { c, c_total, rho, psi: 1.0 / rho, omega, x })
    }
}

/// Sensitivities of concentrations with respect to `p` and the raw mole fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationJacobian {
    pub dc_dp: Vec<f64>,
    /// `dc_dx[(i, k)] = d c_i / d x_k`
    pub dc_dx: DMatrix<f64>,
}

/// Concentrations from pressure and (unnormalized) mole fractions.
pub fn concentrations_from(
    law: &dyn ConstitutiveLaw,
    molar_masses: &[f64],
    p: f64,
    x_raw: &[f64],
) -> Result<ConcentrationState> {
    let (c, _) = concentrations_core(law, p, x_raw, false)?;
    ConcentrationState::from_concentrations(molar_masses, c)
}

/// Concentrations and their derivatives.
pub fn concentrations_with_jacobian(
    law: &dyn ConstitutiveLaw,
    p: f64,
    x_raw: &[f64],
) -> Result<(Vec<f64>, ConcentrationJacobian)> {
    let (c, jac) = concentrations_core(law, p, x_raw, true)?;
    Ok((c, jac.expect("requested")))
}

fn concentrations_core(
    law: &dyn ConstitutiveLaw,
    p: f64,
    x_raw: &[f64],
    with_jacobian: bool,
) -> Result<(Vec<f64>, Option<ConcentrationJacobian>)> {
    let n = x_raw.len();
    if n != law.n() {
        return Err(SosmError::InvalidInput(format!("law has {} species, got {n}", law.n())));
    }
    for &v in x_raw {
        if !(v > 0.0) {
            return Err(SosmError::Positivity { quantity: "mole fraction", value: v, cell: usize::MAX });
        }
    }
    let s: f64 = x_raw.iter().sum();
    let xn: Vec<f64> = x_raw.iter().map(|v| v / s).collect();
    let vols = law.volumes(p, &xn);
    let vsum: f64 = xn.iter().zip(&vols).map(|(x, v)| x * v).sum();
    if !(vsum > 0.0) || !vsum.is_finite() {
        return Err(SosmError::Positivity { quantity: "total concentration", value: 1.0 / vsum, cell: usize::MAX });
    }
    let ct = 1.0 / vsum;
    let c: Vec<f64> = xn.iter().map(|x| ct * x).collect();
    if !with_jacobian {
        return Ok((c, None));
    }
    let (dv_dp, dv_dx) = law.volume_derivatives(p, &xn);
    let dxn = DMatrix::from_fn(n, n, |i, k| ((i == k) as u8 as f64 - xn[i]) / s);
    // d vsum / d xn_m
    let dvs_dxn: Vec<f64> = (0..n).map(|m| vols[m] + (0..n).map(|j| xn[j] * dv_dx[(j, m)]).sum::<f64>()).collect();
    let dvs_dp: f64 = (0..n).map(|j| xn[j] * dv_dp[j]).sum();
    let dct_dp = -ct * ct * dvs_dp;
    let dct_dx: Vec<f64> = (0..n).map(|k| -ct * ct * (0..n).map(|m| dvs_dxn[m] * dxn[(m, k)]).sum::<f64>()).collect();
    let dc_dp = xn.iter().map(|x| dct_dp * x).collect();
    let dc_dx = DMatrix::from_fn(n, n, |i, k| dct_dx[k] * xn[i] + ct * dxn[(i, k)]);
    Ok((c, Some(ConcentrationJacobian { dc_dp, dc_dx })))
}

/// Ideal-gas concentrations `c_i = N_i exp(mu_i / RT) / ∫ exp(mu_i / RT)`.
#[derive(Debug, Clone)]
pub struct IdealGasClosedForm {
    pub mu: Vec<Field>,
    pub scale: Vec<f64>,
    pub rt: f64,
}

impl IdealGasClosedForm {
    /// Concentrations at the points of a table built on the potentials' space.
    pub fn at(&self, cell: usize, t: &CellTable) -> Vec<Vec<f64>> {
        self.mu
            .iter()
            .zip(&self.scale)
            .map(|(mu, s)| mu.values_at(cell, t).into_iter().map(|m| s * (m / self.rt).exp()).collect())
            .collect()
    }
}

pub fn ideal_gas_concentration_closed_form(mu: &[Field], totals: &[f64], rt: f64) -> Result<IdealGasClosedForm> {
    if mu.len() != totals.len() {
        return Err(SosmError::InvalidInput("one total per species required".into()));
    }
    let mut scale = Vec::with_capacity(mu.len());
    for (field, &total) in mu.iter().zip(totals) {
        if !(total > 0.0) {
            return Err(SosmError::InvalidInput("species totals must be positive".into()));
        }
        let space = field.space();
        // shift by the max for overflow safety; it cancels in the ratio
        let shift = field.coeffs().iter().cloned().fold(f64::NEG_INFINITY, f64::max) / rt;
        let rule = TriangleRule::new(8);
        let rtab = space.quadrature_table(&rule);
        let per_cell: Vec<f64> = (0..space.mesh().num_cells())
            .into_par_iter()
            .map(|c| {
                let t = space.tabulate_with(c, &rtab);
                field.values_at(c, &t).iter().zip(&t.jxw).map(|(m, w)| w * (m / rt - shift).exp()).sum()
            })
            .collect();
        let integral: f64 = per_cell.iter().sum();
        let s = total / integral * (-shift).exp();
        if !s.is_finite() || !(integral > 0.0) {
            return Err(SosmError::InvalidInput(format!("nonfinite exponential normalisation ({integral:e})")));
        }
        scale.push(s);
    }
    Ok(IdealGasClosedForm { mu: mu.to_vec(), scale, rt })
}

/// Mole fractions solving `G_i(p, x) = mu_i` up to a common constant.
/// Ideal gases use the closed form `x_i ∝ exp(mu_i / RT)`.
pub fn constitutive_invert(law: &dyn ConstitutiveLaw, mu: &[f64], p: f64, x_guess: &[f64]) -> Result<Vec<f64>> {
    match law.ideal_gas_rt() {
        Some(rt) => {
            let m = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = mu.iter().map(|v| ((v - m) / rt).exp()).collect();
            let s: f64 = w.iter().sum();
            Ok(w.into_iter().map(|v| v / s).collect())
        }
        None => constitutive_invert_newton(law, mu, p, x_guess),
    }
}

/// Damped Newton in the log-simplex variables `x = softmax(y)`, `y_n = 0`.
pub fn constitutive_invert_newton(law: &dyn ConstitutiveLaw, mu: &[f64], p: f64, x_guess: &[f64]) -> Result<Vec<f64>> {
    let n = law.n();
    if mu.len() != n || x_guess.len() != n {
        return Err(SosmError::InvalidInput("species count mismatch".into()));
    }
    if x_guess.iter().any(|&v| !(v > 0.0)) {
        return Err(SosmError::Positivity { quantity: "mole fraction guess", value: x_guess.iter().cloned().fold(f64::INFINITY, f64::min), cell: usize::MAX });
    }
    let softmax = |y: &[f64]| -> Vec<f64> {
        let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = y.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let residual = |x: &[f64]| -> DVector<f64> {
        let g = law.gibbs(p, x);
        DVector::from_fn(n - 1, |i, _| (g[i] - g[n - 1]) - (mu[i] - mu[n - 1]))
    };
    let mut y: Vec<f64> = x_guess.iter().map(|v| (v / x_guess[n - 1]).ln()).collect();
    let mut x = softmax(&y);
    let mut r = residual(&x);
    let tol = 1e-12;
    for _ in 0..100 {
        if r.amax() < tol {
            return Ok(x);
        }
        let (_, dg) = law.gibbs_derivatives(p, &x);
        let jac = DMatrix::from_fn(n - 1, n - 1, |i, k| {
            (0..n).map(|j| (dg[(i, j)] - dg[(n - 1, j)]) * x[j] * ((j == k) as u8 as f64 - x[k])).sum()
        });
        let step = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| SosmError::Singular("constitutive inversion Jacobian".into()))?;
        let mut alpha = 1.0;
        let rn = r.norm();
        loop {
            let mut yt = y.clone();
            for i in 0..n - 1 {
                yt[i] += alpha * step[i];
            }
            let xt = softmax(&yt);
            let rt = residual(&xt);
            if rt.norm() < rn || alpha < 1e-4 {
                y = yt;
                x = xt;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
    }
    if r.amax() < tol {
        Ok(x)
    } else {
        Err(SosmError::NoConvergence { iterations: 100, norm: r.amax() })
    }
}

pub type SharedLaw = Arc<dyn ConstitutiveLaw>;
