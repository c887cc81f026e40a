//! Unknown layout, boundary data, liftings and the assembly plumbing shared by
//! the Picard and monolithic formulations.

mod constraints;
mod monolithic;
mod picard;

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Result, SosmError};
use crate::fespace::{CellGeometry, ElementFamily, Field, FunctionSpace};
use crate::linalg::CsrMatrix;
use crate::mesh::Mesh;
use crate::quadrature::{legendre, LineRule, TriangleRule};
use crate::thermo::{MixtureSpec, SharedLaw};

pub use constraints::{constraint_functional, Constraint, ConstraintSet, ConstraintValues};
pub use monolithic::{
    assemble_density_consistency, assemble_monolithic, assemble_monolithic_jacobian, assemble_monolithic_residual,
    MonolithicOptions, MonolithicSystem,
};
pub use picard::{assemble_picard_raw, assemble_picard_system, ClosureFrozen, FieldFrozen, FrozenPoint, FrozenSource};

pub type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;
/// Boundary sampler receiving the point and the boundary tag.
pub type TaggedVectorFn = Arc<dyn Fn([f64; 2], i32) -> [f64; 2] + Send + Sync>;

/// Flux element family of a discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxFamily {
    RaviartThomas,
    BrezziDouglasMarini,
}

/// Polynomial degrees. The velocity/pressure pair is Taylor-Hood CG2-CG1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Discretization {
    pub velocity_degree: usize,
    pub flux_degree: usize,
    pub flux_family: FluxFamily,
}

impl Discretization {
    pub fn new(velocity_degree: usize, flux_degree: usize, flux_family: FluxFamily) -> Result<Self> {
        if velocity_degree != 2 {
            return Err(SosmError::Unsupported(format!(
                "velocity degree {velocity_degree}; only the CG2-CG1 Taylor-Hood pair is available"
            )));
        }
        if !(1..=2).contains(&flux_degree) {
            return Err(SosmError::Unsupported(format!("flux degree {flux_degree}")));
        }
        Ok(Discretization { velocity_degree, flux_degree, flux_family })
    }

    pub fn flux_element(&self) -> ElementFamily {
        match self.flux_family {
            FluxFamily::RaviartThomas => ElementFamily::RaviartThomas(self.flux_degree),
            FluxFamily::BrezziDouglasMarini => ElementFamily::BrezziDouglasMarini(self.flux_degree),
        }
    }

    /// Smallest of the two pair degrees, which bounds the expected rates.
    pub fn effective_degree(&self) -> usize {
        self.velocity_degree.min(self.flux_degree)
    }

    /// Quadrature exactness used for all forms.
    pub fn quadrature_degree(&self) -> usize {
        2 * self.velocity_degree.max(self.flux_degree) + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Velocity,
    Flux(usize),
    Pressure,
    Potential(usize),
    MoleFraction(usize),
    Psi,
}

/// Ordered unknown blocks `[v, J_1..J_n, p, mu_1..mu_n, (x_1..x_n, Psi)]`.
#[derive(Debug, Clone)]
pub struct UnknownLayout {
    pub n: usize,
    pub monolithic: bool,
    pub disc: Discretization,
    pub velocity: Arc<FunctionSpace>,
    pub flux: Arc<FunctionSpace>,
    pub pressure: Arc<FunctionSpace>,
    pub potential: Arc<FunctionSpace>,
    pub psi: Arc<FunctionSpace>,
    offsets: Vec<usize>,
}

impl UnknownLayout {
    pub fn new(mesh: Arc<Mesh>, disc: Discretization, n: usize, monolithic: bool) -> Result<Self> {
        if n < 2 {
            return Err(SosmError::InvalidInput("at least two species required".into()));
        }
        let velocity = Arc::new(FunctionSpace::with_components(mesh.clone(), ElementFamily::ContinuousLagrange(2), 2)?);
        let flux = Arc::new(FunctionSpace::new(mesh.clone(), disc.flux_element())?);
        let pressure =
            Arc::new(FunctionSpace::new(mesh.clone(), ElementFamily::ContinuousLagrange(1))?.with_zero_mean(true));
        let potential = Arc::new(
            FunctionSpace::new(mesh.clone(), ElementFamily::DiscontinuousLagrange(disc.flux_degree - 1))?
                .with_zero_mean(true),
        );
        let psi = Arc::new(FunctionSpace::new(mesh, ElementFamily::ContinuousLagrange(1))?);
        let mut layout = UnknownLayout { n, monolithic, disc, velocity, flux, pressure, potential, psi, offsets: vec![] };
        let mut off = 0;
        for b in layout.blocks() {
            layout.offsets.push(off);
            off += layout.space(b).ndof();
        }
        layout.offsets.push(off);
        Ok(layout)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.velocity.mesh()
    }

    pub fn blocks(&self) -> Vec<Block> {
        let n = self.n;
        let mut b = vec![Block::Velocity];
        b.extend((0..n).map(Block::Flux));
        b.push(Block::Pressure);
        b.extend((0..n).map(Block::Potential));
        if self.monolithic {
            b.extend((0..n).map(Block::MoleFraction));
            b.push(Block::Psi);
        }
        b
    }

    pub fn block_index(&self, b: Block) -> usize {
        let n = self.n;
        match b {
            Block::Velocity => 0,
            Block::Flux(i) => 1 + i,
            Block::Pressure => 1 + n,
            Block::Potential(i) => 2 + n + i,
            Block::MoleFraction(i) => 2 + 2 * n + i,
            Block::Psi => 2 + 3 * n,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn space(&self, b: Block) -> &Arc<FunctionSpace> {
        match b {
            Block::Velocity => &self.velocity,
            Block::Flux(_) => &self.flux,
            Block::Pressure => &self.pressure,
            Block::Potential(_) | Block::MoleFraction(_) => &self.potential,
            Block::Psi => &self.psi,
        }
    }

    pub fn range(&self, b: Block) -> Range<usize> {
        let k = self.block_index(b);
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn offset(&self, b: Block) -> usize {
        self.offsets[self.block_index(b)]
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Copies one block of a global vector into a field.
    pub fn field(&self, u: &[f64], b: Block) -> Field {
        Field::from_coeffs(self.space(b).clone(), u[self.range(b)].to_vec()).expect("block size")
    }

    pub fn set_field(&self, u: &mut [f64], b: Block, f: &Field) {
        u[self.range(b)].copy_from_slice(f.coeffs());
    }

    /// Local block sizes on a cell, in block order.
    pub fn local_sizes(&self) -> Vec<usize> {
        self.blocks().iter().map(|&b| self.space(b).nloc() * self.space(b).ncomp()).collect()
    }

    /// Global DOFs of a cell in local order and the local start of each block.
    pub fn cell_dofs(&self, cell: usize) -> (Vec<usize>, Vec<usize>) {
        let mut dofs = Vec::new();
        let mut starts = Vec::new();
        for b in self.blocks() {
            starts.push(dofs.len());
            let s = self.space(b);
            let off = self.offset(b);
            for c in 0..s.ncomp() {
                dofs.extend((0..s.nloc()).map(|i| off + s.dof(cell, c, i)));
            }
        }
        starts.push(dofs.len());
        (dofs, starts)
    }

    /// Global DOFs of the zero-mean pins: first DOF of `p` and each `mu_i`.
    pub fn pinned_dofs(&self) -> Vec<usize> {
        let mut v = vec![self.offset(Block::Pressure)];
        v.extend((0..self.n).map(|i| self.offset(Block::Potential(i))));
        v
    }

    /// `coupling()[row][col]`: whether a row block depends on a column block.
    pub fn coupling(&self) -> Vec<Vec<bool>> {
        use Block::*;
        let nb = self.num_blocks();
        let mut c = vec![vec![false; nb]; nb];
        let n = self.n;
        let mut set = |r: Block, col: Block| c[self.block_index(r)][self.block_index(col)] = true;
        let fluxes: Vec<Block> = (0..n).map(Flux).collect();
        for &col in [Velocity, Pressure].iter().chain(&fluxes) {
            set(Velocity, col);
        }
        for i in 0..n {
            for &col in [Velocity, Pressure, Potential(i)].iter().chain(&fluxes) {
                set(Flux(i), col);
            }
            set(Potential(i), Flux(i));
        }
        for &col in [Velocity].iter().chain(&fluxes) {
            set(Pressure, col);
        }
        if self.monolithic {
            for k in 0..n {
                set(Velocity, MoleFraction(k));
                for i in 0..n {
                    set(Flux(i), MoleFraction(k));
                    set(MoleFraction(i), MoleFraction(k));
                }
                set(MoleFraction(k), Potential(k));
                set(MoleFraction(k), Pressure);
                set(Psi, MoleFraction(k));
                set(Flux(k), Psi);
            }
            set(Velocity, Psi);
            set(Pressure, Psi);
            set(Psi, Psi);
            set(Psi, Pressure);
        }
        c
    }

    /// Sparsity pattern from the block coupling, with a full diagonal.
    pub fn pattern(&self) -> CsrMatrix {
        let nt = self.total();
        let coupling = self.coupling();
        let nb = self.num_blocks();
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); nt];
        for cell in 0..self.mesh().num_cells() {
            let (dofs, starts) = self.cell_dofs(cell);
            for rb in 0..nb {
                for cb in 0..nb {
                    if !coupling[rb][cb] {
                        continue;
                    }
                    for &r in &dofs[starts[rb]..starts[rb + 1]] {
                        rows[r].extend(dofs[starts[cb]..starts[cb + 1]].iter().map(|&c| c as u32));
                    }
                }
            }
            if cell % 64 == 63 {
                for &r in &dofs {
                    let row = &mut rows[r];
                    row.sort_unstable();
                    row.dedup();
                }
            }
        }
        for (r, row) in rows.iter_mut().enumerate() {
            row.push(r as u32);
            row.sort_unstable();
            row.dedup();
        }
        CsrMatrix::from_pattern(nt, nt, rows)
    }
}

/// Cell-local dense system scattered through a block coupling mask.
#[derive(Debug, Clone)]
pub struct LocalSystem {
    pub dofs: Vec<usize>,
    pub starts: Vec<usize>,
    pub mat: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl LocalSystem {
    pub fn new(dofs: Vec<usize>, starts: Vec<usize>, with_matrix: bool) -> Self {
        let n = dofs.len();
        LocalSystem { mat: if with_matrix { vec![0.0; n * n] } else { Vec::new() }, rhs: vec![0.0; n], dofs, starts }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let n = self.dofs.len();
        self.mat[i * n + j] += v;
    }

    pub fn scatter(&self, matrix: Option<&mut CsrMatrix>, rhs: &mut [f64], coupling: &[Vec<bool>]) {
        for (i, &r) in self.dofs.iter().enumerate() {
            rhs[r] += self.rhs[i];
        }
        let Some(m) = matrix else { return };
        let n = self.dofs.len();
        let nb = self.starts.len() - 1;
        for rb in 0..nb {
            for cb in 0..nb {
                if !coupling[rb][cb] {
                    continue;
                }
                for i in self.starts[rb]..self.starts[rb + 1] {
                    for j in self.starts[cb]..self.starts[cb + 1] {
                        let v = self.mat[i * n + j];
                        if v != 0.0 {
                            m.add_at(self.dofs[i], self.dofs[j], v);
                        }
                    }
                }
            }
        }
    }
}

/// Dirichlet boundary data. Velocity is prescribed on the whole boundary and
/// each flux through its normal component. `scale` multiplies all values.
#[derive(Clone)]
pub struct BoundaryData {
    pub velocity: TaggedVectorFn,
    pub fluxes: Vec<TaggedVectorFn>,
    pub scale: f64,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryData").field("species", &self.fluxes.len()).field("scale", &self.scale).finish()
    }
}

impl BoundaryData {
    pub fn homogeneous(n: usize) -> Self {
        let zero: TaggedVectorFn = Arc::new(|_, _| [0.0, 0.0]);
        BoundaryData { velocity: zero.clone(), fluxes: vec![zero; n], scale: 1.0 }
    }

    pub fn scaled(&self, s: f64) -> Self {
        BoundaryData { scale: s, ..self.clone() }
    }
}

/// Data of one SOSM problem.
#[derive(Clone)]
pub struct ProblemData {
    pub spec: MixtureSpec,
    pub law: SharedLaw,
    pub body_force: Option<VectorFn>,
    pub reactions: Vec<Option<ScalarFn>>,
    pub boundary: BoundaryData,
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemData").field("spec", &self.spec).field("law", &self.law).finish()
    }
}

impl ProblemData {
    pub fn force(&self, x: [f64; 2]) -> [f64; 2] {
        self.body_force.as_ref().map_or([0.0, 0.0], |f| f(x))
    }

    pub fn reaction(&self, i: usize, x: [f64; 2]) -> f64 {
        self.reactions.get(i).and_then(|r| r.as_ref()).map_or(0.0, |r| r(x))
    }
}

/// Prescribed values of the Dirichlet DOFs.
#[derive(Debug, Clone)]
pub struct Liftings {
    /// `(global dof, value)`, sorted by DOF.
    pub values: Vec<(usize, f64)>,
    /// Flux defect removed by the compatibility correction, per species.
    pub compatibility_defects: Vec<f64>,
}

impl Liftings {
    pub fn is_dirichlet(&self, total: usize) -> Vec<bool> {
        let mut d = vec![false; total];
        for &(i, _) in &self.values {
            d[i] = true;
        }
        d
    }

    /// Writes the lifting values into a global vector.
    pub fn apply_to(&self, u: &mut [f64]) {
        for &(i, v) in &self.values {
            u[i] = v;
        }
    }
}

/// Boundary facet geometry: owner cell, local edge, outward sign of the global
/// normal, and endpoints in ascending vertex order.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryFacet {
    pub facet: usize,
    pub tag: i32,
    pub cell: usize,
    pub local: usize,
    pub sign: f64,
    pub a: [f64; 2],
    pub b: [f64; 2],
}

pub fn boundary_facets(mesh: &Mesh) -> Vec<BoundaryFacet> {
    mesh.boundary_facets()
        .map(|(f, tag)| {
            let cell = mesh.facets()[f].cells.0;
            let local = mesh.cell_facets(cell).iter().position(|&x| x == f).expect("facet in owner");
            let [va, vb] = mesh.facets()[f].vertices;
            BoundaryFacet {
                facet: f,
                tag,
                cell,
                local,
                sign: mesh.facet_sign(cell, local),
                a: mesh.vertices()[va],
                b: mesh.vertices()[vb],
            }
        })
        .collect()
}

impl BoundaryFacet {
    pub fn length(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }

    pub fn outward_normal(&self) -> [f64; 2] {
        let l = self.length();
        let t = [(self.b[0] - self.a[0]) / l, (self.b[1] - self.a[1]) / l];
        [self.sign * t[1], -self.sign * t[0]]
    }

    /// Quadrature points on the facet as reference points of the owner cell,
    /// physical points and weights including the facet length.
    pub fn quadrature(&self, mesh: &Mesh, rule: &LineRule) -> (Vec<[f64; 2]>, Vec<[f64; 2]>, Vec<f64>) {
        let g = CellGeometry::new(mesh, self.cell);
        let l = self.length();
        let mut xi = Vec::with_capacity(rule.len());
        let mut x = Vec::with_capacity(rule.len());
        let mut w = Vec::with_capacity(rule.len());
        for (s, ws) in rule.points.iter().zip(&rule.weights) {
            let p = [self.a[0] + s * (self.b[0] - self.a[0]), self.a[1] + s * (self.b[1] - self.a[1])];
            x.push(p);
            xi.push(g.inverse_map(p));
            w.push(ws * l);
        }
        (xi, x, w)
    }
}

/// Domain integral of a scalar sampler with a high-order rule.
pub fn integrate(mesh: &Mesh, degree: usize, f: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> f64 {
    let rule = TriangleRule::new(degree);
    let mut total = 0.0;
    for c in 0..mesh.num_cells() {
        let g = CellGeometry::new(mesh, c);
        total += rule.points.iter().zip(&rule.weights).map(|(p, w)| w * g.det * f(g.map(*p))).sum::<f64>();
    }
    total
}

/// Interpolates the boundary data into Dirichlet DOF values and corrects the
/// zeroth flux moments so that `M_i^{-1} ∮ J_i·n = ∫ r_i` holds exactly.
pub fn build_liftings(layout: &UnknownLayout, data: &ProblemData) -> Result<Liftings> {
    let mesh = layout.mesh();
    let bc = &data.boundary;
    if bc.fluxes.len() != layout.n {
        return Err(SosmError::InvalidInput("one flux sampler per species required".into()));
    }
    let facets = boundary_facets(mesh);
    let mut values = std::collections::BTreeMap::new();

    let vs = &layout.velocity;
    let nv = mesh.num_vertices();
    let voff = layout.offset(Block::Velocity);
    for bf in &facets {
        let [va, vb] = mesh.facets()[bf.facet].vertices;
        let mid = [0.5 * (bf.a[0] + bf.b[0]), 0.5 * (bf.a[1] + bf.b[1])];
        for (dof, x) in [(va, bf.a), (vb, bf.b), (nv + bf.facet, mid)] {
            let v = (bc.velocity)(x, bf.tag);
            for c in 0..2 {
                values.insert(voff + c * vs.nscalar() + dof, bc.scale * v[c]);
            }
        }
    }

    let line = LineRule::new(10);
    let (_, per_e, _) = layout.flux.family().dof_layout();
    let perimeter: f64 = facets.iter().map(|f| f.length()).sum();
    let mut defects = Vec::with_capacity(layout.n);
    for i in 0..layout.n {
        let off = layout.offset(Block::Flux(i));
        let mut moments = vec![vec![0.0; per_e]; facets.len()];
        for (k, bf) in facets.iter().enumerate() {
            // global normal scaled by length: clockwise rotation of b - a
            let nu = [bf.b[1] - bf.a[1], -(bf.b[0] - bf.a[0])];
            for (s, w) in line.points.iter().zip(&line.weights) {
                let x = [bf.a[0] + s * (bf.b[0] - bf.a[0]), bf.a[1] + s * (bf.b[1] - bf.a[1])];
                let j = (bc.fluxes[i])(x, bf.tag);
                let jn = bc.scale * (j[0] * nu[0] + j[1] * nu[1]);
                for (m, mom) in moments[k].iter_mut().enumerate() {
                    *mom += w * jn * legendre(m, 2.0 * s - 1.0);
                }
            }
        }
        let outflow: f64 = facets.iter().zip(&moments).map(|(f, m)| f.sign * m[0]).sum();
        let target = data.spec.molar_masses[i]
            * match data.reactions.get(i).and_then(|r| r.as_ref()) {
                Some(r) => integrate(mesh, 12, &|x| r(x)),
                None => 0.0,
            };
        let defect = outflow - target;
        let scale: f64 = facets.iter().zip(&moments).map(|(f, m)| m[0].abs() * f.length()).sum::<f64>() / perimeter
            + target.abs();
        if defect.abs() > 1e-6 * scale.max(1e-12) && defect.abs() > 1e-13 {
            return Err(SosmError::Incompatible { species: i, defect });
        }
        for (k, bf) in facets.iter().enumerate() {
            moments[k][0] -= bf.sign * defect * bf.length() / perimeter;
            for (m, v) in moments[k].iter().enumerate() {
                values.insert(off + bf.facet * per_e + m, *v);
            }
        }
        defects.push(defect);
    }
    Ok(Liftings { values: values.into_iter().collect(), compatibility_defects: defects })
}

/// Assembled linear system with Dirichlet and pinned DOFs eliminated.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dirichlet: Vec<(usize, f64)>,
    pub pinned: Vec<usize>,
    pub symmetric: bool,
}

/// Symmetric elimination of prescribed DOFs: their rows and columns become
/// identity and the right-hand side absorbs `A * lifting`.
pub fn apply_boundary_lifting(mut matrix: CsrMatrix, mut rhs: Vec<f64>, fixed: &[(usize, f64)]) -> (CsrMatrix, Vec<f64>) {
    let n = matrix.nrows();
    let mut value = vec![None; n];
    for &(i, v) in fixed {
        value[i] = Some(v);
    }
    for i in 0..n {
        let fixed_row = value[i].is_some();
        let mut shift = 0.0;
        for (j, a) in matrix.row_mut(i) {
            if fixed_row {
                *a = if i == j { 1.0 } else { 0.0 };
            } else if let Some(g) = value[j] {
                shift += *a * g;
                *a = 0.0;
            }
        }
        match value[i] {
            Some(g) => rhs[i] = g,
            None => rhs[i] -= shift,
        }
    }
    (matrix, rhs)
}

/// Runs a cell kernel over all cells in parallel batches and scatters the
/// local systems in cell order, so the result does not depend on threading.
pub(crate) fn assemble_cells<F>(
    layout: &UnknownLayout,
    with_matrix: bool,
    mut matrix: Option<&mut CsrMatrix>,
    rhs: &mut [f64],
    coupling: &[Vec<bool>],
    kernel: F,
) -> Result<()>
where
    F: Fn(usize, &mut LocalSystem) -> Result<()> + Sync,
{
    use rayon::prelude::*;
    const BATCH: usize = 1024;
    let nc = layout.mesh().num_cells();
    for start in (0..nc).step_by(BATCH) {
        let locals: Vec<LocalSystem> = (start..(start + BATCH).min(nc))
            .into_par_iter()
            .map(|cell| {
                let (dofs, starts) = layout.cell_dofs(cell);
                let mut ls = LocalSystem::new(dofs, starts, with_matrix);
                kernel(cell, &mut ls)?;
                Ok(ls)
            })
            .collect::<Result<_>>()?;
        for ls in &locals {
            ls.scatter(matrix.as_deref_mut(), rhs, coupling);
        }
    }
    Ok(())
}

/// `∫ phi_j` for every scalar basis function of a space.
pub fn basis_integrals(space: &FunctionSpace) -> Vec<f64> {
    let rule = TriangleRule::new(space.default_quadrature_degree());
    let rt = space.quadrature_table(&rule);
    let mut out = vec![0.0; space.ndof()];
    for cell in 0..space.mesh().num_cells() {
        let t = space.tabulate_with(cell, &rt);
        for i in 0..t.nloc {
            let v: f64 = (0..t.nq).map(|q| t.jxw[q] * t.value(q, i)).sum();
            for c in 0..space.ncomp() {
                out[space.dof(cell, c, i)] += v;
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mesh::build_unit_square;
    use crate::thermo::IdealGas;
    use nalgebra::DMatrix;

    /// Two ideal-gas species with quadratic frozen concentrations.
    pub(crate) fn toy_problem() -> (ProblemData, ClosureFrozen) {
        let spec = MixtureSpec::new(vec![1.0, 2.0], MixtureSpec::product_diffusivities(&[0.5, 2.0]), 1.0, 0.1, 0.2, 1.0)
            .unwrap();
        let flux: TaggedVectorFn = Arc::new(|x, _| [1.0 - x[1] * x[1], 1.0 - x[0] * x[0]]);
        let data = ProblemData {
            spec: spec.clone(),
            law: Arc::new(IdealGas { n: 2, rt: 1.0 }),
            body_force: Some(Arc::new(|x: [f64; 2]| [x[1], -x[0]])),
            reactions: vec![None, None],
            boundary: BoundaryData {
                velocity: Arc::new(|x, _| [x[1] * (1.0 - x[1]), 0.0]),
                fluxes: vec![flux.clone(), flux],
                scale: 1.0,
            },
        };
        let frozen = ClosureFrozen {
            molar_masses: spec.molar_masses.clone(),
            concentrations: Arc::new(|x| vec![1.0 + x[0] * x[0], 2.0 + x[0] * x[1]]),
            gradients: Arc::new(|x| vec![[2.0 * x[0], 0.0], [x[1], x[0]]]),
        };
        (data, frozen)
    }

    pub(crate) fn layout(m: usize, k: usize, monolithic: bool) -> UnknownLayout {
        let mesh = Arc::new(build_unit_square(m).unwrap());
        UnknownLayout::new(mesh, Discretization::new(2, k, FluxFamily::RaviartThomas).unwrap(), 2, monolithic).unwrap()
    }

    #[test]
    fn offsets_partition_the_unknowns() {
        let l = layout(2, 2, true);
        let mut end = 0;
        for b in l.blocks() {
            let r = l.range(b);
            assert_eq!(r.start, end);
            assert_eq!(r.len(), l.space(b).ndof());
            end = r.end;
        }
        assert_eq!(end, l.total());
        let p = layout(2, 2, false);
        assert_eq!(p.range(Block::Potential(1)).end, p.total());
        assert_eq!(p.total(), l.range(Block::Potential(1)).end);
    }

    #[test]
    fn liftings_are_compatible() {
        let l = layout(3, 2, false);
        let spec = MixtureSpec::new(vec![1.0, 1.0], DMatrix::from_element(2, 2, 1.0), 1.0, 0.1, 0.1, 1.0).unwrap();
        let flux: TaggedVectorFn = Arc::new(|x, _| [x[0] + 0.3, x[1] * x[1]]);
        let data = ProblemData {
            spec,
            law: Arc::new(IdealGas { n: 2, rt: 1.0 }),
            body_force: None,
            reactions: vec![Some(Arc::new(|x: [f64; 2]| 1.0 + 2.0 * x[1])), Some(Arc::new(|x: [f64; 2]| 1.0 + 2.0 * x[1]))],
            boundary: BoundaryData { velocity: Arc::new(|_, _| [0.0, 0.0]), fluxes: vec![flux.clone(), flux], scale: 1.0 },
        };
        let lift = build_liftings(&l, &data).unwrap();
        assert!(lift.compatibility_defects.iter().all(|d| d.abs() < 1e-12));
        let mut u = vec![0.0; l.total()];
        lift.apply_to(&mut u);
        let j = l.field(&u, Block::Flux(0));
        // divergence of the lifting integrates to the boundary flux
        let div_int: f64 = {
            let rule = TriangleRule::new(6);
            let rt = l.flux.quadrature_table(&rule);
            (0..l.mesh().num_cells())
                .map(|c| {
                    let t = l.flux.tabulate_with(c, &rt);
                    j.divs_at(c, &t).iter().zip(&t.jxw).map(|(d, w)| d * w).sum::<f64>()
                })
                .sum()
        };
        assert!((div_int - 2.0).abs() < 1e-12, "{div_int}");
    }

    #[test]
    fn lifting_elimination_is_symmetric() {
        let mut b = crate::linalg::TripletBuilder::new(3, 3);
        for (i, j, v) in [(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (1, 2, 1.0), (2, 1, 1.0), (2, 2, 4.0)] {
            b.push(i, j, v);
        }
        let (m, r) = apply_boundary_lifting(b.build(), vec![1.0, 1.0, 1.0], &[(2, 5.0)]);
        assert_eq!(m.asymmetry(), 0.0);
        assert_eq!(r, vec![1.0, -4.0, 5.0]);
    }
}
