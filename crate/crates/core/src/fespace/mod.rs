//! Function spaces, DOF maps, tabulation, fields, interpolation and norms.

pub mod reference;

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Result, SosmError};
use crate::linalg::{LuFactor, TripletBuilder};
use crate::mesh::{Mesh, LOCAL_EDGES};
use crate::quadrature::{legendre, LineRule, TriangleRule};

pub use reference::{edge_point, ElementFamily, ReferenceElement, REF_EDGE_NORMALS};

/// Affine map from the reference triangle onto a mesh cell.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub origin: [f64; 2],
    /// `jac[r][c] = d x_r / d xi_c`
    pub jac: [[f64; 2]; 2],
    pub jinv: [[f64; 2]; 2],
    pub det: f64,
}

impl CellGeometry {
    pub fn new(mesh: &Mesh, cell: usize) -> Self {
        let [a, b, c] = mesh.cell_coords(cell);
        let jac = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let jinv = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
        CellGeometry { origin: a, jac, jinv, det }
    }

    pub fn map(&self, xi: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.jac[0][0] * xi[0] + self.jac[0][1] * xi[1],
            self.origin[1] + self.jac[1][0] * xi[0] + self.jac[1][1] * xi[1],
        ]
    }

    pub fn inverse_map(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        [
            self.jinv[0][0] * d[0] + self.jinv[0][1] * d[1],
            self.jinv[1][0] * d[0] + self.jinv[1][1] * d[1],
        ]
    }

    /// Physical gradient from a reference gradient.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.jinv[0][0] * g[0] + self.jinv[1][0] * g[1],
            self.jinv[0][1] * g[0] + self.jinv[1][1] * g[1],
        ]
    }

    /// Contravariant Piola map of a reference vector.
    pub fn piola(&self, v: [f64; 2]) -> [f64; 2] {
        [
            (self.jac[0][0] * v[0] + self.jac[0][1] * v[1]) / self.det,
            (self.jac[1][0] * v[0] + self.jac[1][1] * v[1]) / self.det,
        ]
    }

    /// Inverse Piola map `det J^{-1} v`.
    pub fn piola_pullback(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.det * (self.jinv[0][0] * v[0] + self.jinv[0][1] * v[1]),
            self.det * (self.jinv[1][0] * v[0] + self.jinv[1][1] * v[1]),
        ]
    }

    /// Outward normal of local edge `e` scaled by its length.
    pub fn edge_normal(&self, e: usize) -> [f64; 2] {
        let n = REF_EDGE_NORMALS[e];
        // det J^{-T} n
        [
            self.det * (self.jinv[0][0] * n[0] + self.jinv[1][0] * n[1]),
            self.det * (self.jinv[0][1] * n[0] + self.jinv[1][1] * n[1]),
        ]
    }
}

/// Reference basis values at a fixed set of points.
#[derive(Debug, Clone)]
pub struct RefTable {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    values: Vec<f64>,
    grads: Vec<[f64; 2]>,
    vvalues: Vec<[f64; 2]>,
    divs: Vec<f64>,
}

impl RefTable {
    pub fn new(element: &ReferenceElement, points: Vec<[f64; 2]>, weights: Vec<f64>) -> Self {
        let nloc = element.ndofs();
        let nq = points.len();
        let mut t = RefTable { points, weights, values: vec![], grads: vec![], vvalues: vec![], divs: vec![] };
        if element.family().is_hdiv() {
            t.vvalues = vec![[0.0; 2]; nq * nloc];
            t.divs = vec![0.0; nq * nloc];
            for q in 0..nq {
                let r = q * nloc..(q + 1) * nloc;
                element.eval_hdiv(t.points[q], &mut t.vvalues[r.clone()], &mut t.divs[r]);
            }
        } else {
            t.values = vec![0.0; nq * nloc];
            t.grads = vec![[0.0; 2]; nq * nloc];
            for q in 0..nq {
                let r = q * nloc..(q + 1) * nloc;
                element.eval_scalar(t.points[q], &mut t.values[r.clone()], &mut t.grads[r]);
            }
        }
        t
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Physical basis data on one cell. Index `q * nloc + i`.
#[derive(Debug, Clone)]
pub struct CellTable {
    pub nq: usize,
    pub nloc: usize,
    pub geometry: CellGeometry,
    /// Physical quadrature points.
    pub points: Vec<[f64; 2]>,
    /// Reference weight times `|det J|`.
    pub jxw: Vec<f64>,
    /// Scalar values (Lagrange).
    pub values: Vec<f64>,
    /// Physical gradients (Lagrange).
    pub grads: Vec<[f64; 2]>,
    /// Piola-mapped vector values (H(div)).
    pub vvalues: Vec<[f64; 2]>,
    /// Divergences (H(div)).
    pub divs: Vec<f64>,
}

impl CellTable {
    #[inline]
    pub fn value(&self, q: usize, i: usize) -> f64 {
        self.values[q * self.nloc + i]
    }

    #[inline]
    pub fn grad(&self, q: usize, i: usize) -> [f64; 2] {
        self.grads[q * self.nloc + i]
    }

    #[inline]
    pub fn vvalue(&self, q: usize, i: usize) -> [f64; 2] {
        self.vvalues[q * self.nloc + i]
    }

    #[inline]
    pub fn div(&self, q: usize, i: usize) -> f64 {
        self.divs[q * self.nloc + i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1Semi,
    HdivSemi,
}

/// A finite element space over a mesh with its global DOF numbering.
#[derive(Debug)]
pub struct FunctionSpace {
    mesh: Arc<Mesh>,
    element: ReferenceElement,
    ncomp: usize,
    nscalar: usize,
    cell_dofs: Vec<usize>,
    signs: Vec<f64>,
    zero_mean: bool,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>, family: ElementFamily) -> Result<Self> {
        Self::with_components(mesh, family, 1)
    }

    /// Vector-valued Lagrange space with `ncomp` copies of the scalar space.
    /// Global DOFs are blocked by component.
    pub fn with_components(mesh: Arc<Mesh>, family: ElementFamily, ncomp: usize) -> Result<Self> {
        let element = ReferenceElement::new(family)?;
        if family.is_hdiv() && ncomp != 1 {
            return Err(SosmError::Unsupported("vector copies of an H(div) space".into()));
        }
        if ncomp == 0 {
            return Err(SosmError::InvalidInput("space needs at least one component".into()));
        }
        let nloc = element.ndofs();
        let (nc, nf, nv) = (mesh.num_cells(), mesh.num_facets(), mesh.num_vertices());
        let (per_v, per_e, per_i) = family.dof_layout();
        let mut cell_dofs = Vec::with_capacity(nc * nloc);
        let mut signs = vec![1.0; nc * nloc];
        let nscalar;
        if family.is_continuous() {
            nscalar = nv * per_v + nf * per_e;
            for c in 0..nc {
                cell_dofs.extend_from_slice(&mesh.cells()[c]);
                if per_e > 0 {
                    cell_dofs.extend(mesh.cell_facets(c).iter().map(|f| nv + f));
                }
            }
        } else if family.is_hdiv() {
            nscalar = nf * per_e + nc * per_i;
            for c in 0..nc {
                let cell = mesh.cells()[c];
                let facets = mesh.cell_facets(c);
                for e in 0..3 {
                    let s = mesh.facet_sign(c, e);
                    let [a, b] = LOCAL_EDGES[e];
                    let forward = cell[a] < cell[b];
                    for j in 0..per_e {
                        let parity = if forward || j % 2 == 0 { 1.0 } else { -1.0 };
                        signs[c * nloc + e * per_e + j] = s * parity;
                        cell_dofs.push(facets[e] * per_e + j);
                    }
                }
                for i in 0..per_i {
                    cell_dofs.push(nf * per_e + c * per_i + i);
                }
            }
        } else {
            nscalar = nc * per_i;
            cell_dofs.extend(0..nscalar);
        }
        Ok(FunctionSpace { mesh, element, ncomp, nscalar, cell_dofs, signs, zero_mean: false })
    }

    pub fn with_zero_mean(mut self, zero_mean: bool) -> Self {
        self.zero_mean = zero_mean;
        self
    }

    pub fn zero_mean(&self) -> bool {
        self.zero_mean
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn family(&self) -> ElementFamily {
        self.element.family()
    }

    pub fn element(&self) -> &ReferenceElement {
        &self.element
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    /// Number of values per point: 2 for H(div), otherwise the component count.
    pub fn value_dim(&self) -> usize {
        if self.family().is_hdiv() {
            2
        } else {
            self.ncomp
        }
    }

    /// DOFs of one scalar component.
    pub fn nscalar(&self) -> usize {
        self.nscalar
    }

    pub fn ndof(&self) -> usize {
        self.nscalar * self.ncomp
    }

    /// Local DOFs of one scalar component on a cell.
    pub fn nloc(&self) -> usize {
        self.element.ndofs()
    }

    /// Global scalar DOFs of a cell, in local order.
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let n = self.nloc();
        &self.cell_dofs[cell * n..(cell + 1) * n]
    }

    /// Global DOF of local scalar DOF `i`, component `comp`.
    #[inline]
    pub fn dof(&self, cell: usize, comp: usize, i: usize) -> usize {
        comp * self.nscalar + self.cell_dofs[cell * self.nloc() + i]
    }

    /// Orientation signs of the local basis (all one for Lagrange).
    pub fn cell_signs(&self, cell: usize) -> &[f64] {
        let n = self.nloc();
        &self.signs[cell * n..(cell + 1) * n]
    }

    /// Global scalar DOFs attached to a facet: endpoint and midpoint nodes for
    /// continuous Lagrange, normal moments for H(div).
    pub fn facet_dofs(&self, facet: usize) -> Vec<usize> {
        let f = &self.mesh.facets()[facet];
        let (_, per_e, _) = self.family().dof_layout();
        match self.family() {
            ElementFamily::ContinuousLagrange(k) => {
                let mut d = f.vertices.to_vec();
                if k == 2 {
                    d.push(self.mesh.num_vertices() + facet);
                }
                d
            }
            fam if fam.is_hdiv() => (0..per_e).map(|j| facet * per_e + j).collect(),
            _ => Vec::new(),
        }
    }

    /// Scalar DOFs on boundary facets, sorted and deduplicated.
    pub fn boundary_dofs(&self) -> Vec<usize> {
        let mut d: Vec<usize> =
            self.mesh.boundary_facets().flat_map(|(f, _)| self.facet_dofs(f)).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn reference_table(&self, points: Vec<[f64; 2]>, weights: Vec<f64>) -> RefTable {
        RefTable::new(&self.element, points, weights)
    }

    pub fn quadrature_table(&self, rule: &TriangleRule) -> RefTable {
        self.reference_table(rule.points.clone(), rule.weights.clone())
    }

    /// Physical basis table for `cell` from a reference table.
    pub fn tabulate_with(&self, cell: usize, rt: &RefTable) -> CellTable {
        let g = CellGeometry::new(&self.mesh, cell);
        let nloc = self.nloc();
        let nq = rt.len();
        let signs = self.cell_signs(cell);
        let mut t = CellTable {
            nq,
            nloc,
            geometry: g,
            points: rt.points.iter().map(|&p| g.map(p)).collect(),
            jxw: rt.weights.iter().map(|w| w * g.det.abs()).collect(),
            values: Vec::new(),
            grads: Vec::new(),
            vvalues: Vec::new(),
            divs: Vec::new(),
        };
        if self.family().is_hdiv() {
            t.vvalues = rt
                .vvalues
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let p = g.piola(v);
                    let s = signs[k % nloc];
                    [s * p[0], s * p[1]]
                })
                .collect();
            t.divs = rt.divs.iter().enumerate().map(|(k, &d)| signs[k % nloc] * d / g.det).collect();
        } else {
            t.values = rt.values.clone();
            t.grads = rt.grads.iter().map(|&d| g.push_gradient(d)).collect();
        }
        t
    }

    pub fn tabulate(&self, cell: usize, rule: &TriangleRule) -> Result<CellTable> {
        if cell >= self.mesh.num_cells() {
            return Err(SosmError::OutOfRange { index: cell, len: self.mesh.num_cells() });
        }
        Ok(self.tabulate_with(cell, &self.quadrature_table(rule)))
    }

    /// Default quadrature degree for forms over this space.
    pub fn default_quadrature_degree(&self) -> usize {
        2 * self.family().degree().max(1) + 2
    }
}

/// Coefficients over a [`FunctionSpace`].
#[derive(Debug, Clone)]
pub struct Field {
    space: Arc<FunctionSpace>,
    coeffs: Vec<f64>,
}

impl Field {
    pub fn zeros(space: Arc<FunctionSpace>) -> Self {
        let n = space.ndof();
        Field { space, coeffs: vec![0.0; n] }
    }

    pub fn from_coeffs(space: Arc<FunctionSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.ndof() {
            return Err(SosmError::InvalidInput(format!(
                "field has {} coefficients, space has {} DOFs",
                coeffs.len(),
                space.ndof()
            )));
        }
        Ok(Field { space, coeffs })
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Local coefficients on a cell, component-major.
    pub fn local(&self, cell: usize) -> Vec<f64> {
        let s = &self.space;
        let mut out = Vec::with_capacity(s.nloc() * s.ncomp());
        for c in 0..s.ncomp() {
            out.extend((0..s.nloc()).map(|i| self.coeffs[s.dof(cell, c, i)]));
        }
        out
    }

    /// Values at the points of a cell table, `value_dim` entries per point.
    pub fn values_at(&self, cell: usize, t: &CellTable) -> Vec<f64> {
        let s = &self.space;
        let u = self.local(cell);
        let nloc = s.nloc();
        let vd = s.value_dim();
        let mut out = vec![0.0; t.nq * vd];
        for q in 0..t.nq {
            if s.family().is_hdiv() {
                for i in 0..nloc {
                    let v = t.vvalue(q, i);
                    out[q * 2] += u[i] * v[0];
                    out[q * 2 + 1] += u[i] * v[1];
                }
            } else {
                for c in 0..vd {
                    out[q * vd + c] = (0..nloc).map(|i| u[c * nloc + i] * t.value(q, i)).sum();
                }
            }
        }
        out
    }

    /// Gradients at table points: `ncomp * 2` entries per point (Lagrange only).
    pub fn grads_at(&self, cell: usize, t: &CellTable) -> Vec<f64> {
        let s = &self.space;
        let u = self.local(cell);
        let nloc = s.nloc();
        let nc = s.ncomp();
        let mut out = vec![0.0; t.nq * nc * 2];
        for q in 0..t.nq {
            for c in 0..nc {
                for i in 0..nloc {
                    let g = t.grad(q, i);
                    out[(q * nc + c) * 2] += u[c * nloc + i] * g[0];
                    out[(q * nc + c) * 2 + 1] += u[c * nloc + i] * g[1];
                }
            }
        }
        out
    }

    /// Divergences at table points (H(div) only).
    pub fn divs_at(&self, cell: usize, t: &CellTable) -> Vec<f64> {
        let u = self.local(cell);
        (0..t.nq).map(|q| (0..t.nloc).map(|i| u[i] * t.div(q, i)).sum()).collect()
    }

    fn point_table(&self, cell: usize, xi: [f64; 2]) -> Result<CellTable> {
        let n = self.space.mesh().num_cells();
        if cell >= n {
            return Err(SosmError::OutOfRange { index: cell, len: n });
        }
        Ok(self.space.tabulate_with(cell, &self.space.reference_table(vec![xi], vec![1.0])))
    }

    /// Value at reference coordinates `xi` of `cell` (Piola-mapped for H(div)).
    pub fn evaluate(&self, cell: usize, xi: [f64; 2]) -> Result<Vec<f64>> {
        let t = self.point_table(cell, xi)?;
        Ok(self.values_at(cell, &t))
    }

    /// Physical gradient at `xi`, `ncomp * 2` entries (Lagrange only).
    pub fn evaluate_gradient(&self, cell: usize, xi: [f64; 2]) -> Result<Vec<f64>> {
        if self.space.family().is_hdiv() {
            return Err(SosmError::Unsupported("gradient of an H(div) field".into()));
        }
        let t = self.point_table(cell, xi)?;
        Ok(self.grads_at(cell, &t))
    }

    pub fn evaluate_divergence(&self, cell: usize, xi: [f64; 2]) -> Result<f64> {
        if !self.space.family().is_hdiv() {
            return Err(SosmError::Unsupported("divergence of a Lagrange field".into()));
        }
        let t = self.point_table(cell, xi)?;
        Ok(self.divs_at(cell, &t)[0])
    }

    /// Integral of each value component over the domain.
    pub fn integral(&self) -> Vec<f64> {
        let s = &self.space;
        let rule = TriangleRule::new(s.default_quadrature_degree());
        let rt = s.quadrature_table(&rule);
        let vd = s.value_dim();
        let per_cell: Vec<Vec<f64>> = (0..s.mesh().num_cells())
            .into_par_iter()
            .map(|c| {
                let t = s.tabulate_with(c, &rt);
                let v = self.values_at(c, &t);
                let mut acc = vec![0.0; vd];
                for q in 0..t.nq {
                    for k in 0..vd {
                        acc[k] += t.jxw[q] * v[q * vd + k];
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; vd];
        for a in per_cell {
            for k in 0..vd {
                total[k] += a[k];
            }
        }
        total
    }

    /// Subtracts the domain mean of each component (Lagrange fields).
    pub fn subtract_mean(&mut self) {
        if self.space.family().is_hdiv() {
            return;
        }
        let area = self.space.mesh().total_area();
        let ints = self.integral();
        let n = self.space.nscalar();
        for (c, int) in ints.iter().enumerate() {
            let m = int / area;
            for v in &mut self.coeffs[c * n..(c + 1) * n] {
                *v -= m;
            }
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Field) {
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }
}

/// Canonical interpolation: nodal values for Lagrange, normal and interior
/// moments for H(div). `f` returns `value_dim` entries.
pub fn interpolate<F>(space: &Arc<FunctionSpace>, f: F) -> Field
where
    F: Fn([f64; 2]) -> Vec<f64> + Sync,
{
    let mesh = space.mesh();
    let nloc = space.nloc();
    let per_cell: Vec<Vec<(usize, f64)>> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let g = CellGeometry::new(mesh, cell);
            let mut out = Vec::new();
            if space.family().is_hdiv() {
                let vals = local_hdiv_functionals(space.family(), &g, &|x| {
                    let v = f(x);
                    [v[0], v[1]]
                });
                let signs = space.cell_signs(cell);
                for i in 0..nloc {
                    out.push((space.dof(cell, 0, i), signs[i] * vals[i]));
                }
            } else {
                for (i, node) in space.element().nodes().into_iter().enumerate() {
                    let v = f(g.map(node));
                    for c in 0..space.ncomp() {
                        out.push((space.dof(cell, c, i), v[c]));
                    }
                }
            }
            out
        })
        .collect();
    let mut coeffs = vec![0.0; space.ndof()];
    for cell in per_cell {
        for (d, v) in cell {
            coeffs[d] = v;
        }
    }
    Field { space: space.clone(), coeffs }
}

pub fn interpolate_scalar<F: Fn([f64; 2]) -> f64 + Sync>(space: &Arc<FunctionSpace>, f: F) -> Field {
    interpolate(space, |x| vec![f(x)])
}

pub fn interpolate_vector<F: Fn([f64; 2]) -> [f64; 2] + Sync>(space: &Arc<FunctionSpace>, f: F) -> Field {
    interpolate(space, |x| f(x).to_vec())
}

/// Local H(div) DOF functionals of a physical vector field on one cell,
/// before orientation signs.
pub fn local_hdiv_functionals(
    family: ElementFamily,
    g: &CellGeometry,
    f: &dyn Fn([f64; 2]) -> [f64; 2],
) -> Vec<f64> {
    let (_, per_e, per_i) = family.dof_layout();
    let line = LineRule::new(8);
    let mut out = Vec::with_capacity(3 * per_e + per_i);
    for e in 0..3 {
        let n = g.edge_normal(e);
        for j in 0..per_e {
            let mut acc = 0.0;
            for (s, w) in line.points.iter().zip(&line.weights) {
                let v = f(g.map(edge_point(e, *s)));
                acc += w * (v[0] * n[0] + v[1] * n[1]) * legendre(j, 2.0 * s - 1.0);
            }
            out.push(acc);
        }
    }
    if per_i > 0 {
        let rule = TriangleRule::new(8);
        let mut acc = vec![0.0; per_i];
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            let v = g.piola_pullback(f(g.map(*xi)));
            for (a, q) in acc.iter_mut().zip(reference::interior_weights(family, *xi)) {
                *a += w * (v[0] * q[0] + v[1] * q[1]);
            }
        }
        out.extend(acc);
    }
    out
}

/// Mass matrix of a space (all components).
pub fn mass_matrix(space: &FunctionSpace, degree: usize) -> crate::linalg::CsrMatrix {
    let rule = TriangleRule::new(degree);
    let rt = space.quadrature_table(&rule);
    let nloc = space.nloc();
    let nc = space.ncomp();
    let hdiv = space.family().is_hdiv();
    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..space.mesh().num_cells())
        .into_par_iter()
        .map(|cell| {
            let t = space.tabulate_with(cell, &rt);
            let mut out = Vec::with_capacity(nloc * nloc * nc);
            for i in 0..nloc {
                for j in 0..nloc {
                    let mut m = 0.0;
                    for q in 0..t.nq {
                        m += t.jxw[q]
                            * if hdiv {
                                let (a, b) = (t.vvalue(q, i), t.vvalue(q, j));
                                a[0] * b[0] + a[1] * b[1]
                            } else {
                                t.value(q, i) * t.value(q, j)
                            };
                    }
                    for c in 0..nc {
                        out.push((space.dof(cell, c, i), space.dof(cell, c, j), m));
                    }
                }
            }
            out
        })
        .collect();
    let mut b = TripletBuilder::with_capacity(space.ndof(), space.ndof(), blocks.len() * nloc * nloc * nc);
    for blk in blocks {
        for (i, j, v) in blk {
            b.push(i, j, v);
        }
    }
    b.build()
}

/// L² projection onto `space`, with quadrature exact to `degree`.
pub fn project<F>(space: &Arc<FunctionSpace>, f: F, degree: usize) -> Result<Field>
where
    F: Fn([f64; 2]) -> Vec<f64> + Sync,
{
    let rule = TriangleRule::new(degree);
    let rt = space.quadrature_table(&rule);
    let nloc = space.nloc();
    let nc = space.ncomp();
    let vd = space.value_dim();
    let hdiv = space.family().is_hdiv();
    let loads: Vec<Vec<(usize, f64)>> = (0..space.mesh().num_cells())
        .into_par_iter()
        .map(|cell| {
            let t = space.tabulate_with(cell, &rt);
            let mut out = vec![0.0; nloc * nc];
            for q in 0..t.nq {
                let v = f(t.points[q]);
                debug_assert_eq!(v.len(), vd);
                for i in 0..nloc {
                    if hdiv {
                        let p = t.vvalue(q, i);
                        out[i] += t.jxw[q] * (v[0] * p[0] + v[1] * p[1]);
                    } else {
                        for c in 0..nc {
                            out[c * nloc + i] += t.jxw[q] * v[c] * t.value(q, i);
                        }
                    }
                }
            }
            (0..nc)
                .flat_map(|c| (0..nloc).map(move |i| (c, i)))
                .map(|(c, i)| (space.dof(cell, c, i), out[c * nloc + i]))
                .collect()
        })
        .collect();
    let mut rhs = vec![0.0; space.ndof()];
    for cell in loads {
        for (d, v) in cell {
            rhs[d] += v;
        }
    }
    let lu = LuFactor::new(mass_matrix(space, degree))?;
    let coeffs = lu.solve_with_tolerance(&rhs, 1e-9)?;
    Field::from_coeffs(space.clone(), coeffs)
}

/// `sqrt(∫ |field - exact|²)` for the chosen kind. For `H1Semi` the exact
/// callable returns the gradient (`ncomp * 2` entries, row per component);
/// for `HdivSemi` it returns the divergence.
pub fn error_norm<F>(field: &Field, kind: NormKind, exact: F) -> Result<f64>
where
    F: Fn([f64; 2]) -> Vec<f64> + Sync,
{
    let deg = field.space().default_quadrature_degree().max(6);
    error_norm_with_degree(field, kind, exact, deg)
}

pub fn error_norm_with_degree<F>(field: &Field, kind: NormKind, exact: F, degree: usize) -> Result<f64>
where
    F: Fn([f64; 2]) -> Vec<f64> + Sync,
{
    let s = field.space();
    let hdiv = s.family().is_hdiv();
    match (kind, hdiv) {
        (NormKind::HdivSemi, false) => {
            return Err(SosmError::Unsupported("H(div) seminorm of a Lagrange field".into()))
        }
        (NormKind::H1Semi, true) => return Err(SosmError::Unsupported("H1 seminorm of an H(div) field".into())),
        _ => {}
    }
    let rule = TriangleRule::new(degree);
    let rt = s.quadrature_table(&rule);
    let per_cell: Vec<f64> = (0..s.mesh().num_cells())
        .into_par_iter()
        .map(|cell| {
            let t = s.tabulate_with(cell, &rt);
            let (vals, width) = match kind {
                NormKind::L2 => (field.values_at(cell, &t), s.value_dim()),
                NormKind::H1Semi => (field.grads_at(cell, &t), 2 * s.ncomp()),
                NormKind::HdivSemi => (field.divs_at(cell, &t), 1),
            };
            let mut acc = 0.0;
            for q in 0..t.nq {
                let e = exact(t.points[q]);
                for k in 0..width {
                    acc += t.jxw[q] * (vals[q * width + k] - e[k]).powi(2);
                }
            }
            acc
        })
        .collect();
    Ok(per_cell.iter().sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn mesh(m: usize) -> Arc<Mesh> {
        Arc::new(build_unit_square(m).unwrap())
    }

    fn space(m: &Arc<Mesh>, f: ElementFamily) -> Arc<FunctionSpace> {
        Arc::new(FunctionSpace::new(m.clone(), f).unwrap())
    }

    const HDIV: [ElementFamily; 4] = [
        ElementFamily::RaviartThomas(1),
        ElementFamily::RaviartThomas(2),
        ElementFamily::BrezziDouglasMarini(1),
        ElementFamily::BrezziDouglasMarini(2),
    ];

    #[test]
    fn dof_counts_on_unit_square() {
        let m = mesh(2);
        let (nv, nf, nc) = (9, 16, 8);
        assert_eq!(space(&m, ElementFamily::ContinuousLagrange(1)).ndof(), nv);
        assert_eq!(space(&m, ElementFamily::ContinuousLagrange(2)).ndof(), nv + nf);
        assert_eq!(space(&m, ElementFamily::DiscontinuousLagrange(1)).ndof(), 3 * nc);
        assert_eq!(space(&m, ElementFamily::RaviartThomas(1)).ndof(), nf);
        assert_eq!(space(&m, ElementFamily::RaviartThomas(2)).ndof(), 2 * nf + 2 * nc);
        assert_eq!(space(&m, ElementFamily::BrezziDouglasMarini(2)).ndof(), 3 * nf + 3 * nc);
        let v = FunctionSpace::with_components(m, ElementFamily::ContinuousLagrange(2), 2).unwrap();
        assert_eq!(v.ndof(), 2 * (nv + nf));
    }

    #[test]
    fn dof_map_is_surjective() {
        let m = mesh(3);
        for fam in HDIV.into_iter().chain([ElementFamily::ContinuousLagrange(2), ElementFamily::DiscontinuousLagrange(1)]) {
            let s = space(&m, fam);
            let mut hit = vec![false; s.ndof()];
            for c in 0..m.num_cells() {
                for &d in s.cell_dofs(c) {
                    hit[d] = true;
                }
            }
            assert!(hit.iter().all(|&h| h), "{fam:?}");
        }
    }

    #[test]
    fn normal_traces_are_single_valued() {
        let m = mesh(3);
        let line = LineRule::new(6);
        for fam in HDIV {
            let s = space(&m, fam);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let coeffs: Vec<f64> = (0..s.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let field = Field::from_coeffs(s.clone(), coeffs).unwrap();
            for (f, facet) in m.facets().iter().enumerate() {
                let Some(c1) = facet.cells.1 else { continue };
                let c0 = facet.cells.0;
                let n = m.facet_normal(f);
                let [a, b] = facet.vertices;
                let (pa, pb) = (m.vertices()[a], m.vertices()[b]);
                for s in &line.points {
                    let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                    let trace = |c: usize| {
                        let g = CellGeometry::new(&m, c);
                        let v = field.evaluate(c, g.inverse_map(x)).unwrap();
                        v[0] * n[0] + v[1] * n[1]
                    };
                    assert_relative_eq!(trace(c0), trace(c1), epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn rt1_divergence_constant_and_lagrange_partition_of_unity() {
        let m = mesh(2);
        let rule = TriangleRule::new(4);
        let rt = space(&m, ElementFamily::RaviartThomas(1));
        let p1 = space(&m, ElementFamily::ContinuousLagrange(1));
        for c in 0..m.num_cells() {
            let t = rt.tabulate(c, &rule).unwrap();
            for i in 0..3 {
                for q in 1..t.nq {
                    assert_relative_eq!(t.div(q, i), t.div(0, i), epsilon = 1e-12);
                }
            }
            let t = p1.tabulate(c, &rule).unwrap();
            for q in 0..t.nq {
                assert_relative_eq!((0..3).map(|i| t.value(q, i)).sum::<f64>(), 1.0, epsilon = 1e-15);
            }
        }
        assert!(rt.tabulate(99, &rule).is_err());
    }

    #[test]
    fn divergence_theorem_per_basis_function() {
        let m = mesh(2);
        let rule = TriangleRule::new(6);
        let line = LineRule::new(6);
        for fam in HDIV {
            let s = space(&m, fam);
            for c in 0..m.num_cells() {
                let t = s.tabulate(c, &rule).unwrap();
                let g = t.geometry;
                for i in 0..s.nloc() {
                    let vol: f64 = (0..t.nq).map(|q| t.jxw[q] * t.div(q, i)).sum();
                    let mut flux = 0.0;
                    for e in 0..3 {
                        let n = g.edge_normal(e);
                        let pts: Vec<[f64; 2]> = line.points.iter().map(|&x| edge_point(e, x)).collect();
                        let et = s.tabulate_with(c, &s.reference_table(pts, line.weights.clone()));
                        for q in 0..et.nq {
                            let v = et.vvalue(q, i);
                            flux += line.weights[q] * (v[0] * n[0] + v[1] * n[1]);
                        }
                    }
                    assert_relative_eq!(vol, flux, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn polynomials_are_reproduced() {
        let m = mesh(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases: Vec<(ElementFamily, Box<dyn Fn([f64; 2]) -> Vec<f64> + Sync>)> = vec![
            (ElementFamily::ContinuousLagrange(1), Box::new(|x: [f64; 2]| vec![1.0 + 2.0 * x[0] - x[1]])),
            (ElementFamily::ContinuousLagrange(2), Box::new(|x: [f64; 2]| vec![x[0] * x[1] - x[1] * x[1] + 0.5])),
            (ElementFamily::DiscontinuousLagrange(1), Box::new(|x: [f64; 2]| vec![3.0 * x[0] - x[1]])),
            (ElementFamily::RaviartThomas(1), Box::new(|x: [f64; 2]| vec![1.0 + 2.0 * x[0], -0.5 + 2.0 * x[1]])),
            (ElementFamily::RaviartThomas(2), Box::new(|x: [f64; 2]| vec![x[0] * x[1] + x[0] * x[0], x[1] * x[1] + x[0] * x[1] - x[1]])),
            (ElementFamily::BrezziDouglasMarini(1), Box::new(|x: [f64; 2]| vec![x[1] - 1.0, 2.0 * x[0]])),
            (ElementFamily::BrezziDouglasMarini(2), Box::new(|x: [f64; 2]| vec![x[1] * x[1], x[0] * x[0] - x[0] * x[1]])),
        ];
        for (fam, f) in cases {
            let s = space(&m, fam);
            let field = interpolate(&s, |x| f(x));
            for _ in 0..100 {
                let c = rng.gen_range(0..m.num_cells());
                let (a, b): (f64, f64) = (rng.gen(), rng.gen());
                let xi = if a + b < 1.0 { [a, b] } else { [1.0 - a, 1.0 - b] };
                let x = CellGeometry::new(&m, c).map(xi);
                let v = field.evaluate(c, xi).unwrap();
                for (p, q) in v.iter().zip(f(x)) {
                    assert_relative_eq!(*p, q, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_fields() {
        let m = mesh(2);
        let p1 = space(&m, ElementFamily::ContinuousLagrange(1));
        let c = interpolate_scalar(&p1, |_| 2.5);
        assert!(c.coeffs().iter().all(|&v| v == 2.5));
        assert_relative_eq!(c.evaluate(3, [0.2, 0.3]).unwrap()[0], 2.5, epsilon = 1e-15);

        let rt = space(&m, ElementFamily::RaviartThomas(1));
        let u = [0.7, -1.3];
        let f = interpolate_vector(&rt, |_| u);
        for (fct, _) in m.facets().iter().enumerate() {
            let n = m.facet_normal(fct);
            let flux = (u[0] * n[0] + u[1] * n[1]) * m.facet_length(fct);
            assert_relative_eq!(f.coeffs()[fct], flux, epsilon = 1e-14);
        }
    }

    #[test]
    fn hat_function_midpoint() {
        let m = mesh(2);
        let p1 = space(&m, ElementFamily::ContinuousLagrange(1));
        let mut f = Field::zeros(p1);
        let cell = m.cells()[0];
        f.coeffs_mut()[cell[0]] = 1.0;
        let v = f.evaluate(0, edge_point(2, 0.5)).unwrap()[0];
        assert_relative_eq!(v, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_matches_dense_expansion() {
        let m = mesh(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for fam in [ElementFamily::ContinuousLagrange(2), ElementFamily::RaviartThomas(2)] {
            let s = space(&m, fam);
            let coeffs: Vec<f64> = (0..s.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let field = Field::from_coeffs(s.clone(), coeffs.clone()).unwrap();
            for _ in 0..100 {
                let c = rng.gen_range(0..m.num_cells());
                let xi = [rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5)];
                let g = CellGeometry::new(&m, c);
                let mut expected = [0.0; 2];
                let el = s.element();
                let n = el.ndofs();
                if fam.is_hdiv() {
                    let mut v = vec![[0.0; 2]; n];
                    let mut d = vec![0.0; n];
                    el.eval_hdiv(xi, &mut v, &mut d);
                    for i in 0..n {
                        let p = g.piola(v[i]);
                        let w = s.cell_signs(c)[i] * coeffs[s.cell_dofs(c)[i]];
                        expected[0] += w * p[0];
                        expected[1] += w * p[1];
                    }
                } else {
                    let mut v = vec![0.0; n];
                    let mut gr = vec![[0.0; 2]; n];
                    el.eval_scalar(xi, &mut v, &mut gr);
                    expected[0] = (0..n).map(|i| v[i] * coeffs[s.cell_dofs(c)[i]]).sum();
                }
                let got = field.evaluate(c, xi).unwrap();
                for k in 0..got.len() {
                    assert_relative_eq!(got[k], expected[k], epsilon = 1e-13);
                }
            }
        }
        let s = space(&m, ElementFamily::ContinuousLagrange(1));
        assert!(Field::zeros(s).evaluate(8, [0.1, 0.1]).is_err());
    }

    #[test]
    fn piola_divergence_matches_finite_differences() {
        let m = mesh(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for fam in HDIV {
            let s = space(&m, fam);
            let coeffs: Vec<f64> = (0..s.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let field = Field::from_coeffs(s, coeffs).unwrap();
            let c = 5;
            let g = CellGeometry::new(&m, c);
            let x = g.map([0.3, 0.25]);
            let div = field.evaluate_divergence(c, g.inverse_map(x)).unwrap();
            let mut errs = Vec::new();
            for h in [1e-2, 5e-3] {
                let at = |dx: f64, dy: f64| field.evaluate(c, g.inverse_map([x[0] + dx, x[1] + dy])).unwrap();
                let fd = (at(h, 0.0)[0] - at(-h, 0.0)[0] + at(0.0, h)[1] - at(0.0, -h)[1]) / (2.0 * h);
                errs.push((fd - div).abs());
            }
            // affine cells: quadratic fields give exact central differences
            assert!(errs[0] < 1e-8 && errs[1] < 1e-8, "{fam:?} {errs:?}");
        }
    }

    #[test]
    fn error_norms() {
        let m = mesh(8);
        let p2 = space(&m, ElementFamily::ContinuousLagrange(2));
        let zero = Field::zeros(p2.clone());
        let e = error_norm_with_degree(&zero, NormKind::L2, |x| vec![(PI * x[0]).sin() * (PI * x[1]).sin()], 12).unwrap();
        assert_relative_eq!(e, 0.5, epsilon = 1e-6);
        let f = interpolate_scalar(&p2, |x| x[0] * x[1]);
        assert!(error_norm(&f, NormKind::L2, |x| vec![x[0] * x[1]]).unwrap() < 1e-14);
        assert!(error_norm(&f, NormKind::HdivSemi, |_| vec![0.0]).is_err());
    }

    #[test]
    fn interpolation_rates() {
        let g = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).cos();
        let gv = |x: [f64; 2]| [(PI * x[0]).cos() * x[1], (PI * x[1]).sin() * x[0]];
        for (fam, expected) in [
            (ElementFamily::ContinuousLagrange(1), 2.0),
            (ElementFamily::ContinuousLagrange(2), 3.0),
            (ElementFamily::RaviartThomas(1), 1.0),
            (ElementFamily::RaviartThomas(2), 2.0),
            (ElementFamily::BrezziDouglasMarini(1), 2.0),
        ] {
            let errs: Vec<f64> = [8, 16]
                .iter()
                .map(|&n| {
                    let s = space(&mesh(n), fam);
                    if fam.is_hdiv() {
                        let f = interpolate_vector(&s, gv);
                        error_norm(&f, NormKind::L2, |x| gv(x).to_vec()).unwrap()
                    } else {
                        let f = interpolate_scalar(&s, g);
                        error_norm(&f, NormKind::L2, |x| vec![g(x)]).unwrap()
                    }
                })
                .collect();
            let rate = (errs[0] / errs[1]).log2();
            assert!((rate - expected).abs() < 0.15, "{fam:?} rate {rate}");
        }
    }

    #[test]
    fn projection_is_exact_on_the_space_and_mean_subtraction() {
        let m = mesh(3);
        let s = space(&m, ElementFamily::RaviartThomas(2));
        let f = |x: [f64; 2]| vec![x[0] * x[1] + 1.0, x[1] * x[1] - x[1]];
        let p = project(&s, f, 8).unwrap();
        assert!(error_norm(&p, NormKind::L2, f).unwrap() < 1e-11);
        let d = space(&m, ElementFamily::DiscontinuousLagrange(1));
        let mut q = project(&d, |x| vec![3.0 + x[0]], 6).unwrap();
        q.subtract_mean();
        assert!(q.integral()[0].abs() < 1e-14);
    }
}
