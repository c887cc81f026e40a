//! Reference elements on the triangle with vertices (0,0), (1,0), (0,1).
//!
//! H(div) bases are the duals of Legendre-weighted normal moments on each
//! edge plus interior moments, computed once by inverting the moment matrix
//! over a monomial expansion.

use nalgebra::DMatrix;

use crate::error::{Result, SosmError};
use crate::mesh::LOCAL_EDGES;
use crate::quadrature::{legendre, LineRule, TriangleRule};

pub const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Outward normal of each reference edge scaled by the edge length.
pub const REF_EDGE_NORMALS: [[f64; 2]; 3] = [[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementFamily {
    ContinuousLagrange(usize),
    DiscontinuousLagrange(usize),
    RaviartThomas(usize),
    BrezziDouglasMarini(usize),
}

impl ElementFamily {
    pub fn validate(self) -> Result<Self> {
        let ok = match self {
            ElementFamily::ContinuousLagrange(k) => (1..=2).contains(&k),
            ElementFamily::DiscontinuousLagrange(k) => k <= 1,
            ElementFamily::RaviartThomas(k) | ElementFamily::BrezziDouglasMarini(k) => (1..=2).contains(&k),
        };
        if ok {
            Ok(self)
        } else {
            Err(SosmError::Unsupported(format!("{self:?}")))
        }
    }

    pub fn degree(self) -> usize {
        match self {
            ElementFamily::ContinuousLagrange(k)
            | ElementFamily::DiscontinuousLagrange(k)
            | ElementFamily::RaviartThomas(k)
            | ElementFamily::BrezziDouglasMarini(k) => k,
        }
    }

    pub fn is_hdiv(self) -> bool {
        matches!(self, ElementFamily::RaviartThomas(_) | ElementFamily::BrezziDouglasMarini(_))
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, ElementFamily::ContinuousLagrange(_))
    }

    /// Local DOFs per vertex, per edge, and in the interior.
    pub fn dof_layout(self) -> (usize, usize, usize) {
        match self {
            ElementFamily::ContinuousLagrange(1) => (1, 0, 0),
            ElementFamily::ContinuousLagrange(_) => (1, 1, 0),
            ElementFamily::DiscontinuousLagrange(0) => (0, 0, 1),
            ElementFamily::DiscontinuousLagrange(_) => (0, 0, 3),
            ElementFamily::RaviartThomas(1) => (0, 1, 0),
            ElementFamily::RaviartThomas(_) => (0, 2, 2),
            ElementFamily::BrezziDouglasMarini(1) => (0, 2, 0),
            ElementFamily::BrezziDouglasMarini(_) => (0, 3, 3),
        }
    }

    pub fn local_dofs(self) -> usize {
        let (v, e, i) = self.dof_layout();
        3 * v + 3 * e + i
    }
}

/// Point on local edge `e` at parameter `s` in [0, 1], running from the
/// first to the second vertex of `LOCAL_EDGES[e]`.
pub fn edge_point(e: usize, s: f64) -> [f64; 2] {
    let [a, b] = LOCAL_EDGES[e];
    let (pa, pb) = (REF_VERTICES[a], REF_VERTICES[b]);
    [(1.0 - s) * pa[0] + s * pb[0], (1.0 - s) * pa[1] + s * pb[1]]
}

fn monomials(p: [f64; 2]) -> [f64; 6] {
    let [x, y] = p;
    [1.0, x, y, x * x, x * y, y * y]
}

fn monomial_gradients(p: [f64; 2]) -> ([f64; 6], [f64; 6]) {
    let [x, y] = p;
    ([0.0, 1.0, 0.0, 2.0 * x, y, 0.0], [0.0, 0.0, 1.0, 0.0, x, 2.0 * y])
}

/// Vector polynomial of degree at most 2: coefficients of `[1, x, y, x², xy, y²]`
/// for each component.
type VecPoly = [[f64; 6]; 2];

fn unit_poly(component: usize, monomial: usize) -> VecPoly {
    let mut p = [[0.0; 6]; 2];
    p[component][monomial] = 1.0;
    p
}

fn eval_poly(p: &VecPoly, x: [f64; 2]) -> [f64; 2] {
    let m = monomials(x);
    let dot = |c: &[f64; 6]| c.iter().zip(&m).map(|(a, b)| a * b).sum();
    [dot(&p[0]), dot(&p[1])]
}

fn div_poly(p: &VecPoly, x: [f64; 2]) -> f64 {
    let (dx, dy) = monomial_gradients(x);
    p[0].iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>() + p[1].iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
}

/// Reference element basis with a uniform evaluation interface.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    family: ElementFamily,
    hdiv: Vec<VecPoly>,
}

impl ReferenceElement {
    pub fn new(family: ElementFamily) -> Result<Self> {
        let family = family.validate()?;
        let hdiv = if family.is_hdiv() { hdiv_basis(family)? } else { Vec::new() };
        Ok(ReferenceElement { family, hdiv })
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn ndofs(&self) -> usize {
        self.family.local_dofs()
    }

    /// Scalar Lagrange values and reference gradients at `x`.
    pub fn eval_scalar(&self, x: [f64; 2], values: &mut [f64], grads: &mut [[f64; 2]]) {
        let l = [1.0 - x[0] - x[1], x[0], x[1]];
        let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        match self.family {
            ElementFamily::DiscontinuousLagrange(0) => {
                values[0] = 1.0;
                grads[0] = [0.0, 0.0];
            }
            ElementFamily::ContinuousLagrange(1) | ElementFamily::DiscontinuousLagrange(1) => {
                values[..3].copy_from_slice(&l);
                grads[..3].copy_from_slice(&dl);
            }
            ElementFamily::ContinuousLagrange(2) => {
                for i in 0..3 {
                    values[i] = l[i] * (2.0 * l[i] - 1.0);
                    let s = 4.0 * l[i] - 1.0;
                    grads[i] = [s * dl[i][0], s * dl[i][1]];
                }
                for (e, [a, b]) in LOCAL_EDGES.iter().copied().enumerate() {
                    values[3 + e] = 4.0 * l[a] * l[b];
                    grads[3 + e] = [
                        4.0 * (dl[a][0] * l[b] + l[a] * dl[b][0]),
                        4.0 * (dl[a][1] * l[b] + l[a] * dl[b][1]),
                    ];
                }
            }
            f => panic!("eval_scalar called on {f:?}"),
        }
    }

    /// H(div) reference values and divergences at `x`.
    pub fn eval_hdiv(&self, x: [f64; 2], values: &mut [[f64; 2]], divs: &mut [f64]) {
        debug_assert!(self.family.is_hdiv());
        for (i, p) in self.hdiv.iter().enumerate() {
            values[i] = eval_poly(p, x);
            divs[i] = div_poly(p, x);
        }
    }

    /// Reference nodes of scalar Lagrange DOFs.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        match self.family {
            ElementFamily::DiscontinuousLagrange(0) => vec![[1.0 / 3.0, 1.0 / 3.0]],
            ElementFamily::ContinuousLagrange(1) | ElementFamily::DiscontinuousLagrange(1) => REF_VERTICES.to_vec(),
            ElementFamily::ContinuousLagrange(2) => {
                let mut n = REF_VERTICES.to_vec();
                n.extend((0..3).map(|e| edge_point(e, 0.5)));
                n
            }
            _ => Vec::new(),
        }
    }

    /// Number of Legendre moments per edge and interior moments (H(div) only).
    pub fn moment_counts(&self) -> (usize, usize) {
        let (_, e, i) = self.family.dof_layout();
        (e, i)
    }
}

/// Interior moment weights of the H(div) families at a reference point.
pub fn interior_weights(family: ElementFamily, x: [f64; 2]) -> Vec<[f64; 2]> {
    match family {
        ElementFamily::RaviartThomas(2) => vec![[1.0, 0.0], [0.0, 1.0]],
        ElementFamily::BrezziDouglasMarini(2) => vec![[1.0, 0.0], [0.0, 1.0], [-x[1], x[0]]],
        _ => Vec::new(),
    }
}

fn hdiv_span(family: ElementFamily) -> Vec<VecPoly> {
    let p1: Vec<VecPoly> = (0..2).flat_map(|c| (0..3).map(move |m| unit_poly(c, m))).collect();
    match family {
        ElementFamily::RaviartThomas(1) => {
            vec![unit_poly(0, 0), unit_poly(1, 0), [[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]]]
        }
        ElementFamily::RaviartThomas(_) => {
            let mut s = p1;
            // x times the homogeneous linear monomials
            s.push([[0.0, 0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]]);
            s.push([[0.0, 0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]]);
            s
        }
        ElementFamily::BrezziDouglasMarini(1) => p1,
        _ => (0..2).flat_map(|c| (0..6).map(move |m| unit_poly(c, m))).collect(),
    }
}

/// Applies all reference DOF functionals of `family` to a vector field.
pub fn apply_functionals<F>(family: ElementFamily, f: F) -> Vec<f64>
where
    F: Fn([f64; 2]) -> [f64; 2],
{
    let (ne, ni) = {
        let (_, e, i) = family.dof_layout();
        (e, i)
    };
    let line = LineRule::new(6);
    let mut out = Vec::with_capacity(3 * ne + ni);
    for e in 0..3 {
        let n = REF_EDGE_NORMALS[e];
        for j in 0..ne {
            let mut acc = 0.0;
            for (s, w) in line.points.iter().zip(&line.weights) {
                let v = f(edge_point(e, *s));
                acc += w * (v[0] * n[0] + v[1] * n[1]) * legendre(j, 2.0 * s - 1.0);
            }
            out.push(acc);
        }
    }
    if ni > 0 {
        let rule = TriangleRule::new(4);
        let mut acc = vec![0.0; ni];
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let v = f(*x);
            for (a, q) in acc.iter_mut().zip(interior_weights(family, *x)) {
                *a += w * (v[0] * q[0] + v[1] * q[1]);
            }
        }
        out.extend(acc);
    }
    out
}

fn hdiv_basis(family: ElementFamily) -> Result<Vec<VecPoly>> {
    let span = hdiv_span(family);
    let n = span.len();
    debug_assert_eq!(n, family.local_dofs());
    let mut d = DMatrix::<f64>::zeros(n, n);
    for (m, p) in span.iter().enumerate() {
        let vals = apply_functionals(family, |x| eval_poly(p, x));
        for (f, v) in vals.into_iter().enumerate() {
            d[(f, m)] = v;
        }
    }
    let c = d
        .transpose()
        .try_inverse()
        .ok_or_else(|| SosmError::Singular(format!("moment matrix of {family:?}")))?;
    Ok((0..n)
        .map(|i| {
            let mut p = [[0.0; 6]; 2];
            for (m, s) in span.iter().enumerate() {
                for comp in 0..2 {
                    for k in 0..6 {
                        p[comp][k] += c[(i, m)] * s[comp][k];
                    }
                }
            }
            p
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const HDIV: [ElementFamily; 4] = [
        ElementFamily::RaviartThomas(1),
        ElementFamily::RaviartThomas(2),
        ElementFamily::BrezziDouglasMarini(1),
        ElementFamily::BrezziDouglasMarini(2),
    ];

    #[test]
    fn dof_counts() {
        let counts: Vec<usize> = HDIV.iter().map(|f| f.local_dofs()).collect();
        assert_eq!(counts, vec![3, 8, 6, 12]);
        assert_eq!(ElementFamily::ContinuousLagrange(2).local_dofs(), 6);
        assert!(ElementFamily::RaviartThomas(3).validate().is_err());
        assert!(ElementFamily::DiscontinuousLagrange(2).validate().is_err());
    }

    #[test]
    fn hdiv_bases_are_dual_to_their_functionals() {
        for fam in HDIV {
            let el = ReferenceElement::new(fam).unwrap();
            let n = el.ndofs();
            for i in 0..n {
                let vals = apply_functionals(fam, |x| {
                    let mut v = vec![[0.0; 2]; n];
                    let mut d = vec![0.0; n];
                    el.eval_hdiv(x, &mut v, &mut d);
                    v[i]
                });
                for (j, v) in vals.iter().enumerate() {
                    assert_relative_eq!(*v, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn rt1_matches_closed_form() {
        // edge 0 basis: (x, y) / |e0| scaled so its flux moment is one
        let el = ReferenceElement::new(ElementFamily::RaviartThomas(1)).unwrap();
        let mut v = [[0.0; 2]; 3];
        let mut d = [0.0; 3];
        el.eval_hdiv([0.3, 0.2], &mut v, &mut d);
        assert_relative_eq!(v[0][0], 0.3, epsilon = 1e-13);
        assert_relative_eq!(v[0][1], 0.2, epsilon = 1e-13);
        assert_relative_eq!(d[0], 2.0, epsilon = 1e-13);
    }

    #[test]
    fn lagrange_partition_of_unity() {
        for fam in [ElementFamily::ContinuousLagrange(1), ElementFamily::ContinuousLagrange(2)] {
            let el = ReferenceElement::new(fam).unwrap();
            let mut v = vec![0.0; el.ndofs()];
            let mut g = vec![[0.0; 2]; el.ndofs()];
            el.eval_scalar([0.21, 0.37], &mut v, &mut g);
            assert_relative_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            assert_relative_eq!(g.iter().map(|x| x[0]).sum::<f64>(), 0.0, epsilon = 1e-13);
            for (i, node) in el.nodes().into_iter().enumerate() {
                el.eval_scalar(node, &mut v, &mut g);
                for (j, x) in v.iter().enumerate() {
                    assert_relative_eq!(*x, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-14);
                }
            }
        }
    }
}
