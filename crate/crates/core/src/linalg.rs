//! Compressed sparse row matrices and a sparse LU wrapper around `faer`.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};
use nalgebra::DMatrix;

use crate::error::{Result, SosmError};

/// Relative residual bound enforced on every sparse solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Coordinate-format accumulator. Duplicate entries are summed on build.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        TripletBuilder { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, cols, vals }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        CsrMatrix { nrows: n, ncols: n, row_ptr: (0..=n).collect(), cols: (0..n).collect(), vals: vec![1.0; n] }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut b = TripletBuilder::new(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    b.push(i, j, a[(i, j)]);
                }
            }
        }
        b.build()
    }

    /// Zero matrix with a fixed sparsity pattern; each row must be sorted
    /// and free of duplicates.
    pub fn from_pattern(nrows: usize, ncols: usize, rows: Vec<Vec<u32>>) -> Self {
        assert_eq!(rows.len(), nrows);
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            cols.extend(r.into_iter().map(|c| c as usize));
            row_ptr.push(cols.len());
        }
        CsrMatrix { nrows, ncols, row_ptr, cols, vals: vec![0.0; nnz] }
    }

    /// Same pattern with all values zero.
    pub fn zeroed(&self) -> Self {
        CsrMatrix { vals: vec![0.0; self.vals.len()], ..self.clone() }
    }

    /// Adds to an entry inside the pattern. Panics outside it.
    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k] += v,
            Err(_) => panic!("entry ({i}, {j}) outside the sparsity pattern"),
        }
    }

    pub fn row_mut(&mut self, i: usize) -> impl Iterator<Item = (usize, &mut f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter_mut())
    }

    /// Replaces row `i` by the unit row `e_i` (the diagonal must be in the pattern).
    pub fn set_identity_row(&mut self, i: usize) {
        for (j, v) in self.row_mut(i) {
            *v = if i == j { 1.0 } else { 0.0 };
        }
        debug_assert_eq!(self.get(i, i), 1.0);
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                b.push(j, i, v);
            }
        }
        b.build()
    }

    /// Largest absolute entry of `A - A^T`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - t.get(i, j)).abs());
            }
            for (j, v) in t.row(i) {
                worst = worst.max((v - self.get(i, j)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                if v != 0.0 {
                    t.push(Triplet::new(i, j, v));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| SosmError::InvalidInput(format!("sparse matrix construction: {e:?}")))
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Sparse LU factorization with partial pivoting, bundled with the matrix
/// for iterative refinement and residual checks.
pub struct LuFactor {
    matrix: CsrMatrix,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for LuFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactor").field("n", &self.matrix.nrows).finish()
    }
}

impl LuFactor {
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        if matrix.nrows != matrix.ncols {
            return Err(SosmError::InvalidInput(format!("LU of a {}x{} matrix", matrix.nrows, matrix.ncols)));
        }
        faer::set_global_parallelism(faer::Par::Seq);
        let lu = matrix
            .to_faer()?
            .sp_lu()
            .map_err(|e| SosmError::Singular(format!("sparse LU failed: {e:?}")))?;
        Ok(LuFactor { matrix, lu })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut m = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        self.lu.solve_in_place_with_conj(Conj::No, m.as_mut());
        (0..b.len()).map(|i| m[(i, 0)]).collect()
    }

    /// Solve with one step of iterative refinement. Fails if the relative
    /// residual exceeds [`SOLVE_TOLERANCE`].
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_with_tolerance(b, SOLVE_TOLERANCE)
    }

    pub fn solve_with_tolerance(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.dim());
        let bn = norm2(b);
        if bn == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let mut x = self.raw_solve(b);
        let mut r = self.residual(&x, b);
        let dx = self.raw_solve(&r);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        r = self.residual(&x, b);
        let rel = norm2(&r) / bn;
        if !rel.is_finite() {
            return Err(SosmError::Singular("nonfinite solution".into()));
        }
        if rel > tol {
            return Err(SosmError::InaccurateSolve(rel));
        }
        Ok(x)
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let ax = self.matrix.matvec(x);
        b.iter().zip(&ax).map(|(b, a)| b - a).collect()
    }
}

/// One-shot sparse solve.
pub fn sparse_lu_solve(matrix: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    LuFactor::new(matrix.clone())?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 1, 1.0);
        b.push(0, 1, 2.5);
        b.push(1, 0, -1.0);
        let m = b.build();
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.matvec(&[1.0, 2.0]), vec![7.0, -1.0]);
        assert_eq!(m.asymmetry(), 4.5);
    }

    #[test]
    fn identity_returns_rhs() {
        let b = vec![1.0, -2.0, 3.0];
        assert_eq!(sparse_lu_solve(&CsrMatrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn random_spd_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for _ in 0..150 {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let v: f64 = rng.gen_range(-1.0..1.0);
            a[(i, j)] += v;
            a[(j, i)] += v;
        }
        for i in 0..n {
            a[(i, i)] += n as f64 / 5.0 + (0..n).map(|j| a[(i, j)].abs()).sum::<f64>();
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = sparse_lu_solve(&CsrMatrix::from_dense(&a), &b).unwrap();
        let xd = a.clone().cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        let err: f64 = x.iter().zip(xd.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err / xd.norm() < 1e-12, "{err}");
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(1, 0, 1.0);
        assert!(sparse_lu_solve(&b.build(), &[1.0, 2.0]).is_err());
    }
}
