//! Complex linear-algebra helpers on top of nalgebra: sorted Hermitian
//! eigendecomposition, guarded Hermitian solves, Gram-Schmidt extension and a
//! block-diagonal matrix type used by the deterministic equivalents.

use nalgebra::{Cholesky, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{cr, CMat, CVec, Real, C};

/// `(A + A^*) / 2`.
pub fn hermitian_part<T: Real>(a: &CMat<T>) -> CMat<T> {
    (a + a.adjoint()) * cr(T::lit(0.5))
}

/// Largest absolute entry of `A - A^*`.
pub fn hermitian_defect<T: Real>(a: &CMat<T>) -> T {
    let d = a - a.adjoint();
    d.iter().fold(T::zero(), |m, z| m.max(z.norm_sqr().sqrt()))
}

/// `tr(AB)` without forming the product.
pub fn trace_product<T: Real>(a: &CMat<T>, b: &CMat<T>) -> C<T> {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    let mut acc = cr(T::zero());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Real trace of a Hermitian matrix.
pub fn real_trace<T: Real>(a: &CMat<T>) -> T {
    (0..a.nrows().min(a.ncols())).fold(T::zero(), |s, i| s + a[(i, i)].re)
}

pub fn frobenius<T: Real>(a: &CMat<T>) -> T {
    a.iter().fold(T::zero(), |s, z| s + z.norm_sqr()).sqrt()
}

/// `||A - B||_F / ||B||_F` (absolute error when `B = 0`).
pub fn frobenius_rel<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    let num = frobenius(&(a - b));
    let den = frobenius(b);
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct HermitianEigen<T: Real> {
    pub values: Vec<T>,
    pub vectors: CMat<T>,
}

impl<T: Real> HermitianEigen<T> {
    /// `V diag(values) V^*`.
    pub fn reconstruct(&self) -> CMat<T> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        &scaled * self.vectors.adjoint()
    }
}

/// Hermitian eigendecomposition. Eigenvalues in `[-clamp, 0)` are set to 0.
pub fn hermitian_eigen<T: Real>(a: &CMat<T>, clamp: T) -> HermitianEigen<T> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vectors = CMat::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let v = eig.eigenvalues[src];
        values.push(if v < T::zero() && v >= -clamp { T::zero() } else { v });
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    HermitianEigen { values, vectors }
}

/// Cholesky factor of a Hermitian positive-definite matrix, retried with a
/// growing diagonal jitter (starting at 1e-12 of the mean diagonal) when the
/// plain factorization fails.
pub struct HermitianSolver<T: Real> {
    chol: Cholesky<C<T>, Dyn>,
    jitter: T,
}

impl<T: Real> HermitianSolver<T> {
    pub fn new(a: &CMat<T>) -> Result<Self> {
        let a = hermitian_part(a);
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Self {
                chol,
                jitter: T::zero(),
            });
        }
        let n = a.nrows();
        let scale = (real_trace(&a) / T::from_usize_lossy(n.max(1))).abs();
        let scale = if scale > T::zero() { scale } else { T::one() };
        let mut jitter = scale * T::lit(1e-12);
        for _ in 0..10 {
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] += cr(jitter);
            }
            if let Some(chol) = Cholesky::new(b) {
                log::warn!("Hermitian solve needed diagonal jitter {:e}", jitter.as_f64());
                return Ok(Self { chol, jitter });
            }
            jitter *= T::lit(10.0);
        }
        Err(Error::Numerical(format!("matrix of size {n} is not positive definite")))
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn solve(&self, b: &CMat<T>) -> CMat<T> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &CVec<T>) -> CVec<T> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> CMat<T> {
        self.chol.inverse()
    }

    /// `x^* A^{-1} x`, real for Hermitian `A`.
    pub fn inv_quad(&self, x: &CVec<T>) -> T {
        let y = self.chol.solve(x);
        x.dotc(&y).re
    }
}

/// Solve `A X = B` for Hermitian positive-definite `A`.
pub fn solve_hermitian<T: Real>(a: &CMat<T>, b: &CMat<T>) -> Result<CMat<T>> {
    Ok(HermitianSolver::new(a)?.solve(b))
}

/// Orthogonalize `candidate` against an orthonormal `basis` (two passes of
/// modified Gram-Schmidt). Returns the normalized residual when its norm
/// exceeds `tol` times the candidate norm.
pub fn orthonormal_residual<T: Real>(basis: &[CVec<T>], candidate: &CVec<T>, tol: T) -> Option<CVec<T>> {
    let norm0 = candidate.norm();
    if norm0 <= T::zero() {
        return None;
    }
    let mut r = candidate.clone();
    for _ in 0..2 {
        for q in basis {
            let proj = q.dotc(&r);
            r.axpy(-proj, q, cr(T::one()));
        }
    }
    let norm = r.norm();
    if norm > tol * norm0 {
        Some(r.unscale(norm))
    } else {
        None
    }
}

/// Stack column vectors into a matrix.
pub fn from_columns<T: Real>(rows: usize, cols: &[CVec<T>]) -> CMat<T> {
    let mut m = CMat::zeros(rows, cols.len());
    for (j, col) in cols.iter().enumerate() {
        m.set_column(j, col);
    }
    m
}

/// `||A^* A - I||_F`.
pub fn orthonormality_defect<T: Real>(a: &CMat<T>) -> T {
    let g = a.adjoint() * a;
    frobenius(&(g - CMat::identity(a.ncols(), a.ncols())))
}

/// Block-diagonal complex matrix. Blocks may have different sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag<T: Real> {
    pub blocks: Vec<CMat<T>>,
}

impl<T: Real> BlockDiag<T> {
    pub fn new(blocks: Vec<CMat<T>>) -> Self {
        Self { blocks }
    }

    pub fn dense(m: CMat<T>) -> Self {
        Self { blocks: vec![m] }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            blocks: sizes.iter().map(|&s| CMat::zeros(s, s)).collect(),
        }
    }

    pub fn identity(sizes: &[usize]) -> Self {
        Self {
            blocks: sizes.iter().map(|&s| CMat::identity(s, s)).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.iter().all(|z| z.re == T::zero() && z.im == T::zero()))
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b * cr(s)).collect(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        debug_assert_eq!(self.sizes(), other.sizes());
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a += b * cr(s);
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a * b).collect(),
        }
    }

    /// `self * mid * self`.
    pub fn sandwich(&self, mid: &Self) -> Self {
        Self {
            blocks: self.blocks.iter().zip(&mid.blocks).map(|(a, b)| a * b * a).collect(),
        }
    }

    pub fn trace_mul(&self, other: &Self) -> C<T> {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .fold(cr(T::zero()), |s, (a, b)| s + trace_product(a, b))
    }

    pub fn trace(&self) -> C<T> {
        self.blocks.iter().fold(cr(T::zero()), |s, b| s + b.trace())
    }

    /// Inverse of a Hermitian positive-definite block-diagonal matrix.
    pub fn inverse_hermitian(&self) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                if b.nrows() == 0 {
                    Ok(b.clone())
                } else {
                    HermitianSolver::new(b).map(|s| s.inverse())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn hermitian_part(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(hermitian_part).collect(),
        }
    }

    pub fn to_dense(&self) -> CMat<T> {
        let n = self.dim();
        let mut m = CMat::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            let s = b.nrows();
            m.view_mut((off, off), (s, s)).copy_from(b);
            off += s;
        }
        m
    }
}
