//! Small dense linear-algebra helpers shared by the manifold, regulator and
//! optimizer code.

use nalgebra::{Complex, DMatrix, DVector};

#[allow(unused_imports)]
use crate::prelude::*;

/// Singular values, unsorted as returned by the SVD.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

/// Numerical rank with a threshold relative to the largest singular value.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Returns a matrix whose rows are an orthonormal basis of the orthogonal
/// complement of the row space of `rows` (assumed full row rank).
///
/// Built from the full Householder factor of `rowsᵀ`, so `basis * rowsᵀ` is
/// zero to machine precision relative to `|rows|`. Each basis row is flipped
/// so that its first entry with magnitude above `1e-12` is positive.
pub fn row_space_complement(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, n) = rows.shape();
    let qr = rows.transpose().qr();
    let mut qt = DMatrix::<f64>::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let mut basis = qt.rows(k, n - k).into_owned();
    for mut row in basis.row_iter_mut() {
        if let Some(first) = row.iter().find(|v| v.abs() > 1e-12).copied() {
            if first < 0.0 {
                row.neg_mut();
            }
        }
    }
    basis
}

/// `[B, AB, A²B, …, Aⁿ⁻¹B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        c.columns_mut(i * m, m).copy_from(&block);
        block = a * block;
    }
    c
}

/// Controllability rank by the orthogonal staircase (Krylov) iteration.
///
/// Each Krylov vector is orthogonalized against the accumulated basis and
/// kept when its residual exceeds `rel_tol` times the norm of the vector
/// before orthogonalization (the columns of `B` are measured against the
/// largest column of `B`). This avoids forming powers of `A` explicitly.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> usize {
    let n = a.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();

    let orthogonalize = |basis: &[DVector<f64>], mut v: DVector<f64>| {
        for _ in 0..2 {
            for q in basis {
                let p = q.dot(&v);
                v.axpy(-p, q, 1.0);
            }
        }
        v
    };

    let b_scale = b.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if b_scale == 0.0 {
        return 0;
    }
    let mut frontier = Vec::new();
    for col in b.column_iter() {
        let v = orthogonalize(&basis, col.into_owned());
        let norm = v.norm();
        if norm > rel_tol * b_scale {
            let v = v / norm;
            basis.push(v.clone());
            frontier.push(v);
        }
    }
    while !frontier.is_empty() && basis.len() < n {
        let mut next = Vec::new();
        for f in &frontier {
            let w = a * f;
            let scale = w.norm();
            if scale == 0.0 {
                continue;
            }
            let v = orthogonalize(&basis, w);
            let norm = v.norm();
            if norm > rel_tol * scale {
                let v = v / norm;
                basis.push(v.clone());
                next.push(v);
                if basis.len() == n {
                    break;
                }
            }
        }
        frontier = next;
    }
    basis.len()
}

/// Eigenvalues of a real square matrix from a bounded complex Schur
/// iteration; `None` if it does not converge.
///
/// The deflation test of the Schur iteration is relative to the adjacent
/// diagonal entries and never fires between two exact zeros, so the matrix
/// is shifted by its norm first.
pub fn eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let n = m.nrows();
    let shift = m.norm().max(1.0);
    let shifted = m + DMatrix::identity(n, n) * shift;
    let schur = nalgebra::linalg::Schur::try_new(shifted, 1e-13, 100_000)?;
    Some(schur.complex_eigenvalues().iter().map(|e| e - Complex::new(shift, 0.0)).collect())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves `AᵀX + XA + Q = 0` through its Kronecker form. Intended for the
/// small reduced systems handled here (n ≲ 30).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let mut k = DMatrix::<f64>::zeros(n * n, n * n);
    // vec(AᵀX) = (I ⊗ Aᵀ) vec X, vec(XA) = (Aᵀ ⊗ I) vec X (column-major vec)
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            for l in 0..n {
                k[(row, j * n + l)] += at[(i, l)];
                k[(row, l * n + i)] += a[(l, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let x = k.lu().solve(&rhs)?;
    Some(symmetrize(&DMatrix::from_vec(n, n, x.data.as_vec().clone())))
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// For builds without `std`, where nalgebra's `exp` is unavailable.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(squarings);
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=18 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}
