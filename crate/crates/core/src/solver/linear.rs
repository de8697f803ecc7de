//! Sparse direct solves and essential-row elimination.

use faer::prelude::*;
use faer::{Col, Par};

use super::SolverError;
use crate::sparse::{max_abs, CsrMatrix};

/// Relative residual `‖Ax − b‖_max / ‖b‖_max` accepted from a direct solve.
pub const LINEAR_TOLERANCE: f64 = 1e-11;

/// A square system `A x = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Sparse LU with partial pivoting and up to two steps of iterative refinement.
///
/// Factorization runs sequentially so repeated runs give identical bits.
pub fn linear_solve(matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
    let n = matrix.nrows();
    if matrix.ncols() != n || rhs.len() != n {
        return Err(SolverError::Dimension {
            rows: n,
            cols: matrix.ncols(),
            rhs: rhs.len(),
        });
    }
    let bnorm = max_abs(rhs);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    faer::set_global_parallelism(Par::Seq);
    let lu = matrix.to_faer().sp_lu().map_err(|_| SolverError::Singular)?;
    let solve = |b: &[f64]| -> Result<Vec<f64>, SolverError> {
        let col = Col::from_fn(n, |i| b[i]);
        let x = lu.solve(&col);
        let x: Vec<f64> = (0..n).map(|i| x[i]).collect();
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(SolverError::Singular)
        }
    };
    let mut x = solve(rhs)?;
    let residual = |x: &[f64]| -> Vec<f64> { matrix.matvec(x).iter().zip(rhs).map(|(a, b)| b - a).collect() };
    let mut r = residual(&x);
    for _ in 0..2 {
        if max_abs(&r) <= 1e-3 * LINEAR_TOLERANCE * bnorm {
            break;
        }
        let dx = solve(&r)?;
        x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        r = residual(&x);
    }
    let rel = max_abs(&r) / bnorm;
    if !(rel <= LINEAR_TOLERANCE) {
        // a numerically singular factorization shows up as a huge residual
        if !rel.is_finite() || rel > 1e-2 {
            return Err(SolverError::Singular);
        }
        return Err(SolverError::Inaccurate(rel));
    }
    Ok(x)
}

/// Replaces the rows and columns of prescribed unknowns by identity rows,
/// moving the eliminated column contributions to the right-hand side.
pub fn apply_essential_bc(system: LinearSystem, prescribed: &[(usize, f64)]) -> LinearSystem {
    if prescribed.is_empty() {
        return system;
    }
    let n = system.matrix.nrows();
    let mut fixed = vec![None; n];
    for &(i, v) in prescribed {
        fixed[i] = Some(v);
    }
    let mut rhs = system.rhs;
    let mut trips = Vec::with_capacity(system.matrix.nnz());
    for (i, j, a) in system.matrix.triplets() {
        match (fixed[i], fixed[j]) {
            (None, None) => trips.push((i, j, a)),
            (None, Some(g)) => rhs[i] -= a * g,
            _ => {}
        }
    }
    for &(i, v) in prescribed {
        trips.push((i, i, 1.0));
        rhs[i] = v;
    }
    LinearSystem {
        matrix: CsrMatrix::from_triplets(n, n, trips),
        rhs,
    }
}
