//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// 1-norm condition estimate via the explicit inverse (matrices here are
/// at most a few dozen rows).
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    match a.clone().try_inverse() {
        Some(inv) => one_norm(a) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solve `A X = B` for symmetric `A`: Cholesky first, pivoted LU as the
/// fallback for indefinite but well-conditioned systems.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    debug_assert_eq!(a.nrows(), a.ncols());
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol.solve(b));
    }
    solve_lu(a, b, "symmetric system")
}

/// Solve `A X = B` by pivoted LU with a condition check.
pub fn solve_lu(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let lu = a.clone().lu();
    match lu.solve(b) {
        Some(x) if x.iter().all(|v| v.is_finite()) => {
            let cond = condition_estimate(a);
            if cond > 1e14 {
                return Err(Error::Singular {
                    what,
                    condition: cond,
                });
            }
            Ok(x)
        }
        _ => Err(Error::Singular {
            what,
            condition: condition_estimate(a),
        }),
    }
}

/// Invert a square matrix, failing loudly on singularity.
pub fn invert(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    solve_lu(a, &DMatrix::identity(n, n), what)
}

/// Smallest eigenvalue of a symmetric matrix (for PSD diagnostics).
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (a + a.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Quadratic form `n * d^T M^{-1} d` used by the Wald statistics.
pub fn quadratic_form(m: &DMatrix<f64>, d: &DVector<f64>, scale: f64) -> Result<f64> {
    let cond = condition_estimate(m);
    if cond > 1e12 || !cond.is_finite() {
        return Err(Error::Singular {
            what: "Wald contrast covariance",
            condition: cond,
        });
    }
    let rhs = DMatrix::from_column_slice(d.len(), 1, d.as_slice());
    let sol = solve_lu(m, &rhs, "Wald contrast covariance")?;
    let z = scale * d.dot(&DVector::from_column_slice(sol.as_slice()));
    // tiny negative values are roundoff on a PSD form
    Ok(z.max(0.0))
}
