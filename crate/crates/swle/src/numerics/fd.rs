//! Central finite differences with cube-root-of-epsilon steps.

use nalgebra::{DMatrix, DVector};

/// Step size `eps^(1/3) * max(1, |x|)`.
pub fn central_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Central-difference derivative of a scalar function.
pub fn derivative<F: FnMut(f64) -> f64>(mut f: F, x: f64) -> f64 {
    let h = central_step(x);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central-difference gradient of a scalar function of a vector.
pub fn gradient<F: FnMut(&DVector<f64>) -> f64>(mut f: F, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut xp = x.clone();
    for i in 0..n {
        let h = central_step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function; row `i` holds
/// `d out_i / d x_j`.
pub fn jacobian<F: FnMut(&DVector<f64>) -> DVector<f64>>(
    mut f: F,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let n = x.len();
    let mut xp = x.clone();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let h = central_step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    let m = cols[0].len();
    DMatrix::from_fn(m, n, |i, j| cols[j][i])
}
