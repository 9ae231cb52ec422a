//! Bracketed scalar root finding (Brent's method).

use crate::error::{Error, Result};

/// Find a root of `g` on the bracket `(lo, hi)` by Brent's method.
///
/// Requires a sign change on the bracket.
pub fn find_root<F: FnMut(f64) -> f64>(mut g: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let mut fa = g(a);
    let mut fb = g(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::Bracketing {
            lo,
            hi,
            g_lo: fa,
            g_hi: fb,
        });
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..200 {
        if fb.abs() > fc.abs() {
            // c is the better approximation; rotate
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            break;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // inverse quadratic / secant step
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else {
            tol1.copysign(xm)
        };
        fb = g(b);
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Ok(b)
}

/// Scan `[lo, hi]` on a uniform grid of `n` points for a sign change of `g`,
/// then polish with Brent. Used for dispersion score roots where the exact
/// bracket is unknown.
pub fn find_root_scan<F: FnMut(f64) -> f64>(
    mut g: F,
    lo: f64,
    hi: f64,
    n: usize,
    tol: f64,
) -> Result<f64> {
    let mut prev_x = lo;
    let mut prev_f = g(lo);
    if prev_f == 0.0 {
        return Ok(lo);
    }
    for i in 1..=n {
        let x = lo + (hi - lo) * (i as f64) / (n as f64);
        let fx = g(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if prev_f.is_finite() && fx.is_finite() && prev_f * fx < 0.0 {
            return find_root(g, prev_x, x, tol);
        }
        prev_x = x;
        prev_f = fx;
    }
    let g_lo = g(lo);
    let g_hi = g(hi);
    Err(Error::Bracketing {
        lo,
        hi,
        g_lo,
        g_hi,
    })
}
