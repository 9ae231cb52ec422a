//! Adaptive Gauss–Kronrod quadrature.
//!
//! A 15-point Kronrod rule with embedded 7-point Gauss rule drives a
//! worst-interval-first subdivision loop. Semi-infinite and doubly infinite
//! intervals are mapped onto finite ones with the rational substitution
//! `y = a + t/(1-t)` (and its mirror image).

use crate::error::{Error, Result};

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub subdivisions: usize,
    pub converged: bool,
}

impl QuadratureResult {
    pub fn into_checked(self) -> Result<QuadratureResult> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::QuadratureNonConvergence {
                estimate: self.value,
                error_bound: self.error_estimate,
            })
        }
    }
}

// Kronrod-15 abscissae on [-1, 1] (positive half) and weights; the embedded
// Gauss-7 weights apply to the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Kronrod-15 panel on `[a, b]`; returns (integral, error estimate).
fn qk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut res_kronrod = fc * WGK[7];
    let mut res_gauss = fc * WG[3];
    let mut res_abs = res_kronrod.abs();

    let mut fv = [0.0f64; 15];
    fv[7] = fc;
    for (j, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[j] = f1;
        fv[14 - j] = f2;
        let sum = f1 + f2;
        res_kronrod += WGK[j] * sum;
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_gauss += WG[j / 2] * sum;
        }
    }

    let mean = res_kronrod * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for (j, &v) in fv.iter().enumerate().take(7) {
        res_asc += WGK[j] * ((v - mean).abs() + (fv[14 - j] - mean).abs());
    }

    let integral = res_kronrod * half;
    res_abs *= half.abs();
    res_asc *= half.abs();

    let mut err = ((res_kronrod - res_gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * 1.0f64.min((200.0 * err / res_asc).powf(1.5));
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (integral, err)
}

const MAX_SUBDIVISIONS: usize = 200;

fn adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> QuadratureResult {
    let (v0, e0) = qk15(f, a, b);
    // (error, a, b, value); linear scan keeps the segment list tiny and cache friendly.
    let mut segs: Vec<(f64, f64, f64, f64)> = vec![(e0, a, b, v0)];
    let mut subdivisions = 0usize;

    loop {
        let total: f64 = segs.iter().map(|s| s.3).sum();
        let err: f64 = segs.iter().map(|s| s.0).sum();
        let tol = abs_tol.max(rel_tol * total.abs());
        if err <= tol || subdivisions >= MAX_SUBDIVISIONS {
            return QuadratureResult {
                value: total,
                error_estimate: err,
                subdivisions,
                converged: err <= tol,
            };
        }
        let (worst_idx, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.partial_cmp(&y.1 .0).unwrap())
            .unwrap();
        let (_, lo, hi, _) = segs.swap_remove(worst_idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine precision
            let (v, e) = qk15(f, lo, hi);
            segs.push((0.0_f64.max(e * 0.0), lo, hi, v));
            subdivisions += 1;
            continue;
        }
        let (v1, e1) = qk15(f, lo, mid);
        let (v2, e2) = qk15(f, mid, hi);
        segs.push((e1, lo, mid, v1));
        segs.push((e2, mid, hi, v2));
        subdivisions += 1;
    }
}

/// Integrate `f` over `(lo, hi)` with mixed relative/absolute tolerance.
///
/// Either endpoint may be infinite. Non-finite integrand values at interior
/// points are treated as zero (integrable endpoint spikes are handled by the
/// change of variables, anything else is the caller's bug).
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> QuadratureResult {
    if !(lo < hi) {
        return QuadratureResult {
            value: 0.0,
            error_estimate: 0.0,
            subdivisions: 0,
            converged: true,
        };
    }
    let mut guard = move |y: f64| {
        let v = f(y);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    match (lo.is_infinite(), hi.is_infinite()) {
        (false, false) => adaptive(&mut guard, lo, hi, rel_tol, abs_tol),
        (false, true) => {
            // y = lo + t/(1-t), t in [0,1): dy = dt/(1-t)^2
            let mut g = |t: f64| {
                let om = 1.0 - t;
                if om <= 0.0 {
                    return 0.0;
                }
                let y = lo + t / om;
                guard(y) / (om * om)
            };
            adaptive(&mut g, 0.0, 1.0, rel_tol, abs_tol)
        }
        (true, false) => {
            // y = hi - t/(1-t)
            let mut g = |t: f64| {
                let om = 1.0 - t;
                if om <= 0.0 {
                    return 0.0;
                }
                let y = hi - t / om;
                guard(y) / (om * om)
            };
            adaptive(&mut g, 0.0, 1.0, rel_tol, abs_tol)
        }
        (true, true) => {
            // y = t/(1-t^2): maps (-1,1) onto the real line
            let mut g = |t: f64| {
                let om = 1.0 - t * t;
                if om <= 0.0 {
                    return 0.0;
                }
                let y = t / om;
                guard(y) * (1.0 + t * t) / (om * om)
            };
            adaptive(&mut g, -1.0, 1.0, rel_tol, abs_tol)
        }
    }
}

/// Default tolerances used by the statistical kernels.
pub const DEFAULT_REL_TOL: f64 = 1e-9;
pub const DEFAULT_ABS_TOL: f64 = 1e-12;

/// Integrate with the library default tolerances.
pub fn integrate_default<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64) -> QuadratureResult {
    integrate(f, lo, hi, DEFAULT_REL_TOL, DEFAULT_ABS_TOL)
}

/// Integrate a small family of integrands sharing one expensive density
/// factor: the integral of `common(y) * each component(y)`.
///
/// The adaptive loop controls the worst per-component error, so all
/// components meet the tolerance on the shared grid.
pub fn integrate_many<const N: usize, C, G>(
    mut common: C,
    mut components: G,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> ([f64; N], f64, bool)
where
    C: FnMut(f64) -> f64,
    G: FnMut(f64, &mut [f64; N]),
{
    if !(lo < hi) {
        return ([0.0; N], 0.0, true);
    }

    // Reuse the scalar machinery per component would re-evaluate the shared
    // factor N times; instead run one vector-valued Kronrod loop.
    struct Seg<const N: usize> {
        lo: f64,
        hi: f64,
        vals: [f64; N],
        errs: [f64; N],
    }

    let mut eval = |y: f64, out: &mut [f64; N]| {
        let c = common(y);
        if !c.is_finite() {
            *out = [0.0; N];
            return;
        }
        let mut comps = [0.0; N];
        components(y, &mut comps);
        for i in 0..N {
            out[i] = c * comps[i];
            if !out[i].is_finite() {
                out[i] = 0.0;
            }
        }
    };

    // Map infinite ends just like the scalar version.
    enum Map {
        Identity,
        FromLo(f64),
        FromHi(f64),
        Bilateral,
    }
    let (a, b, map) = match (lo.is_infinite(), hi.is_infinite()) {
        (false, false) => (lo, hi, Map::Identity),
        (false, true) => (0.0, 1.0, Map::FromLo(lo)),
        (true, false) => (0.0, 1.0, Map::FromHi(hi)),
        (true, true) => (-1.0, 1.0, Map::Bilateral),
    };
    let transform = |t: f64| -> (f64, f64) {
        match map {
            Map::Identity => (t, 1.0),
            Map::FromLo(lo) => {
                let om = 1.0 - t;
                if om <= 0.0 {
                    (f64::NAN, 0.0)
                } else {
                    (lo + t / om, 1.0 / (om * om))
                }
            }
            Map::FromHi(hi) => {
                let om = 1.0 - t;
                if om <= 0.0 {
                    (f64::NAN, 0.0)
                } else {
                    (hi - t / om, 1.0 / (om * om))
                }
            }
            Map::Bilateral => {
                let om = 1.0 - t * t;
                if om <= 0.0 {
                    (f64::NAN, 0.0)
                } else {
                    (t / om, (1.0 + t * t) / (om * om))
                }
            }
        }
    };

    let mut panel = |plo: f64, phi: f64| -> ([f64; N], [f64; N]) {
        let center = 0.5 * (plo + phi);
        let half = 0.5 * (phi - plo);
        let mut kron = [0.0; N];
        let mut gauss = [0.0; N];
        let mut point = |t: f64, out: &mut [f64; N]| {
            let (y, jac) = transform(t);
            if !y.is_finite() || jac == 0.0 {
                *out = [0.0; N];
                return;
            }
            eval(y, out);
            for v in out.iter_mut() {
                *v *= jac;
            }
        };
        let mut fc = [0.0; N];
        point(center, &mut fc);
        for i in 0..N {
            kron[i] = fc[i] * WGK[7];
            gauss[i] = fc[i] * WG[3];
        }
        for (j, &x) in XGK.iter().enumerate().take(7) {
            let dx = half * x;
            let mut f1 = [0.0; N];
            let mut f2 = [0.0; N];
            point(center - dx, &mut f1);
            point(center + dx, &mut f2);
            for i in 0..N {
                let sum = f1[i] + f2[i];
                kron[i] += WGK[j] * sum;
                if j % 2 == 1 {
                    gauss[i] += WG[j / 2] * sum;
                }
            }
        }
        let mut vals = [0.0; N];
        let mut errs = [0.0; N];
        for i in 0..N {
            vals[i] = kron[i] * half;
            errs[i] = ((kron[i] - gauss[i]) * half).abs();
        }
        (vals, errs)
    };

    let (v0, e0) = panel(a, b);
    let mut segs = vec![Seg::<N> {
        lo: a,
        hi: b,
        vals: v0,
        errs: e0,
    }];

    for iter in 0..MAX_SUBDIVISIONS {
        let mut total = [0.0; N];
        let mut err = [0.0; N];
        for s in &segs {
            for i in 0..N {
                total[i] += s.vals[i];
                err[i] += s.errs[i];
            }
        }
        let mut done = true;
        for i in 0..N {
            if err[i] > abs_tol.max(rel_tol * total[i].abs()) {
                done = false;
            }
        }
        if done {
            return (total, max_arr(&err), true);
        }
        if iter + 1 == MAX_SUBDIVISIONS {
            return (total, max_arr(&err), false);
        }
        let worst = segs
            .iter()
            .enumerate()
            .max_by(|x, y| max_arr(&x.1.errs).partial_cmp(&max_arr(&y.1.errs)).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let seg = segs.swap_remove(worst);
        let mid = 0.5 * (seg.lo + seg.hi);
        if mid <= seg.lo || mid >= seg.hi {
            segs.push(seg);
            let mut total = [0.0; N];
            let mut err = [0.0; N];
            for s in &segs {
                for i in 0..N {
                    total[i] += s.vals[i];
                    err[i] += s.errs[i];
                }
            }
            return (total, max_arr(&err), false);
        }
        let (v1, e1) = panel(seg.lo, mid);
        let (v2, e2) = panel(mid, seg.hi);
        segs.push(Seg {
            lo: seg.lo,
            hi: mid,
            vals: v1,
            errs: e1,
        });
        segs.push(Seg {
            lo: mid,
            hi: seg.hi,
            vals: v2,
            errs: e2,
        });
    }
    unreachable!()
}

fn max_arr<const N: usize>(a: &[f64; N]) -> f64 {
    a.iter().cloned().fold(0.0, f64::max)
}
