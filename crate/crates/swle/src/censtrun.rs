//! Randomly censored and truncated observations: the data model, the
//! extended score, fitting, and the per-record covariance elements.
//!
//! Each observation carries a truncation interval `T` and a censoring
//! mechanism: disjoint intervals `I_1..I_M` covering the censored part
//! `T \ U`. An exact outcome contributes a truncated-density score term; a
//! censored outcome contributes a probability-mass term weighted by the bias
//! adjustment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::complete::{FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::families::EdmFamily;
use crate::interval::Interval;
use crate::link::LinkSpec;
use crate::model::ParamVector;
use crate::numerics::{fd, integrate_many, linalg};
use crate::weighting::{Tilt, WeightSpec};

/// Truncation plus censoring layout of one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringScheme {
    /// Truncation interval `T`; the response is observed conditional on it.
    pub truncation: Interval,
    /// Disjoint censoring intervals whose union is `T \ U`.
    pub censor_intervals: Vec<Interval>,
}

impl CensoringScheme {
    /// Fully observed: `T` is the whole line, no censoring.
    pub fn complete() -> Self {
        CensoringScheme {
            truncation: Interval::full(),
            censor_intervals: Vec::new(),
        }
    }

    /// Left truncation at `t` with right censoring beyond `c`.
    pub fn left_trunc_right_cens(t: f64, c: f64) -> Self {
        CensoringScheme {
            truncation: Interval::new(t, f64::INFINITY),
            censor_intervals: vec![Interval::new(c, f64::INFINITY)],
        }
    }

    pub fn is_complete(&self) -> bool {
        self.truncation.is_full_line() && self.censor_intervals.is_empty()
    }

    /// The uncensored region `U = T \ (I_1 u ... u I_M)` as disjoint pieces.
    pub fn uncensored_pieces(&self) -> Vec<Interval> {
        let mut cuts = self.censor_intervals.clone();
        cuts.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
        let mut pieces = Vec::new();
        let mut lo = self.truncation.lo;
        for c in &cuts {
            let piece = Interval::new(lo, c.lo.min(self.truncation.hi));
            if !piece.is_empty() {
                pieces.push(piece);
            }
            lo = lo.max(c.hi);
        }
        let last = Interval::new(lo, self.truncation.hi);
        if !last.is_empty() {
            pieces.push(last);
        }
        pieces
    }

    pub fn validate(&self) -> Result<()> {
        if self.truncation.is_empty() {
            return Err(Error::Precondition("empty truncation interval".into()));
        }
        let mut sorted = self.censor_intervals.clone();
        sorted.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
        for (i, c) in sorted.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::Precondition(format!(
                    "censoring interval {i} is empty"
                )));
            }
            if !c.subset_of(&self.truncation) {
                return Err(Error::Precondition(format!(
                    "censoring interval {c} escapes the truncation interval {}",
                    self.truncation
                )));
            }
            if i > 0 && sorted[i - 1].hi > c.lo {
                return Err(Error::Precondition(format!(
                    "censoring intervals overlap: {} and {c}",
                    sorted[i - 1]
                )));
            }
        }
        Ok(())
    }
}

/// Observed outcome of a (possibly) censored response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    /// Response observed exactly (must lie in the uncensored region).
    Exact(f64),
    /// Only the index of the censoring interval containing it is known.
    CensoredIn(usize),
}

/// One incomplete observation: covariates, scheme, outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub x: DVector<f64>,
    pub scheme: CensoringScheme,
    pub outcome: Outcome,
}

impl ObservationRecord {
    pub fn exact(x: DVector<f64>, scheme: CensoringScheme, y: f64) -> Self {
        ObservationRecord {
            x,
            scheme,
            outcome: Outcome::Exact(y),
        }
    }

    pub fn censored(x: DVector<f64>, scheme: CensoringScheme, interval_index: usize) -> Self {
        ObservationRecord {
            x,
            scheme,
            outcome: Outcome::CensoredIn(interval_index),
        }
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        self.scheme.validate().map_err(|e| Error::InvalidRecord {
            index,
            message: e.to_string(),
        })?;
        match self.outcome {
            Outcome::Exact(y) => {
                if !self.scheme.truncation.contains(y)
                    || self.scheme.censor_intervals.iter().any(|c| c.contains(y))
                {
                    return Err(Error::InvalidRecord {
                        index,
                        message: format!("exact response {y} is outside the uncensored region"),
                    });
                }
            }
            Outcome::CensoredIn(m) => {
                if m >= self.scheme.censor_intervals.len() {
                    return Err(Error::InvalidRecord {
                        index,
                        message: format!(
                            "censoring index {m} out of range ({} intervals)",
                            self.scheme.censor_intervals.len()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The five truncated moment integrals of the score algebra over `region`:
///
/// ```text
/// d_theta      = E[(Y - A'(theta)) 1{region}]
/// d_phi        = E[(theta Y - A + g(Y) - phi^2 b') 1{region}]
/// d_theta2     = E[(Y - A')^2 1{region}]
/// d_theta_phi  = E[(Y - A')(theta Y - A + g - phi^2 b') 1{region}]
/// d_phi2       = E[(theta Y - A + g - phi^2 b')^2 1{region}]
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DTerms {
    pub d_theta: f64,
    pub d_phi: f64,
    pub d_theta_theta: f64,
    pub d_theta_phi: f64,
    pub d_phi_phi: f64,
}

/// Direct adaptive quadrature of the five integrand definitions.
///
/// Full-support identities (`d_theta = d_phi = 0`, `d_theta_theta = phi A''`)
/// and complement tricks are *not* applied here; this is the reference
/// mechanism, so it integrates what the definitions say.
pub fn d_terms(family: &EdmFamily, theta: f64, phi: f64, region: &Interval) -> Result<DTerms> {
    family.check_theta(theta)?;
    family.check_phi(phi)?;
    d_terms_tol(family, theta, phi, region, 1e-10, 1e-12)
}

/// D-terms with caller-chosen quadrature tolerances; the covariance assembly
/// uses a slightly looser absolute floor (its comparisons sit at 1e-6..1e-8).
fn d_terms_tol(
    family: &EdmFamily,
    theta: f64,
    phi: f64,
    region: &Interval,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<DTerms> {
    let r = region.intersect(&family.support());
    if r.is_empty() {
        return Ok(DTerms {
            d_theta: 0.0,
            d_phi: 0.0,
            d_theta_theta: 0.0,
            d_theta_phi: 0.0,
            d_phi_phi: 0.0,
        });
    }
    let mu = family.mean(theta);
    let a = family.cumulant(theta);
    let b1 = phi * phi * family.disp_norm_d1(phi);
    // density with the phi-dependent normalizer precomputed once
    let inv_phi = 1.0 / phi;
    let log_norm = -a * inv_phi + family.disp_norm(phi);
    let g_coef = inv_phi - family.c();
    let sup = family.support();
    let fam = *family;
    let components = |y: f64, out: &mut [f64; 5]| {
        let u = y - mu;
        let v = theta * y - a + fam.g_stat(y) - b1;
        out[0] = u;
        out[1] = v;
        out[2] = u * u;
        out[3] = u * v;
        out[4] = v * v;
    };
    // positive-support families integrate on the log scale, which removes
    // the lower-endpoint singularity of the g(y) components
    let (vals, err, ok) = if sup.lo == 0.0 {
        let t_lo = if r.lo <= 0.0 { f64::NEG_INFINITY } else { r.lo.ln() };
        let t_hi = if r.hi == f64::INFINITY { f64::INFINITY } else { r.hi.ln() };
        integrate_many::<5, _, _>(
            move |t| {
                let y = t.exp();
                (theta * y * inv_phi + log_norm + g_coef * fam.g_stat(y) + fam.log_base(y) + t)
                    .exp()
            },
            |t, out| components(t.exp(), out),
            t_lo,
            t_hi,
            rel_tol,
            abs_tol,
        )
    } else {
        integrate_many::<5, _, _>(
            move |y| {
                if !sup.contains(y) {
                    return 0.0;
                }
                (theta * y * inv_phi + log_norm + g_coef * fam.g_stat(y) + fam.log_base(y)).exp()
            },
            components,
            r.lo,
            r.hi,
            rel_tol,
            abs_tol,
        )
    };
    if !ok {
        return Err(Error::QuadratureNonConvergence {
            estimate: vals[0],
            error_bound: err,
        });
    }
    Ok(DTerms {
        d_theta: vals[0],
        d_phi: vals[1],
        d_theta_theta: vals[2],
        d_theta_phi: vals[3],
        d_phi_phi: vals[4],
    })
}

/// Fast evaluation of the first-order D-terms via closed-form partial
/// moments; used in the score hot path. `d_theta` is fully closed-form,
/// `d_phi` may fall back to one finite-interval quadrature for the g-moment.
fn d_first_order(family: &EdmFamily, theta: f64, phi: f64, region: &Interval) -> (f64, f64) {
    let r = region.intersect(&family.support());
    if r.is_empty() {
        return (0.0, 0.0);
    }
    let mass = family.cdf_unchecked(theta, phi, &r);
    let pm = family.partial_mean(theta, phi, &r);
    let d_theta = pm - family.mean(theta) * mass;
    let pg = family.partial_g_moment(theta, phi, &r);
    let d_phi = theta * pm - (family.cumulant(theta) + phi * phi * family.disp_norm_d1(phi)) * mass
        + pg;
    (d_theta, d_phi)
}

/// Everything about one spec's tilt at one record that the extended score
/// needs: tilted params, bias adjustment, truncation masses and their
/// log-CDF derivatives.
struct RecordCtx {
    theta: f64,
    xi_prime: f64,
    tilt: Tilt,
    theta_t: f64,
    phi_t: f64,
    lambda: f64,
    /// F(T) under the original parameters
    mass_t: f64,
    /// F*(T) under the tilted parameters
    mass_t_star: f64,
    /// d/d theta* log F*(T)
    dlog_t_theta: f64,
    /// d/d phi* log F*(T)
    dlog_t_phi: f64,
}

fn record_ctx(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    rec: &ObservationRecord,
) -> Result<RecordCtx> {
    let z = rec.x.dot(&params.beta);
    let theta = link.xi(family, z);
    if !family.theta_valid(theta) {
        return Err(Error::Domain {
            param: "theta",
            value: theta,
            constraint: "canonical parameter left the valid region",
        });
    }
    let tilt = spec.tilt(family, link, &rec.x);
    let (theta_t, phi_t) = tilt.transform(family, theta, params.phi)?;
    let lambda = tilt
        .log_bias_adjustment(family, theta, params.phi, theta_t, phi_t)
        .exp();
    let trunc = rec.scheme.truncation;
    let (mass_t, mass_t_star, dlog_t_theta, dlog_t_phi) = if trunc_covers(family, &trunc) {
        (1.0, 1.0, 0.0, 0.0)
    } else {
        let mass_t = family.cdf_unchecked(theta, params.phi, &trunc);
        if mass_t <= 0.0 {
            return Err(Error::Precondition(format!(
                "truncation region {trunc} has zero probability"
            )));
        }
        let mass_t_star = family.cdf_unchecked(theta_t, phi_t, &trunc);
        let (d_th, d_ph) = d_first_order(family, theta_t, phi_t, &trunc);
        (
            mass_t,
            mass_t_star,
            d_th / (phi_t * mass_t_star),
            -d_ph / (phi_t * phi_t * mass_t_star),
        )
    };
    Ok(RecordCtx {
        theta,
        xi_prime: link.xi_prime(family, z),
        tilt,
        theta_t,
        phi_t,
        lambda,
        mass_t,
        mass_t_star,
        dlog_t_theta,
        dlog_t_phi,
    })
}

impl RecordCtx {
    /// Maps a `(d/d theta*, d/d phi*)` pair to the `(beta, phi)` score via
    /// the chain rule, accumulating into `out` with covariates `x`.
    fn accumulate(
        &self,
        phi: f64,
        x: &DVector<f64>,
        d_theta_star: f64,
        d_phi_star: f64,
        factor: f64,
        out: &mut DVector<f64>,
    ) {
        let p = x.len();
        let ratio = self.phi_t / phi;
        let beta_coef = factor * d_theta_star * ratio * self.xi_prime;
        for j in 0..p {
            out[j] += beta_coef * x[j];
        }
        let ratio2 = ratio * ratio;
        out[p] += factor
            * (d_theta_star * ratio2 * self.tilt.kappa(self.theta) + d_phi_star * ratio2);
    }
}

/// Extended score: exact outcomes contribute weighted truncated-density
/// derivatives, censored outcomes contribute bias-adjusted probability-mass
/// derivatives.
pub fn extended_score(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    records: &[ObservationRecord],
) -> Result<DVector<f64>> {
    if records.is_empty() {
        return Err(Error::Precondition("no records".into()));
    }
    let p = records[0].x.len();
    let mut score = DVector::zeros(p + 1);
    for rec in records {
        score_one(family, link, params, spec, rec, &mut score)?;
    }
    Ok(score)
}

/// Per-record extended score contribution (exposed for outer-product tests).
pub fn score_contribution(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    rec: &ObservationRecord,
) -> Result<DVector<f64>> {
    let mut s = DVector::zeros(rec.x.len() + 1);
    score_one(family, link, params, spec, rec, &mut s)?;
    Ok(s)
}

fn score_one(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    rec: &ObservationRecord,
    out: &mut DVector<f64>,
) -> Result<()> {
    let ctx = record_ctx(family, link, params, spec, rec)?;
    let phi = params.phi;
    match rec.outcome {
        Outcome::Exact(y) => {
            let w = ctx.tilt.weight(family, y);
            // d/d theta* log f*_T(y) and d/d phi* log f*_T(y)
            let d_theta = (y - family.mean(ctx.theta_t)) / ctx.phi_t - ctx.dlog_t_theta;
            let d_phi = -(ctx.theta_t * y - family.cumulant(ctx.theta_t) + family.g_stat(y))
                / (ctx.phi_t * ctx.phi_t)
                + family.disp_norm_d1(ctx.phi_t)
                - ctx.dlog_t_phi;
            ctx.accumulate(phi, &rec.x, d_theta, d_phi, w, out);
        }
        Outcome::CensoredIn(m) => {
            let interval = rec.scheme.censor_intervals[m];
            let mass = family.cdf_unchecked(ctx.theta, phi, &interval);
            let mass_star = family.cdf_unchecked(ctx.theta_t, ctx.phi_t, &interval);
            if mass <= 0.0 || mass_star <= 0.0 {
                return Err(Error::Precondition(format!(
                    "censoring interval {interval} has zero probability"
                )));
            }
            let (d_th, d_ph) = d_first_order(family, ctx.theta_t, ctx.phi_t, &interval);
            let d_theta = d_th / (ctx.phi_t * mass_star) - ctx.dlog_t_theta;
            let d_phi = -d_ph / (ctx.phi_t * ctx.phi_t * mass_star) - ctx.dlog_t_phi;
            let factor = ctx.lambda * mass_star / mass;
            ctx.accumulate(phi, &rec.x, d_theta, d_phi, factor, out);
        }
    }
    Ok(())
}

/// Fit by damped Newton on the extended score, differentiating the score by
/// central finite differences in `(beta, log phi)`.
pub fn fit_censtrun(
    family: &EdmFamily,
    link: &LinkSpec,
    spec: &WeightSpec,
    records: &[ObservationRecord],
    options: &FitOptions,
) -> Result<FitResult> {
    for (i, rec) in records.iter().enumerate() {
        rec.validate(i)?;
    }
    let p = records[0].x.len();
    if records.len() <= p + 1 {
        return Err(Error::Precondition(format!(
            "need more than {} records, got {}",
            p + 1,
            records.len()
        )));
    }

    let init = match &options.init {
        Some(init) => init.clone(),
        None => initial_from_exact(family, link, records)?,
    };

    // work in (beta, log phi)
    let mut v = init.to_vector();
    v[p] = v[p].ln();
    let unpack = |v: &DVector<f64>| -> ParamVector {
        let mut params = ParamVector::from_vector(v);
        params.phi = params.phi.exp();
        params
    };

    let score_at = |v: &DVector<f64>| -> Result<DVector<f64>> {
        extended_score(family, link, &unpack(v), spec, records)
    };

    let tol = options.tol * spec.score_scale();
    let mut trace = Vec::new();
    let mut score = score_at(&v)?;
    let mut norm = score.amax();
    trace.push(norm);
    let mut jac: Option<DMatrix<f64>> = None;
    let mut iterations = 0usize;

    for iter in 0..options.max_iter {
        iterations = iter + 1;
        if norm < tol {
            break;
        }
        if jac.is_none() || iter % 4 == 0 {
            jac = Some(numeric_jacobian(&score_at, &v, &score)?);
        }
        let j = jac.as_ref().unwrap();
        let rhs = DMatrix::from_column_slice(p + 1, 1, score.as_slice());
        let step = match linalg::solve_lu(j, &rhs, "extended score Jacobian") {
            Ok(s) => DVector::from_column_slice(s.as_slice()),
            Err(_) => {
                // refresh the Jacobian once before giving up
                jac = Some(numeric_jacobian(&score_at, &v, &score)?);
                let j = jac.as_ref().unwrap();
                let s = linalg::solve_lu(j, &rhs, "extended score Jacobian")?;
                DVector::from_column_slice(s.as_slice())
            }
        };

        let mut lambda_step = 1.0;
        let mut advanced = false;
        for _ in 0..30 {
            let cand = &v - lambda_step * &step;
            match score_at(&cand) {
                Ok(s) => {
                    let n = s.amax();
                    if n < norm || lambda_step < 1e-6 {
                        v = cand;
                        score = s;
                        norm = n;
                        advanced = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            lambda_step *= 0.5;
        }
        trace.push(norm);
        if !advanced {
            // stale Jacobian is the usual culprit; rebuild and try once more
            jac = Some(numeric_jacobian(&score_at, &v, &score)?);
            let j = jac.as_ref().unwrap();
            let rhs = DMatrix::from_column_slice(p + 1, 1, score.as_slice());
            let step = linalg::solve_lu(j, &rhs, "extended score Jacobian")?;
            let step = DVector::from_column_slice(step.as_slice());
            let mut lambda_step = 1.0;
            let mut ok = false;
            for _ in 0..30 {
                let cand = &v - lambda_step * &step;
                if let Ok(s) = score_at(&cand) {
                    let n = s.amax();
                    if n < norm {
                        v = cand;
                        score = s;
                        norm = n;
                        ok = true;
                        break;
                    }
                }
                lambda_step *= 0.5;
            }
            if !ok {
                return Err(Error::NonConvergence {
                    iterations,
                    final_norm: norm,
                    trace,
                });
            }
        }
    }

    if norm >= tol {
        return Err(Error::NonConvergence {
            iterations,
            final_norm: norm,
            trace,
        });
    }

    let params = unpack(&v);
    let covariance = censtrun_covariance_at(family, link, &params, spec, records)?;
    Ok(FitResult {
        params,
        covariance,
        iterations,
        final_score_norm: norm,
        converged: true,
        spec: spec.clone(),
    })
}

fn numeric_jacobian<F>(score_at: &F, v: &DVector<f64>, _f0: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = v.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut vp = v.clone();
    for j in 0..n {
        let h = fd::central_step(v[j]);
        vp[j] = v[j] + h;
        let fp = score_at(&vp)?;
        vp[j] = v[j] - h;
        let fm = score_at(&vp)?;
        vp[j] = v[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| cols[j][i]))
}

/// Initial parameters from the exact outcomes, ignoring truncation: an
/// unweighted GLM fit is close enough for Newton to take over.
fn initial_from_exact(
    family: &EdmFamily,
    link: &LinkSpec,
    records: &[ObservationRecord],
) -> Result<ParamVector> {
    let exact: Vec<(&DVector<f64>, f64)> = records
        .iter()
        .filter_map(|r| match r.outcome {
            Outcome::Exact(y) => Some((&r.x, y)),
            Outcome::CensoredIn(_) => None,
        })
        .collect();
    let p = records[0].x.len();
    if exact.len() <= p + 1 {
        return Err(Error::Precondition(
            "too few exact observations for initialization".into(),
        ));
    }
    let n = exact.len();
    let y = DVector::from_fn(n, |i, _| exact[i].1);
    let x = DMatrix::from_fn(n, p, |i, j| exact[i].0[j]);
    let data = crate::model::Dataset::new(y, x)?;
    crate::complete::mle_init(family, link, &data)
}

/// Plug-in sandwich covariance for a converged censored/truncated fit.
pub fn censtrun_covariance(
    family: &EdmFamily,
    link: &LinkSpec,
    fit: &FitResult,
    records: &[ObservationRecord],
) -> Result<DMatrix<f64>> {
    if !fit.converged {
        return Err(Error::Precondition(
            "covariance requires a converged fit".into(),
        ));
    }
    censtrun_covariance_at(family, link, &fit.params, &fit.spec, records)
}

pub(crate) fn censtrun_covariance_at(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    records: &[ObservationRecord],
) -> Result<DMatrix<f64>> {
    let n = records.len();
    let (gamma, lambda) = gamma_lambda_matrices(family, link, params, spec, records)?;
    let gamma_inv = linalg::invert(&gamma, "censored score Jacobian (Gamma)")?;
    Ok((&gamma_inv * lambda * gamma_inv.transpose()) / n as f64)
}

/// Plug-in covariance at explicit parameters (no converged fit required);
/// exposed for cross-checks and report tooling.
pub fn covariance_at_params(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    records: &[ObservationRecord],
) -> Result<DMatrix<f64>> {
    censtrun_covariance_at(family, link, params, spec, records)
}

/// Sample-averaged expected-Jacobian and score-second-moment matrices over
/// the records.
pub fn gamma_lambda_matrices(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    records: &[ObservationRecord],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = records.len();
    let p = records[0].x.len();
    let dim = p + 1;
    let mut gamma = DMatrix::zeros(dim, dim);
    let mut lambda = DMatrix::zeros(dim, dim);
    for rec in records {
        let g = gamma_elements(family, link, params, spec, rec)?;
        let l = lambda_elements_cross(family, link, params, spec, spec, rec)?;
        accumulate_block(&mut gamma, &g, &rec.x);
        accumulate_block(&mut lambda, &l, &rec.x);
    }
    gamma /= n as f64;
    lambda /= n as f64;
    Ok((gamma, lambda))
}

/// Scalar element functions of a per-record 2x2 block: the `theta theta`
/// coefficient multiplies `x x'`, the cross terms multiply `x`, the
/// `phi phi` term is a scalar.
#[derive(Debug, Clone, Copy)]
pub struct Block2 {
    pub tt: f64,
    pub tp: f64,
    pub pt: f64,
    pub pp: f64,
}

pub(crate) fn accumulate_block(acc: &mut DMatrix<f64>, b: &Block2, x: &DVector<f64>) {
    let p = x.len();
    for i in 0..p {
        for j in 0..p {
            acc[(i, j)] += b.tt * x[i] * x[j];
        }
        acc[(i, p)] += b.tp * x[i];
        acc[(p, i)] += b.pt * x[i];
    }
    acc[(p, p)] += b.pp;
}

/// Per-record Gamma blocks and upper-triangular Lambda blocks for a whole
/// spec list, sharing the per-spec record context across pairs.
pub fn meta_record_blocks(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    specs: &[WeightSpec],
    rec: &ObservationRecord,
) -> Result<(Vec<Block2>, Vec<Vec<Option<Block2>>>)> {
    let k = specs.len();
    let mut ctxs = Vec::with_capacity(k);
    for spec in specs {
        ctxs.push(record_ctx(family, link, params, spec, rec)?);
    }
    let mut gammas = Vec::with_capacity(k);
    for ctx in &ctxs {
        gammas.push(gamma_elements_ctx(family, ctx, params.phi, rec)?);
    }
    let mut lambdas = vec![vec![None; k]; k];
    for a in 0..k {
        for b in a..k {
            lambdas[a][b] = Some(lambda_elements_ctx(
                family,
                &ctxs[a],
                &ctxs[b],
                params.phi,
                rec,
            )?);
        }
    }
    Ok((gammas, lambdas))
}

/// Expected-Jacobian elements for one record (the Gamma block), combining
/// uncensored-region integrals (P-terms) and censored-interval derivative
/// terms (Q-terms, by central finite differences in the tilted parameters).
pub fn gamma_elements(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    rec: &ObservationRecord,
) -> Result<Block2> {
    let ctx = record_ctx(family, link, params, spec, rec)?;
    gamma_elements_ctx(family, &ctx, params.phi, rec)
}

fn gamma_elements_ctx(
    family: &EdmFamily,
    ctx: &RecordCtx,
    phi: f64,
    rec: &ObservationRecord,
) -> Result<Block2> {
    let trunc = rec.scheme.truncation;
    let pieces = rec.scheme.uncensored_pieces();

    // D*-terms over U and T at the tilted parameters
    let d_u = sum_d_terms(family, ctx.theta_t, ctx.phi_t, &pieces)?;
    let mass_u_star = pieces
        .iter()
        .map(|iv| family.cdf_unchecked(ctx.theta_t, ctx.phi_t, iv))
        .sum::<f64>();

    // second-order log-CDF derivatives of F*(T) in (theta*, phi*)
    let (l_tt, l_tp, l_pp) = if ctx.mass_t_star >= 1.0 - 1e-14 && trunc_covers(family, &trunc) {
        (0.0, 0.0, 0.0)
    } else {
        let d_t = d_terms_tol(family, ctx.theta_t, ctx.phi_t, &trunc, 1e-9, 1e-11)?;
        let f = ctx.mass_t_star;
        let ft = d_t.d_theta / ctx.phi_t;
        let fp = -d_t.d_phi / (ctx.phi_t * ctx.phi_t);
        let ftt = -family.variance_shape(ctx.theta_t) / ctx.phi_t * f
            + d_t.d_theta_theta / (ctx.phi_t * ctx.phi_t);
        let ftp = -d_t.d_theta / (ctx.phi_t * ctx.phi_t)
            - d_t.d_theta_phi / (ctx.phi_t * ctx.phi_t * ctx.phi_t);
        let fpp = 2.0 * d_t.d_phi / (ctx.phi_t * ctx.phi_t * ctx.phi_t)
            + (2.0 * family.disp_norm_d1(ctx.phi_t) / ctx.phi_t + family.disp_norm_d2(ctx.phi_t))
                * f
            + d_t.d_phi_phi / (ctx.phi_t * ctx.phi_t * ctx.phi_t * ctx.phi_t);
        (
            ftt / f - (ft / f) * (ft / f),
            ftp / f - (ft / f) * (fp / f),
            fpp / f - (fp / f) * (fp / f),
        )
    };

    let lam_over_ft = ctx.lambda / ctx.mass_t;
    let p_tt = -lam_over_ft
        * (family.variance_shape(ctx.theta_t) / ctx.phi_t + l_tt)
        * mass_u_star;
    let p_tp = -lam_over_ft * (d_u.d_theta / (ctx.phi_t * ctx.phi_t) + l_tp * mass_u_star);
    let p_pp = lam_over_ft
        * (2.0 * d_u.d_phi / (ctx.phi_t * ctx.phi_t * ctx.phi_t)
            + (2.0 * family.disp_norm_d1(ctx.phi_t) / ctx.phi_t + family.disp_norm_d2(ctx.phi_t)
                - l_pp)
                * mass_u_star);

    // Q-terms: outer derivative of the censored-interval score factors,
    // taken in the tilted coordinates by central differences.
    let (q_tt, q_tp, q_pt, q_pp) =
        censored_q_terms(family, &ctx, phi, &trunc, &rec.scheme.censor_intervals)?;

    let kappa = ctx.tilt.kappa(ctx.theta);
    let r1 = ctx.phi_t / phi;
    let r2 = r1 * r1;
    let w_tt = r2 * ctx.xi_prime * ctx.xi_prime * (p_tt + q_tt);
    // the (beta, phi) element differentiates the beta score by phi: the
    // censored factor picks up an outer phi* derivative of an inner theta*
    // score (and vice versa for (phi, beta))
    let w_tp = r1 * r2 * ctx.xi_prime * (kappa * (p_tt + q_tt) + (p_tp + q_pt));
    let w_pt = r1 * r2 * ctx.xi_prime * (kappa * (p_tt + q_tt) + (p_tp + q_tp));
    let w_pp = r2 * r2
        * (kappa * kappa * (p_tt + q_tt)
            + kappa * ((p_tp + q_tp) + (p_tp + q_pt))
            + (p_pp + q_pp));
    Ok(Block2 {
        tt: w_tt,
        tp: w_tp,
        pt: w_pt,
        pp: w_pp,
    })
}

fn trunc_covers(family: &EdmFamily, trunc: &Interval) -> bool {
    let sup = family.support();
    sup.subset_of(&trunc.intersect(&sup))
}

fn sum_d_terms(
    family: &EdmFamily,
    theta: f64,
    phi: f64,
    pieces: &[Interval],
) -> Result<DTerms> {
    let mut acc = DTerms {
        d_theta: 0.0,
        d_phi: 0.0,
        d_theta_theta: 0.0,
        d_theta_phi: 0.0,
        d_phi_phi: 0.0,
    };
    for iv in pieces {
        let d = d_terms_tol(family, theta, phi, iv, 1e-9, 1e-11)?;
        acc.d_theta += d.d_theta;
        acc.d_phi += d.d_phi;
        acc.d_theta_theta += d.d_theta_theta;
        acc.d_theta_phi += d.d_theta_phi;
        acc.d_phi_phi += d.d_phi_phi;
    }
    Ok(acc)
}

/// The censored-interval contributions to the expected Jacobian. For each
/// interval the inner derivative of `log F*_T(I)` is analytic; the outer
/// derivative of `lambda* (F*(I)/F(I)) innerderiv` is taken numerically in
/// `(theta*, phi*)`, holding the weight hyperparameters fixed and mapping
/// `(theta, phi)` along the inverse tilt.
fn censored_q_terms(
    family: &EdmFamily,
    ctx: &RecordCtx,
    phi: f64,
    trunc: &Interval,
    intervals: &[Interval],
) -> Result<(f64, f64, f64, f64)> {
    if intervals.is_empty() {
        return Ok((0.0, 0.0, 0.0, 0.0));
    }
    let mut q = (0.0, 0.0, 0.0, 0.0);
    let mass_t = ctx.mass_t;

    for interval in intervals {
        // H_q(theta*, phi*) = lambda* (F*(I)/F(I)) d/dq log F*_T(I)
        let h = |theta_s: f64, phi_s: f64, which_phi: bool| -> Result<f64> {
            // invert the tilt to recover (theta, phi) for F(I) and lambda*
            let inv_phi = 1.0 / phi_s - ctx.tilt.inv_phi_shift;
            if !(inv_phi > 0.0) {
                return Err(Error::Calibration {
                    message: "tilt inversion left the dispersion domain".into(),
                });
            }
            let phi0 = 1.0 / inv_phi;
            let theta0 = (theta_s / phi_s - ctx.tilt.theta_shift) * phi0;
            if !family.theta_valid(theta0) {
                return Err(Error::Calibration {
                    message: "tilt inversion left the canonical domain".into(),
                });
            }
            let log_lambda =
                ctx.tilt
                    .log_bias_adjustment(family, theta0, phi0, theta_s, phi_s);
            let mass = family.cdf_unchecked(theta0, phi0, interval);
            let mass_star = family.cdf_unchecked(theta_s, phi_s, interval);
            if mass <= 0.0 || mass_star <= 0.0 {
                return Ok(0.0);
            }
            let (d_th_i, d_ph_i) = d_first_order(family, theta_s, phi_s, interval);
            let (d_th_t, d_ph_t) = if trunc_covers(family, trunc) {
                (0.0, 0.0)
            } else {
                d_first_order(family, theta_s, phi_s, trunc)
            };
            let mass_t_star = if trunc_covers(family, trunc) {
                1.0
            } else {
                family.cdf_unchecked(theta_s, phi_s, trunc)
            };
            let inner = if which_phi {
                -d_ph_i / (phi_s * phi_s * mass_star) + d_ph_t / (phi_s * phi_s * mass_t_star)
            } else {
                d_th_i / (phi_s * mass_star) - d_th_t / (phi_s * mass_t_star)
            };
            Ok(log_lambda.exp() * (mass_star / mass) * inner)
        };

        let mass_tr = family.cdf_unchecked(ctx.theta, phi, interval) / mass_t;

        let h_t = fd::central_step(ctx.theta_t);
        let h_p = fd::central_step(ctx.phi_t);

        // d/d theta* of [.. d/d theta* ..]
        let q_tt = (h(ctx.theta_t + h_t, ctx.phi_t, false)?
            - h(ctx.theta_t - h_t, ctx.phi_t, false)?)
            / (2.0 * h_t);
        // d/d theta* of [.. d/d phi* ..]
        let q_tp = (h(ctx.theta_t + h_t, ctx.phi_t, true)?
            - h(ctx.theta_t - h_t, ctx.phi_t, true)?)
            / (2.0 * h_t);
        // d/d phi* of [.. d/d theta* ..]
        let q_pt = (h(ctx.theta_t, ctx.phi_t + h_p, false)?
            - h(ctx.theta_t, ctx.phi_t - h_p, false)?)
            / (2.0 * h_p);
        // d/d phi* of [.. d/d phi* ..]
        let q_pp = (h(ctx.theta_t, ctx.phi_t + h_p, true)?
            - h(ctx.theta_t, ctx.phi_t - h_p, true)?)
            / (2.0 * h_p);

        q.0 += q_tt * mass_tr;
        q.1 += q_tp * mass_tr;
        q.2 += q_pt * mass_tr;
        q.3 += q_pp * mass_tr;
    }
    Ok(q)
}

/// Score second-moment elements for one record and a pair of specs; the
/// `k = k'` case is the per-fit Lambda block.
pub fn lambda_elements_cross(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec_k: &WeightSpec,
    spec_l: &WeightSpec,
    rec: &ObservationRecord,
) -> Result<Block2> {
    let ctx_k = record_ctx(family, link, params, spec_k, rec)?;
    let ctx_l = record_ctx(family, link, params, spec_l, rec)?;
    lambda_elements_ctx(family, &ctx_k, &ctx_l, params.phi, rec)
}

fn lambda_elements_ctx(
    family: &EdmFamily,
    ctx_k: &RecordCtx,
    ctx_l: &RecordCtx,
    phi: f64,
    rec: &ObservationRecord,
) -> Result<Block2> {
    let theta = ctx_k.theta;

    // combined tilt of the two weights
    let shift_t = ctx_k.tilt.theta_shift + ctx_l.tilt.theta_shift;
    let shift_p = ctx_k.tilt.inv_phi_shift + ctx_l.tilt.inv_phi_shift;
    let (theta_c, phi_c) = crate::weighting::transform_shifted(family, theta, phi, shift_t, shift_p)?;
    let log_lambda_c = family.cumulant(theta_c) / phi_c - family.disp_norm(phi_c)
        - family.cumulant(theta) / phi
        + family.disp_norm(phi)
        + ctx_k.tilt.log_scale
        + ctx_l.tilt.log_scale;
    let lambda_c = log_lambda_c.exp();

    let pieces = rec.scheme.uncensored_pieces();
    let d_u = sum_d_terms(family, theta_c, phi_c, &pieces)?;
    let mass_u_c = pieces
        .iter()
        .map(|iv| family.cdf_unchecked(theta_c, phi_c, iv))
        .sum::<f64>();

    // U-offsets for each side
    let u_offsets = |ctx: &RecordCtx| -> (f64, f64) {
        let u_tt = -(family.mean(ctx.theta_t) - family.mean(theta_c))
            - ctx.phi_t * ctx.dlog_t_theta;
        let u_pp = (ctx.theta_t - theta_c) * family.mean(theta_c)
            - (family.cumulant(ctx.theta_t) - family.cumulant(theta_c))
            - (ctx.phi_t * ctx.phi_t * family.disp_norm_d1(ctx.phi_t)
                - phi_c * phi_c * family.disp_norm_d1(phi_c))
            + ctx.phi_t * ctx.phi_t * ctx.dlog_t_phi;
        (u_tt, u_pp)
    };
    let (u_tt_k, u_pp_k) = u_offsets(ctx_k);
    let (u_tt_l, u_pp_l) = u_offsets(ctx_l);

    let lam_over_ft = lambda_c / ctx_k.mass_t;

    // R terms: uncensored-region integrals under the doubly tilted density
    let r_tt = lam_over_ft / (ctx_k.phi_t * ctx_l.phi_t)
        * (d_u.d_theta_theta
            + (u_tt_k + u_tt_l) * d_u.d_theta
            + u_tt_k * u_tt_l * mass_u_c);
    // R_theta(k) phi(l): inner pairing of side k's theta-score with side l's phi-score
    let r_tp_kl = -lam_over_ft / (ctx_k.phi_t * ctx_l.phi_t * ctx_l.phi_t)
        * (d_u.d_theta_phi
            + u_tt_k * d_u.d_phi
            + (ctx_l.theta_t - theta_c) * d_u.d_theta_theta
            + ((ctx_l.theta_t - theta_c) * u_tt_k + u_pp_l) * d_u.d_theta
            + u_tt_k * u_pp_l * mass_u_c);
    let r_tp_lk = -lam_over_ft / (ctx_l.phi_t * ctx_k.phi_t * ctx_k.phi_t)
        * (d_u.d_theta_phi
            + u_tt_l * d_u.d_phi
            + (ctx_k.theta_t - theta_c) * d_u.d_theta_theta
            + ((ctx_k.theta_t - theta_c) * u_tt_l + u_pp_k) * d_u.d_theta
            + u_tt_l * u_pp_k * mass_u_c);
    let r_pp = lam_over_ft
        / (ctx_k.phi_t * ctx_k.phi_t * ctx_l.phi_t * ctx_l.phi_t)
        * (d_u.d_phi_phi
            + (ctx_k.theta_t - theta_c) * (ctx_l.theta_t - theta_c) * d_u.d_theta_theta
            + ((ctx_k.theta_t - theta_c) + (ctx_l.theta_t - theta_c)) * d_u.d_theta_phi
            + (u_pp_k + u_pp_l) * d_u.d_phi
            + ((ctx_l.theta_t - theta_c) * u_pp_k + (ctx_k.theta_t - theta_c) * u_pp_l)
                * d_u.d_theta
            + u_pp_k * u_pp_l * mass_u_c);

    // S terms: censored-interval mass products
    let mut s_tt = 0.0;
    let mut s_tp_kl = 0.0;
    let mut s_tp_lk = 0.0;
    let mut s_pp = 0.0;
    for interval in &rec.scheme.censor_intervals {
        let mass = family.cdf_unchecked(theta, phi, interval);
        if mass <= 0.0 {
            continue;
        }
        let mass_tr = mass / ctx_k.mass_t;
        // a tilted interval mass that underflows to zero contributes nothing:
        // the squared mass factor vanishes faster than the log-derivative grows
        let side = |ctx: &RecordCtx| -> (f64, f64, f64) {
            let m_star = family.cdf_unchecked(ctx.theta_t, ctx.phi_t, interval);
            if !(m_star > 1e-300) {
                return (0.0, 0.0, 0.0);
            }
            let (d_th, d_ph) = d_first_order(family, ctx.theta_t, ctx.phi_t, interval);
            let g_t = d_th / (ctx.phi_t * m_star) - ctx.dlog_t_theta;
            let g_p = -d_ph / (ctx.phi_t * ctx.phi_t * m_star) - ctx.dlog_t_phi;
            (ctx.lambda * m_star / mass, g_t, g_p)
        };
        let (f_k, gt_k, gp_k) = side(ctx_k);
        let (f_l, gt_l, gp_l) = side(ctx_l);
        let w = f_k * f_l * mass_tr;
        s_tt += w * gt_k * gt_l;
        s_tp_kl += w * gt_k * gp_l;
        s_tp_lk += w * gt_l * gp_k;
        s_pp += w * gp_k * gp_l;
    }

    let kappa_k = ctx_k.tilt.kappa(theta);
    let kappa_l = ctx_l.tilt.kappa(theta);
    let rk = ctx_k.phi_t / phi;
    let rl = ctx_l.phi_t / phi;
    let xi2 = ctx_k.xi_prime * ctx_k.xi_prime;

    let tt = rk * rl * xi2 * (r_tt + s_tt);
    let tp = rk * rl * rl * ctx_k.xi_prime * (kappa_l * (r_tt + s_tt) + (r_tp_kl + s_tp_kl));
    let pt = rl * rk * rk * ctx_k.xi_prime * (kappa_k * (r_tt + s_tt) + (r_tp_lk + s_tp_lk));
    let pp = rk * rk * rl * rl
        * (kappa_k * kappa_l * (r_tt + s_tt)
            + kappa_k * (r_tp_kl + s_tp_kl)
            + kappa_l * (r_tp_lk + s_tp_lk)
            + (r_pp + s_pp));
    Ok(Block2 { tt, tp, pt, pp })
}
