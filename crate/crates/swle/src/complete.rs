//! Complete-data SWLE: weighted score equations, the two fitting algorithms
//! (one-shot transform-and-revert for canonical links, alternating
//! IRLS/root-find otherwise), and the plug-in sandwich covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elements;
use crate::error::{Error, Result};
use crate::families::EdmFamily;
use crate::link::LinkSpec;
use crate::model::{Dataset, ParamVector};
use crate::numerics::{linalg, roots};
use crate::weighting::WeightSpec;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub init: Option<ParamVector>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            init: None,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// A converged fit: estimates, plug-in sandwich covariance, and the
/// convergence trace summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ParamVector,
    /// `(P+1) x (P+1)` plug-in sandwich covariance of the estimates.
    #[serde(with = "crate::serde_util::dmatrix")]
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    pub final_score_norm: f64,
    pub converged: bool,
    pub spec: WeightSpec,
}

impl FitResult {
    /// Standard errors from the covariance diagonal.
    pub fn standard_errors(&self) -> DVector<f64> {
        DVector::from_fn(self.params.len(), |i, _| self.covariance[(i, i)].max(0.0).sqrt())
    }
}

/// Weighted score vector `(beta part, phi part)` of length `P + 1`.
pub fn score(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    data: &Dataset,
) -> Result<DVector<f64>> {
    if data.n() == 0 {
        return Err(Error::Precondition("empty dataset".into()));
    }
    let p = data.p();
    let phi = params.phi;
    family.check_phi(phi)?;
    let mut s = DVector::zeros(p + 1);
    for i in 0..data.n() {
        let x = data.row(i);
        let y = data.y[i];
        let z = x.dot(&params.beta);
        let theta = link.xi(family, z);
        family.check_theta(theta)?;
        let tilt = spec.tilt(family, link, &x);
        let (theta_t, phi_t) = tilt.transform(family, theta, phi)?;
        let w = tilt.weight(family, y);
        let resid = y - family.mean(theta_t);
        let coef = w * resid * link.xi_prime(family, z) / phi;
        for j in 0..p {
            s[j] += coef * x[j];
        }
        s[p] += w / (phi * phi)
            * (resid * phi_t * tilt.kappa(theta)
                - (theta_t * y - family.cumulant(theta_t) + family.g_stat(y))
                + phi_t * phi_t * family.disp_norm_d1(phi_t));
    }
    Ok(s)
}

/// Weighted log-likelihood (the objective whose gradient is [`score`]);
/// useful for diagnostics and cross-checks.
pub fn weighted_log_likelihood(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    data: &Dataset,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.n() {
        let x = data.row(i);
        let y = data.y[i];
        let theta = link.xi(family, x.dot(&params.beta));
        family.check_theta(theta)?;
        let tilt = spec.tilt(family, link, &x);
        let (theta_t, phi_t) = tilt.transform(family, theta, params.phi)?;
        let w = tilt.weight(family, y);
        total += w * family.log_density(theta_t, phi_t, y);
    }
    Ok(total)
}

/// Unweighted GLM fit (IRLS for the coefficients, moment estimator for the
/// dispersion); the standard initializer and the flat-weight reference.
pub fn mle_init(family: &EdmFamily, link: &LinkSpec, data: &Dataset) -> Result<ParamVector> {
    let n = data.n();
    let p = data.p();
    if n <= p + 1 {
        return Err(Error::Precondition(format!(
            "need n > P + 1 observations ({n} <= {})",
            p + 1
        )));
    }
    for i in 0..n {
        if !family.support().contains(data.y[i]) {
            return Err(Error::InvalidData {
                row: Some(i),
                message: format!(
                    "response {} outside the {} support",
                    data.y[i],
                    family.name()
                ),
            });
        }
    }

    // start from a crude linear-predictor regression
    let z0 = DVector::from_fn(n, |i, _| {
        let y = data.y[i];
        match link {
            LinkSpec::Canonical => family.theta_from_mean(clamp_mean(family, y)),
            LinkSpec::Log => clamp_mean(family, y).max(1e-10).ln(),
        }
    });
    let xtx = data.x.transpose() * &data.x;
    let rank_probe = xtx.clone().lu();
    if rank_probe.determinant().abs() < 1e-12 * xtx.diagonal().amax().powi(p as i32) {
        // cheap full-rank heuristic; the solver below errors definitively
    }
    let xtz = data.x.transpose() * &z0;
    let mut beta = match linalg::solve_spd(&xtx, &DMatrix::from_column_slice(p, 1, xtz.as_slice()))
    {
        Ok(b) => DVector::from_column_slice(b.as_slice()),
        Err(_) => {
            return Err(Error::RankDeficient {
                rank: data.x.rank(1e-10),
                cols: p,
            })
        }
    };

    // Fisher scoring on the unweighted likelihood; phi cancels in the step
    for _ in 0..200 {
        let mut grad = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let x = data.row(i);
            let z = x.dot(&beta);
            let theta = link.xi(family, z);
            if !family.theta_valid(theta) {
                return Err(Error::Domain {
                    param: "theta",
                    value: theta,
                    constraint: "initializer left the valid region",
                });
            }
            let xi_p = link.xi_prime(family, z);
            let resid = data.y[i] - family.mean(theta);
            let wgt = family.variance_shape(theta) * xi_p * xi_p;
            for a in 0..p {
                grad[a] += resid * xi_p * x[a];
                for b in 0..p {
                    info[(a, b)] += wgt * x[a] * x[b];
                }
            }
        }
        let step = linalg::solve_spd(&info, &DMatrix::from_column_slice(p, 1, grad.as_slice()))
            .map_err(|_| Error::RankDeficient {
                rank: data.x.rank(1e-10),
                cols: p,
            })?;
        let step = DVector::from_column_slice(step.as_slice());
        let mut lam = 1.0;
        // damp into the valid region
        loop {
            let cand = &beta + lam * &step;
            let ok = (0..n).all(|i| {
                family.theta_valid(link.xi(family, data.row(i).dot(&cand)))
            });
            if ok {
                beta = cand;
                break;
            }
            lam *= 0.5;
            if lam < 1e-8 {
                break;
            }
        }
        if step.amax() * lam < 1e-12 {
            break;
        }
    }

    // Pearson moment estimator for the dispersion
    let mut pearson = 0.0;
    for i in 0..n {
        let theta = link.xi(family, data.row(i).dot(&beta));
        let resid = data.y[i] - family.mean(theta);
        pearson += resid * resid / family.variance_shape(theta);
    }
    let phi = pearson / (n - p) as f64;
    Ok(ParamVector::new(beta, phi))
}

fn clamp_mean(family: &EdmFamily, y: f64) -> f64 {
    match family.support().lo {
        lo if lo >= 0.0 => y.max(1e-8),
        _ => y,
    }
}

/// Fit the weighted-score equations.
///
/// Canonical links use the transform-and-revert shortcut: a weighted IRLS
/// solve for the tilted coefficients, a scalar root for the tilted
/// dispersion, and an exact inverse transform. Other links alternate a
/// damped Fisher-scoring update of the coefficients with a bracketed
/// dispersion root until both the parameter change and the score norm are
/// below tolerance.
pub fn fit(
    family: &EdmFamily,
    link: &LinkSpec,
    spec: &WeightSpec,
    data: &Dataset,
    options: &FitOptions,
) -> Result<FitResult> {
    let n = data.n();
    let p = data.p();
    if n <= p + 1 {
        return Err(Error::Precondition(format!(
            "need n > P + 1 observations ({n} <= {})",
            p + 1
        )));
    }
    let init = match &options.init {
        Some(i) => i.clone(),
        None => mle_init(family, link, data)?,
    };

    let params = if link.is_canonical() {
        fit_canonical(family, link, spec, data, &init, options)?
    } else {
        fit_alternating(family, link, spec, data, &init, options)?
    };

    let (params, iterations) = params;
    let s = score(family, link, &params, spec, data)?;
    let norm = s.amax();
    if norm >= options.tol.max(1e-6) * 10.0 * spec.score_scale() {
        return Err(Error::NonConvergence {
            iterations,
            final_norm: norm,
            trace: vec![norm],
        });
    }
    let covariance = sandwich_covariance_at(family, link, &params, spec, data)?;
    Ok(FitResult {
        params,
        covariance,
        iterations,
        final_score_norm: norm,
        converged: true,
        spec: spec.clone(),
    })
}

/// Canonical-link path: solve for the tilted parameters, then revert.
///
/// Under a canonical link the tilted model is again a canonical GLM with
/// coefficients `beta* = (beta/phi + beta~/phi~) phi*`, so one weighted IRLS
/// solve plus one scalar dispersion root determines the fit without outer
/// iteration.
fn fit_canonical(
    family: &EdmFamily,
    link: &LinkSpec,
    spec: &WeightSpec,
    data: &Dataset,
    init: &ParamVector,
    options: &FitOptions,
) -> Result<(ParamVector, usize)> {
    let n = data.n();
    let p = data.p();

    // coefficient shift beta~/phi~ and dispersion shift 1/phi~ - c
    let (shift_vec, inv_phi_shift) = match spec {
        WeightSpec::Mle => (DVector::zeros(p), 0.0),
        WeightSpec::Weighted {
            beta_tilde,
            phi_tilde,
            ..
        } => (beta_tilde / *phi_tilde, 1.0 / phi_tilde - family.c()),
    };
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            spec.tilt(family, link, &data.row(i))
                .weight(family, data.y[i])
        })
        .collect();

    // tilted starting point: beta* = (beta/phi + beta~/phi~) phi*
    let inv_phi_t0 = 1.0 / init.phi + inv_phi_shift;
    let mut beta_t = if inv_phi_t0 > 0.0 {
        (&init.beta / init.phi + &shift_vec) / inv_phi_t0
    } else {
        init.beta.clone()
    };
    if !(0..n).all(|i| family.theta_valid(data.row(i).dot(&beta_t))) {
        // fall back to a tiny valid tilt seed
        beta_t = DVector::from_fn(p, |j, _| {
            if j == 0 {
                family.theta_from_mean(clamp_mean(
                    family,
                    data.y.iter().sum::<f64>() / n as f64,
                ))
            } else {
                0.0
            }
        });
    }

    // weighted IRLS for the tilted coefficients
    let mut iterations = 0usize;
    for iter in 0..options.max_iter {
        iterations = iter + 1;
        let mut grad = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let x = data.row(i);
            let theta_t = x.dot(&beta_t);
            if !family.theta_valid(theta_t) {
                return Err(Error::Domain {
                    param: "theta_star",
                    value: theta_t,
                    constraint: "tilted canonical parameter left the valid region",
                });
            }
            let resid = data.y[i] - family.mean(theta_t);
            let w = weights[i];
            for a in 0..p {
                grad[a] += w * resid * x[a];
                for b in 0..p {
                    info[(a, b)] += w * family.variance_shape(theta_t) * x[a] * x[b];
                }
            }
        }
        if grad.amax() < options.tol * 1e-3 * spec.score_scale() {
            break;
        }
        let step = linalg::solve_spd(&info, &DMatrix::from_column_slice(p, 1, grad.as_slice()))?;
        let step = DVector::from_column_slice(step.as_slice());
        let mut lam = 1.0;
        loop {
            let cand = &beta_t + lam * &step;
            if (0..n).all(|i| family.theta_valid(data.row(i).dot(&cand))) {
                beta_t = cand;
                break;
            }
            lam *= 0.5;
            if lam < 1e-10 {
                return Err(Error::NonConvergence {
                    iterations,
                    final_norm: grad.amax(),
                    trace: vec![grad.amax()],
                });
            }
        }
        if step.amax() * lam < 1e-14 {
            break;
        }
    }

    // scalar root for the tilted dispersion:
    // sum_i w_i { phi*^2 b'(phi*) - [theta*_i y_i - A(theta*_i) + g(y_i)] } = 0
    let mut const_sum = 0.0;
    let mut w_sum = 0.0;
    for i in 0..n {
        let theta_t = data.row(i).dot(&beta_t);
        const_sum += weights[i]
            * (theta_t * data.y[i] - family.cumulant(theta_t) + family.g_stat(data.y[i]));
        w_sum += weights[i];
    }
    let g = |log_phi_t: f64| {
        let phi_t: f64 = log_phi_t.exp();
        phi_t * phi_t * family.disp_norm_d1(phi_t) * w_sum - const_sum
    };
    let center = (init.phi.max(1e-6)).ln();
    let phi_t = roots::find_root_scan(g, center - 8.0, center + 8.0, 64, 1e-13)?.exp();

    // revert: phi = (1/phi* - 1/phi~ + c)^-1, beta = (beta*/phi* - beta~/phi~) phi
    let inv_phi = 1.0 / phi_t - inv_phi_shift;
    if !(inv_phi > 0.0) {
        return Err(Error::Calibration {
            message: format!(
                "reverted dispersion invalid: 1/phi = {inv_phi} from phi* = {phi_t}"
            ),
        });
    }
    let phi = 1.0 / inv_phi;
    let beta = (&beta_t / phi_t - &shift_vec) * phi;
    Ok((ParamVector::new(beta, phi), iterations))
}

/// Alternating path for non-canonical links.
fn fit_alternating(
    family: &EdmFamily,
    link: &LinkSpec,
    spec: &WeightSpec,
    data: &Dataset,
    init: &ParamVector,
    options: &FitOptions,
) -> Result<(ParamVector, usize)> {
    let n = data.n();
    let p = data.p();
    let mut params = init.clone();
    let log_phi_center = params.phi.max(1e-8).ln();

    let mut iterations = 0usize;
    for iter in 0..options.max_iter {
        iterations = iter + 1;
        let prev = params.to_vector();

        // coefficient update at fixed dispersion: damped Fisher scoring on
        // the weighted score
        for _ in 0..50 {
            let s = score(family, link, &params, spec, data)?;
            let beta_score = s.rows(0, p).into_owned();
            if beta_score.amax() < options.tol * 0.1 * spec.score_scale() {
                break;
            }
            let mut info = DMatrix::<f64>::zeros(p, p);
            for i in 0..n {
                let x = data.row(i);
                let z = x.dot(&params.beta);
                let theta = link.xi(family, z);
                let tilt = spec.tilt(family, link, &x);
                let (theta_t, phi_t) = tilt.transform(family, theta, params.phi)?;
                let w = tilt.weight(family, data.y[i]);
                let xi_p = link.xi_prime(family, z);
                let coef = w * family.variance_shape(theta_t) * (phi_t / (params.phi * params.phi))
                    * xi_p
                    * xi_p;
                for a in 0..p {
                    for b in 0..p {
                        info[(a, b)] += coef * x[a] * x[b];
                    }
                }
            }
            let step =
                linalg::solve_spd(&info, &DMatrix::from_column_slice(p, 1, beta_score.as_slice()))?;
            let step = DVector::from_column_slice(step.as_slice());
            let base_norm = beta_score.amax();
            let mut lam = 1.0;
            let mut moved = false;
            for _ in 0..20 {
                let cand_beta = &params.beta + lam * &step;
                let cand = ParamVector::new(cand_beta, params.phi);
                match score(family, link, &cand, spec, data) {
                    Ok(sc) => {
                        if sc.rows(0, p).amax() < base_norm || lam < 1e-4 {
                            params = cand;
                            moved = true;
                            break;
                        }
                    }
                    Err(_) => {}
                }
                lam *= 0.5;
            }
            if !moved {
                break;
            }
        }

        // dispersion update at fixed coefficients: bracketed root on log phi
        let g = |log_phi: f64| -> f64 {
            let cand = ParamVector::new(params.beta.clone(), log_phi.exp());
            match score(family, link, &cand, spec, data) {
                Ok(s) => s[p],
                Err(_) => f64::NAN,
            }
        };
        let root = roots::find_root_scan(g, log_phi_center - 6.0, log_phi_center + 6.0, 48, 1e-12)?;
        params.phi = root.exp();

        let delta = (params.to_vector() - prev).amax();
        let s = score(family, link, &params, spec, data)?;
        if delta < options.tol && s.amax() < options.tol * spec.score_scale() {
            break;
        }
        if iter + 1 == options.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                final_norm: s.amax(),
                trace: vec![s.amax()],
            });
        }
    }
    Ok((params, iterations))
}

/// Plug-in sandwich covariance at a converged fit.
pub fn sandwich_covariance(
    family: &EdmFamily,
    link: &LinkSpec,
    fit: &FitResult,
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    if !fit.converged {
        return Err(Error::Precondition(
            "covariance requires a converged fit".into(),
        ));
    }
    sandwich_covariance_at(family, link, &fit.params, &fit.spec, data)
}

/// Plug-in covariance at explicit parameters (no converged fit required).
pub fn covariance_at_params(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    sandwich_covariance_at(family, link, params, spec, data)
}

pub(crate) fn sandwich_covariance_at(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    let (gamma, lambda) = gamma_lambda_matrices(family, link, params, spec, data)?;
    let gamma_inv = linalg::invert(&gamma, "score Jacobian (Gamma)")?;
    Ok((&gamma_inv * lambda * gamma_inv.transpose()) / data.n() as f64)
}

/// Sample-averaged expected-Jacobian and score-second-moment matrices.
pub fn gamma_lambda_matrices(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    data: &Dataset,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = data.n();
    let p = data.p();
    let mut gamma = DMatrix::zeros(p + 1, p + 1);
    let mut lambda = DMatrix::zeros(p + 1, p + 1);
    for i in 0..n {
        let x = data.row(i);
        let g = elements::gamma_block(family, link, params, spec, &x)?;
        let l = elements::lambda_block(family, link, params, spec, &x)?;
        accumulate(&mut gamma, &g, &x);
        accumulate(&mut lambda, &l, &x);
    }
    gamma /= n as f64;
    lambda /= n as f64;
    Ok((gamma, lambda))
}

fn accumulate(acc: &mut DMatrix<f64>, b: &elements::ElementBlock, x: &DVector<f64>) {
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
