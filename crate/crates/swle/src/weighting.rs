//! The exponential weight function, its parameter transforms, and
//! hyperparameter calibration.
//!
//! Weights have the form
//!
//! ```text
//! W(y, x) = scale * exp{ theta~(x) y / phi~ + (1/phi~ - c) g(y) }
//! ```
//!
//! with `theta~(x) = xi(x' beta~)`. Multiplying a density of the family by
//! `W` yields (up to the bias adjustment `lambda* = integral of f W`) another
//! member of the same family with tilted parameters `(theta*, phi*)`; that
//! closure is what keeps every downstream quantity analytic.
//!
//! The flat-weight estimator is represented by an explicit `Mle` variant
//! rather than a hyperparameter limit, so it is exact. The `scale` factor
//! fixes the normalization convention (the estimator is invariant to it;
//! tests exercise that invariance).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{EdmFamily, FamilyId};
use crate::link::LinkSpec;
use crate::model::ParamVector;
use crate::numerics::rng::Prng;
use crate::numerics::{find_root, roots};

/// Weight-function hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightSpec {
    /// Flat weight; the estimator reduces to maximum likelihood exactly.
    Mle,
    Weighted {
        #[serde(with = "crate::serde_util::dvector")]
        beta_tilde: DVector<f64>,
        phi_tilde: f64,
        /// Positive normalization constant of the weight (1 by convention).
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_scale() -> f64 {
    1.0
}

impl WeightSpec {
    pub fn weighted(beta_tilde: DVector<f64>, phi_tilde: f64) -> Self {
        WeightSpec::Weighted {
            beta_tilde,
            phi_tilde,
            scale: 1.0,
        }
    }

    /// Intercept-only hyperparameters: `theta~` constant across covariates.
    pub fn intercept_only(
        family: &EdmFamily,
        link: &LinkSpec,
        theta_tilde: f64,
        phi_tilde: f64,
        p: usize,
    ) -> Result<Self> {
        let z = link.z_from_theta(family, theta_tilde)?;
        let mut beta = DVector::zeros(p);
        beta[0] = z;
        Ok(WeightSpec::weighted(beta, phi_tilde))
    }

    pub fn is_mle(&self) -> bool {
        matches!(self, WeightSpec::Mle)
    }

    /// The linear factor the normalization constant applies to every score;
    /// convergence thresholds are scaled by it so roots do not depend on the
    /// normalization convention.
    pub fn score_scale(&self) -> f64 {
        match self {
            WeightSpec::Mle => 1.0,
            WeightSpec::Weighted { scale, .. } => *scale,
        }
    }

    pub fn with_scale(self, scale: f64) -> Self {
        match self {
            WeightSpec::Mle => WeightSpec::Mle,
            WeightSpec::Weighted {
                beta_tilde,
                phi_tilde,
                ..
            } => WeightSpec::Weighted {
                beta_tilde,
                phi_tilde,
                scale,
            },
        }
    }

    /// Resolve the observation-level tilt at covariate row `x`.
    pub fn tilt(&self, family: &EdmFamily, link: &LinkSpec, x: &DVector<f64>) -> Tilt {
        match self {
            WeightSpec::Mle => Tilt {
                theta_shift: 0.0,
                inv_phi_shift: 0.0,
                log_scale: 0.0,
            },
            WeightSpec::Weighted {
                beta_tilde,
                phi_tilde,
                scale,
            } => {
                let theta_tilde = link.xi(family, x.dot(beta_tilde));
                Tilt {
                    theta_shift: theta_tilde / phi_tilde,
                    inv_phi_shift: 1.0 / phi_tilde - family.c(),
                    log_scale: scale.ln(),
                }
            }
        }
    }
}

/// Per-observation tilt: everything the weight contributes to a single
/// observation's likelihood algebra. Flat weight is all-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    /// `theta~ / phi~`
    pub theta_shift: f64,
    /// `1/phi~ - c`
    pub inv_phi_shift: f64,
    /// log of the weight normalization constant
    pub log_scale: f64,
}

impl Tilt {
    pub fn is_flat(&self) -> bool {
        self.theta_shift == 0.0 && self.inv_phi_shift == 0.0 && self.log_scale == 0.0
    }

    /// `W(y)` at this covariate row.
    pub fn weight(&self, family: &EdmFamily, y: f64) -> f64 {
        if self.is_flat() {
            return 1.0;
        }
        (self.theta_shift * y + self.inv_phi_shift * family.g_stat(y) + self.log_scale).exp()
    }

    /// `kappa(theta) = (c - 1/phi~) theta + theta~/phi~`, the sensitivity of
    /// the tilted canonical parameter to the dispersion; zero when flat.
    pub fn kappa(&self, theta: f64) -> f64 {
        -self.inv_phi_shift * theta + self.theta_shift
    }

    /// Tilted parameters after multiplying by one copy of the weight.
    pub fn transform(&self, family: &EdmFamily, theta: f64, phi: f64) -> Result<(f64, f64)> {
        transform_shifted(family, theta, phi, self.theta_shift, self.inv_phi_shift)
    }

    /// Tilted parameters after two copies of the weight (the squared-score
    /// algebra); the `(theta**, phi**)` pair.
    pub fn transform_twice(&self, family: &EdmFamily, theta: f64, phi: f64) -> Result<(f64, f64)> {
        transform_shifted(
            family,
            theta,
            phi,
            2.0 * self.theta_shift,
            2.0 * self.inv_phi_shift,
        )
    }

    /// `log lambda*` for one copy of the weight.
    pub fn log_bias_adjustment(
        &self,
        family: &EdmFamily,
        theta: f64,
        phi: f64,
        theta_t: f64,
        phi_t: f64,
    ) -> f64 {
        family.cumulant(theta_t) / phi_t - family.disp_norm(phi_t)
            - family.cumulant(theta) / phi
            + family.disp_norm(phi)
            + self.log_scale
    }
}

/// Tilt a parameter pair by combined shifts; fails when the result leaves
/// the family's valid region.
pub fn transform_shifted(
    family: &EdmFamily,
    theta: f64,
    phi: f64,
    theta_shift: f64,
    inv_phi_shift: f64,
) -> Result<(f64, f64)> {
    let inv_phi_t = 1.0 / phi + inv_phi_shift;
    if !(inv_phi_t > 0.0) {
        return Err(Error::Calibration {
            message: format!(
                "tilted dispersion invalid: 1/phi* = {inv_phi_t} (phi = {phi}, shift = {inv_phi_shift})"
            ),
        });
    }
    let phi_t = 1.0 / inv_phi_t;
    let theta_t = (theta / phi + theta_shift) * phi_t;
    if !family.theta_valid(theta_t) {
        return Err(Error::Calibration {
            message: format!(
                "tilted canonical parameter invalid for {}: theta* = {theta_t}",
                family.name()
            ),
        });
    }
    Ok((theta_t, phi_t))
}

/// The tilted parameter pairs for one and two copies of the weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedParams {
    pub theta_star: f64,
    pub phi_star: f64,
    pub theta_2star: f64,
    pub phi_2star: f64,
}

/// Tilted parameters at covariate row `x`. Flat weight returns the inputs.
pub fn transform(
    family: &EdmFamily,
    link: &LinkSpec,
    theta: f64,
    phi: f64,
    spec: &WeightSpec,
    x: &DVector<f64>,
) -> Result<TransformedParams> {
    family.check_theta(theta)?;
    family.check_phi(phi)?;
    let tilt = spec.tilt(family, link, x);
    let (theta_star, phi_star) = tilt.transform(family, theta, phi)?;
    let (theta_2star, phi_2star) = tilt.transform_twice(family, theta, phi)?;
    Ok(TransformedParams {
        theta_star,
        phi_star,
        theta_2star,
        phi_2star,
    })
}

/// Bias adjustment `lambda* = integral of f(.; theta, phi) W(., x)`.
pub fn bias_adjustment(
    family: &EdmFamily,
    link: &LinkSpec,
    theta: f64,
    phi: f64,
    spec: &WeightSpec,
    x: &DVector<f64>,
) -> Result<f64> {
    family.check_theta(theta)?;
    family.check_phi(phi)?;
    let tilt = spec.tilt(family, link, x);
    let (theta_star, phi_star) = tilt.transform(family, theta, phi)?;
    let log_lambda = tilt.log_bias_adjustment(family, theta, phi, theta_star, phi_star);
    if log_lambda > 700.0 {
        return Err(Error::Overflow {
            exponent: log_lambda,
        });
    }
    Ok(log_lambda.exp())
}

/// Evaluate the weight function at `(y, x)`.
pub fn weight_eval(
    family: &EdmFamily,
    link: &LinkSpec,
    spec: &WeightSpec,
    y: f64,
    x: &DVector<f64>,
) -> f64 {
    spec.tilt(family, link, x).weight(family, y)
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Knobs for the Monte Carlo calibrator.
#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    /// Monte Carlo sample size (antithetic pairs, so effectively `mc_size` draws).
    pub mc_size: usize,
    pub seed: u64,
    /// Fixed `theta~` for the families whose free hyperparameter is `phi~`
    /// (normal, inverse Gaussian). Default derives it from the model mean.
    pub theta_tilde: Option<f64>,
    /// Tolerance on the weight-ratio residual.
    pub ratio_tol: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            mc_size: 1_000_000,
            seed: 0x5157_4c45,
            theta_tilde: None,
            ratio_tol: 1e-3,
        }
    }
}

/// Shared state for calibrating several `delta` targets against one model:
/// the Monte Carlo response sample and its upper quantile threshold.
///
/// The sampling model and the model whose weight form is being calibrated
/// usually coincide; cross-family runs (misspecified fits) sample from one
/// family and shape the weight for another.
pub struct CompleteCalibrator {
    family: EdmFamily,
    link: LinkSpec,
    ys: Vec<f64>,
    q_alpha: f64,
    theta_tilde_default: f64,
    p: usize,
    ratio_tol: f64,
}

impl CompleteCalibrator {
    /// Draw the calibration sample from the given model mixed over the rows
    /// of `x_sample`. Antithetic inverse-CDF pairs share a covariate row.
    pub fn new(
        family: &EdmFamily,
        link: &LinkSpec,
        params: &ParamVector,
        x_sample: &DMatrix<f64>,
        alpha: f64,
        opts: &CalibrationOptions,
    ) -> Result<Self> {
        Self::new_cross(family, link, params, family, link, x_sample, alpha, opts)
    }

    /// Cross-model form: sample responses from `(gen_family, gen_link,
    /// gen_params)`, calibrate the weight of `(weight_family, weight_link)`.
    /// Draws outside the weight family's support are discarded (they can
    /// never enter that family's fit).
    #[allow(clippy::too_many_arguments)]
    pub fn new_cross(
        gen_family: &EdmFamily,
        gen_link: &LinkSpec,
        gen_params: &ParamVector,
        weight_family: &EdmFamily,
        weight_link: &LinkSpec,
        x_sample: &DMatrix<f64>,
        alpha: f64,
        opts: &CalibrationOptions,
    ) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Precondition(format!("alpha = {alpha} not in (0,1)")));
        }
        gen_params.validate(gen_family, gen_link, x_sample)?;
        let mut rng = Prng::new(opts.seed);
        let pairs = opts.mc_size.div_ceil(2);
        let mut ys = Vec::with_capacity(2 * pairs);
        let n_rows = x_sample.nrows();
        let support = weight_family.support();
        for _ in 0..pairs {
            let i = (rng.uniform() * n_rows as f64) as usize % n_rows;
            let z = x_sample.row(i).transpose().dot(&gen_params.beta);
            let theta = gen_link.xi(gen_family, z);
            let u = rng.uniform().clamp(1e-12, 1.0 - 1e-12);
            for y in [
                inverse_cdf(gen_family, theta, gen_params.phi, u),
                inverse_cdf(gen_family, theta, gen_params.phi, 1.0 - u),
            ] {
                if support.contains(y) {
                    ys.push(y);
                }
            }
        }
        if ys.len() < 1000 {
            return Err(Error::Calibration {
                message: "calibration sample nearly empty after support filtering".into(),
            });
        }
        let mut sorted = ys.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q_alpha = quantile_type7(&sorted, alpha);
        let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
        let theta_tilde_default = opts.theta_tilde.unwrap_or(match weight_family.id {
            FamilyId::Gamma => f64::NAN, // free parameter for gamma
            FamilyId::Normal => mean_y,
            FamilyId::InverseGaussian => -0.5 / (mean_y * mean_y),
        });
        Ok(CompleteCalibrator {
            family: *weight_family,
            link: *weight_link,
            ys,
            q_alpha,
            theta_tilde_default,
            p: x_sample.ncols(),
            ratio_tol: opts.ratio_tol,
        })
    }

    /// Average weight in the upper tail over the overall average weight,
    /// evaluated at a candidate free hyperparameter.
    fn weight_ratio(&self, free: f64) -> f64 {
        let tilt = self.tilt_for(free);
        // normalize exponents to dodge overflow; the ratio is scale free
        let mut max_e = f64::NEG_INFINITY;
        let exps: Vec<f64> = self
            .ys
            .iter()
            .map(|&y| {
                let e = tilt.theta_shift * y + tilt.inv_phi_shift * self.family.g_stat(y);
                if e > max_e {
                    max_e = e;
                }
                e
            })
            .collect();
        let mut sum_w = 0.0;
        let mut sum_w_tail = 0.0;
        let mut n_tail = 0usize;
        for (e, &y) in exps.iter().zip(self.ys.iter()) {
            let w = (e - max_e).exp();
            sum_w += w;
            if y > self.q_alpha {
                sum_w_tail += w;
                n_tail += 1;
            }
        }
        if n_tail == 0 {
            return f64::NAN;
        }
        (sum_w_tail / n_tail as f64) / (sum_w / self.ys.len() as f64)
    }

    fn tilt_for(&self, free: f64) -> Tilt {
        match self.family.id {
            FamilyId::Gamma => Tilt {
                // phi~ = 1 makes the tilt purely exponential in y
                theta_shift: free,
                inv_phi_shift: 1.0 - self.family.c(),
                log_scale: 0.0,
            },
            FamilyId::Normal | FamilyId::InverseGaussian => Tilt {
                theta_shift: self.theta_tilde_default / free,
                inv_phi_shift: 1.0 / free - self.family.c(),
                log_scale: 0.0,
            },
        }
    }

    /// Solve the ratio equation for one `delta`.
    pub fn solve(&self, delta: f64) -> Result<WeightSpec> {
        if !(0.0 < delta && delta <= 1.0) {
            return Err(Error::Precondition(format!(
                "delta = {delta} not in (0, 1]"
            )));
        }
        if delta == 1.0 {
            return Ok(WeightSpec::Mle);
        }
        // search in s-space: gamma free = -exp(s), others free = exp(s)
        let free_of = |s: f64| match self.family.id {
            FamilyId::Gamma => -s.exp(),
            _ => s.exp(),
        };
        let obj = |s: f64| {
            let r = self.weight_ratio(free_of(s));
            r - delta
        };
        let root_s = roots::find_root_scan(obj, -18.0, 14.0, 96, 1e-11).map_err(|_| {
            Error::Calibration {
                message: format!(
                    "no hyperparameter bracketed for delta = {delta} over free in [{}, {}]",
                    free_of(-18.0),
                    free_of(14.0)
                ),
            }
        })?;
        let free = free_of(root_s);
        let achieved = self.weight_ratio(free);
        if (achieved - delta).abs() > self.ratio_tol {
            return Err(Error::Calibration {
                message: format!(
                    "ratio residual {} exceeds tolerance at delta = {delta}",
                    achieved - delta
                ),
            });
        }
        self.spec_for(free)
    }

    fn spec_for(&self, free: f64) -> Result<WeightSpec> {
        match self.family.id {
            FamilyId::Gamma => {
                WeightSpec::intercept_only(&self.family, &self.link, free, 1.0, self.p)
            }
            FamilyId::Normal | FamilyId::InverseGaussian => WeightSpec::intercept_only(
                &self.family,
                &self.link,
                self.theta_tilde_default,
                free,
                self.p,
            ),
        }
    }

    pub fn q_alpha(&self) -> f64 {
        self.q_alpha
    }

    /// The free hyperparameter value a given spec corresponds to (test hook).
    pub fn solve_free(&self, delta: f64) -> Result<f64> {
        match self.solve(delta)? {
            WeightSpec::Mle => Ok(f64::NAN),
            WeightSpec::Weighted {
                beta_tilde,
                phi_tilde,
                ..
            } => match self.family.id {
                FamilyId::Gamma => Ok(self.link.xi(&self.family, beta_tilde[0])),
                _ => Ok(phi_tilde),
            },
        }
    }
}

/// Calibrate one spec against a known model with complete data.
pub fn calibrate_complete(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    x_sample: &DMatrix<f64>,
    alpha: f64,
    delta: f64,
    opts: &CalibrationOptions,
) -> Result<WeightSpec> {
    if delta == 1.0 {
        return Ok(WeightSpec::Mle);
    }
    CompleteCalibrator::new(family, link, params, x_sample, alpha, opts)?.solve(delta)
}

fn inverse_cdf(family: &EdmFamily, theta: f64, phi: f64, u: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    match family.id {
        FamilyId::Gamma => {
            let shape = 1.0 / phi;
            let rate = -theta / phi;
            statrs::distribution::Gamma::new(shape, rate)
                .unwrap()
                .inverse_cdf(u)
        }
        FamilyId::Normal => statrs::distribution::Normal::new(theta, phi.sqrt())
            .unwrap()
            .inverse_cdf(u),
        FamilyId::InverseGaussian => {
            // bracketed inversion of the closed-form CDF
            let mu = family.mean(theta);
            let mut hi = mu;
            while family.cdf_point(theta, phi, hi) < u {
                hi *= 2.0;
                if hi > 1e12 {
                    break;
                }
            }
            let mut lo = mu;
            while family.cdf_point(theta, phi, lo) > u {
                lo *= 0.5;
                if lo < 1e-12 {
                    break;
                }
            }
            find_root(
                |y| family.cdf_point(theta, phi, y) - u,
                lo,
                hi,
                1e-12,
            )
            .unwrap_or(mu)
        }
    }
}

/// Calibrate against a fitted model on censored/truncated records via the
/// semi-analytic tail-weight ratio (plug-in CDF averages).
pub fn calibrate_censored(
    family: &EdmFamily,
    link: &LinkSpec,
    fitted: &ParamVector,
    records: &[crate::censtrun::ObservationRecord],
    alpha: f64,
    delta: f64,
    theta_tilde: Option<f64>,
) -> Result<WeightSpec> {
    use crate::censtrun::Outcome;
    use crate::interval::Interval;

    if !(0.0 < delta && delta <= 1.0) {
        return Err(Error::Precondition(format!("delta = {delta} not in (0,1]")));
    }
    if delta == 1.0 {
        return Ok(WeightSpec::Mle);
    }
    if records.is_empty() {
        return Err(Error::Precondition("no records".into()));
    }
    let mut exact: Vec<f64> = records
        .iter()
        .filter_map(|r| match r.outcome {
            Outcome::Exact(y) => Some(y),
            Outcome::CensoredIn(_) => None,
        })
        .collect();
    if exact.is_empty() {
        return Err(Error::Precondition(
            "calibration needs at least one uncensored response".into(),
        ));
    }
    exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q_alpha = quantile_type7(&exact, alpha);

    let p = records[0].x.len();
    let mean_y = exact.iter().sum::<f64>() / exact.len() as f64;
    let theta_tilde_default = theta_tilde.unwrap_or(match family.id {
        FamilyId::Gamma => f64::NAN,
        FamilyId::Normal => mean_y,
        FamilyId::InverseGaussian => -0.5 / (mean_y * mean_y),
    });

    // per-record canonical parameters at the plug-in fit
    let thetas: Vec<f64> = records
        .iter()
        .map(|r| fitted.theta_at(family, link, &r.x))
        .collect();

    let ratio = |free: f64| -> f64 {
        let tilt = match family.id {
            FamilyId::Gamma => Tilt {
                theta_shift: free,
                inv_phi_shift: 1.0 - family.c(),
                log_scale: 0.0,
            },
            _ => Tilt {
                theta_shift: theta_tilde_default / free,
                inv_phi_shift: 1.0 / free - family.c(),
                log_scale: 0.0,
            },
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for (rec, &theta) in records.iter().zip(&thetas) {
            let Ok((theta_t, phi_t)) = tilt.transform(family, theta, fitted.phi) else {
                return f64::NAN;
            };
            let log_lambda = tilt.log_bias_adjustment(family, theta, fitted.phi, theta_t, phi_t);
            if log_lambda > 650.0 {
                return f64::NAN;
            }
            let lambda = log_lambda.exp();
            let trunc = rec.scheme.truncation;
            let f_t = family.cdf_unchecked(theta, fitted.phi, &trunc);
            let fs_t = family.cdf_unchecked(theta_t, phi_t, &trunc);
            if f_t <= 0.0 {
                continue;
            }
            den += lambda * fs_t / f_t;
            let tail = Interval::new(q_alpha, f64::INFINITY).intersect(&trunc);
            let f_q = family.cdf_unchecked(theta, fitted.phi, &tail);
            let fs_q = family.cdf_unchecked(theta_t, phi_t, &tail);
            if f_q > 0.0 {
                num += lambda * fs_q / f_q;
            }
        }
        num / den
    };

    let free_of = |s: f64| match family.id {
        FamilyId::Gamma => -s.exp(),
        _ => s.exp(),
    };
    let root_s = roots::find_root_scan(|s| ratio(free_of(s)) - delta, -18.0, 14.0, 96, 1e-11)
        .map_err(|_| Error::Calibration {
            message: format!(
                "no hyperparameter bracketed for delta = {delta} (censored calibration)"
            ),
        })?;
    let free = free_of(root_s);
    match family.id {
        FamilyId::Gamma => WeightSpec::intercept_only(family, link, free, 1.0, p),
        _ => WeightSpec::intercept_only(family, link, theta_tilde_default, free, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_type7_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_eq!(quantile_type7(&v, 1.0), 4.0);
        assert!((quantile_type7(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_type7(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn mle_tilt_is_flat() {
        let fam = EdmFamily::gamma();
        let link = LinkSpec::Log;
        let x = DVector::from_vec(vec![1.0, 0.3]);
        let tilt = WeightSpec::Mle.tilt(&fam, &link, &x);
        assert!(tilt.is_flat());
        assert_eq!(tilt.weight(&fam, 2.0), 1.0);
        assert_eq!(tilt.kappa(-1.0), 0.0);
    }

    #[test]
    fn transform_examples() {
        // gamma with phi~ = 1: phi* = phi, theta* = theta + theta~ * phi
        let fam = EdmFamily::gamma();
        let link = LinkSpec::Canonical;
        let spec = WeightSpec::intercept_only(&fam, &link, -0.5, 1.0, 1).unwrap();
        let x = DVector::from_vec(vec![1.0]);
        let t = transform(&fam, &link, -1.0, 0.5, &spec, &x).unwrap();
        assert!((t.theta_star - (-1.25)).abs() < 1e-12);
        assert!((t.phi_star - 0.5).abs() < 1e-12);

        // normal with theta~ = 0, phi~ = 2: phi* = (1/phi + 1/2)^-1
        let fam = EdmFamily::normal();
        let spec = WeightSpec::intercept_only(&fam, &link, 0.0, 2.0, 1).unwrap();
        let t = transform(&fam, &link, 0.0, 0.5, &spec, &x).unwrap();
        assert!((t.theta_star - 0.0).abs() < 1e-12);
        assert!((t.phi_star - 0.4).abs() < 1e-12);

        // flat weight returns the inputs unchanged
        let t = transform(&fam, &link, 0.3, 0.7, &WeightSpec::Mle, &x).unwrap();
        assert_eq!((t.theta_star, t.phi_star), (0.3, 0.7));
        assert_eq!((t.theta_2star, t.phi_2star), (0.3, 0.7));
    }

    #[test]
    fn transform_rejects_invalid_region() {
        // a strong positive tilt pushes the gamma canonical parameter past zero
        let fam = EdmFamily::gamma();
        let link = LinkSpec::Canonical;
        let spec = WeightSpec::intercept_only(&fam, &link, -0.1, 1.0, 1).unwrap();
        // theta/phi + theta~ = -0.2/2 + ... stays negative; use explicit shift instead
        let r = transform_shifted(&fam, -0.1, 1.0, 0.5, 0.0);
        assert!(r.is_err());
        let _ = spec;
    }

    #[test]
    fn weight_eval_examples() {
        let x = DVector::from_vec(vec![1.0]);
        let gamma = EdmFamily::gamma();
        let spec = WeightSpec::intercept_only(&gamma, &LinkSpec::Canonical, -0.5, 1.0, 1).unwrap();
        let w = weight_eval(&gamma, &LinkSpec::Canonical, &spec, 2.0, &x);
        assert!((w - (-1.0f64).exp()).abs() < 1e-12);

        let ig = EdmFamily::inverse_gaussian();
        let spec = WeightSpec::intercept_only(&ig, &LinkSpec::Canonical, -2.0, 1.0, 1).unwrap();
        let w = weight_eval(&ig, &LinkSpec::Canonical, &spec, 1.0, &x);
        assert!((w - (-2.5f64).exp()).abs() < 1e-12);

        assert_eq!(
            weight_eval(&ig, &LinkSpec::Canonical, &WeightSpec::Mle, 3.0, &x),
            1.0
        );
    }

    #[test]
    fn bias_adjustment_of_flat_weight_is_one() {
        let fam = EdmFamily::normal();
        let x = DVector::from_vec(vec![1.0]);
        let lambda =
            bias_adjustment(&fam, &LinkSpec::Canonical, 0.3, 0.5, &WeightSpec::Mle, &x).unwrap();
        assert_eq!(lambda, 1.0);
    }
}
