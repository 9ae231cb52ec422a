//! Exponential-dispersion families.
//!
//! Densities have the form
//!
//! ```text
//! f(y; theta, phi) = exp{ (theta*y - A(theta)) / phi + C(y, phi) }
//! C(y, phi)        = (1/phi - c) g(y) + a(y) + b(phi)
//! ```
//!
//! with mean `A'(theta)` and variance `phi * A''(theta)`. The three members
//! implemented here (Gamma, Normal, inverse Gaussian) are the ones whose
//! `C` decomposes as above, which is what makes the exponential weight tilt
//! close under multiplication.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::numerics::special::{
    digamma, gamma_p, ln_gamma, std_normal_cdf, std_normal_log_cdf, std_normal_pdf, trigamma,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyId {
    Gamma,
    Normal,
    InverseGaussian,
}

/// One exponential-dispersion family. Immutable and freely shareable; all
/// evaluations are pure functions of the arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdmFamily {
    pub id: FamilyId,
}

impl EdmFamily {
    pub fn gamma() -> Self {
        EdmFamily {
            id: FamilyId::Gamma,
        }
    }

    pub fn normal() -> Self {
        EdmFamily {
            id: FamilyId::Normal,
        }
    }

    pub fn inverse_gaussian() -> Self {
        EdmFamily {
            id: FamilyId::InverseGaussian,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.id {
            FamilyId::Gamma => "gamma",
            FamilyId::Normal => "normal",
            FamilyId::InverseGaussian => "invgauss",
        }
    }

    /// The constant `c` in the `C(y, phi)` decomposition.
    pub fn c(&self) -> f64 {
        match self.id {
            FamilyId::Gamma => 1.0,
            FamilyId::Normal | FamilyId::InverseGaussian => 0.0,
        }
    }

    /// Support of the response.
    pub fn support(&self) -> Interval {
        match self.id {
            FamilyId::Gamma | FamilyId::InverseGaussian => Interval::positive(),
            FamilyId::Normal => Interval::full(),
        }
    }

    pub fn theta_valid(&self, theta: f64) -> bool {
        theta.is_finite()
            && match self.id {
                FamilyId::Gamma | FamilyId::InverseGaussian => theta < 0.0,
                FamilyId::Normal => true,
            }
    }

    pub fn phi_valid(&self, phi: f64) -> bool {
        phi.is_finite() && phi > 0.0
    }

    pub fn check_theta(&self, theta: f64) -> Result<()> {
        if self.theta_valid(theta) {
            Ok(())
        } else {
            Err(Error::Domain {
                param: "theta",
                value: theta,
                constraint: match self.id {
                    FamilyId::Normal => "theta finite",
                    _ => "theta < 0",
                },
            })
        }
    }

    pub fn check_phi(&self, phi: f64) -> Result<()> {
        if self.phi_valid(phi) {
            Ok(())
        } else {
            Err(Error::Domain {
                param: "phi",
                value: phi,
                constraint: "phi > 0",
            })
        }
    }

    /// Cumulant function `A(theta)`.
    pub fn cumulant(&self, theta: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => -(-theta).ln(),
            FamilyId::Normal => 0.5 * theta * theta,
            FamilyId::InverseGaussian => -(-2.0 * theta).sqrt(),
        }
    }

    /// Mean function `A'(theta)`.
    pub fn mean(&self, theta: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => -1.0 / theta,
            FamilyId::Normal => theta,
            FamilyId::InverseGaussian => 1.0 / (-2.0 * theta).sqrt(),
        }
    }

    /// Variance shape `A''(theta)`; the response variance is `phi * A''(theta)`.
    pub fn variance_shape(&self, theta: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => 1.0 / (theta * theta),
            FamilyId::Normal => 1.0,
            FamilyId::InverseGaussian => (-2.0 * theta).powf(-1.5),
        }
    }

    /// Canonical parameter for a given mean (inverse of `A'`).
    pub fn theta_from_mean(&self, mu: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => -1.0 / mu,
            FamilyId::Normal => mu,
            FamilyId::InverseGaussian => -0.5 / (mu * mu),
        }
    }

    /// The statistic `g(y)` multiplying `(1/phi - c)`.
    pub fn g_stat(&self, y: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => y.ln(),
            FamilyId::Normal => -0.5 * y * y,
            FamilyId::InverseGaussian => -0.5 / y,
        }
    }

    /// The base measure term `a(y)`.
    pub fn log_base(&self, y: f64) -> f64 {
        match self.id {
            FamilyId::Gamma | FamilyId::Normal => 0.0,
            FamilyId::InverseGaussian => {
                -0.5 * (2.0 * std::f64::consts::PI * y * y * y).ln()
            }
        }
    }

    /// Dispersion normalizer `b(phi)`.
    pub fn disp_norm(&self, phi: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => {
                let inv = 1.0 / phi;
                inv * inv.ln() - ln_gamma(inv)
            }
            FamilyId::Normal => -0.5 * (2.0 * std::f64::consts::PI * phi).ln(),
            FamilyId::InverseGaussian => -0.5 * phi.ln(),
        }
    }

    /// `b'(phi)`.
    pub fn disp_norm_d1(&self, phi: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => {
                let inv = 1.0 / phi;
                (phi.ln() - 1.0 + digamma(inv)) * inv * inv
            }
            FamilyId::Normal | FamilyId::InverseGaussian => -0.5 / phi,
        }
    }

    /// `b''(phi)`.
    pub fn disp_norm_d2(&self, phi: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => {
                let inv = 1.0 / phi;
                -2.0 * inv * inv * inv * (phi.ln() - 1.0 + digamma(inv))
                    + inv * inv * inv
                    - trigamma(inv) * inv * inv * inv * inv
            }
            FamilyId::Normal | FamilyId::InverseGaussian => 0.5 / (phi * phi),
        }
    }

    /// Log density at `y`.
    pub fn log_density(&self, theta: f64, phi: f64, y: f64) -> f64 {
        if !self.support().contains(y) && !(self.id == FamilyId::Normal) {
            return f64::NEG_INFINITY;
        }
        (theta * y - self.cumulant(theta)) / phi
            + (1.0 / phi - self.c()) * self.g_stat(y)
            + self.log_base(y)
            + self.disp_norm(phi)
    }

    /// Density of the family at `y`; parameters are validated.
    pub fn density(&self, theta: f64, phi: f64, y: f64) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_phi(phi)?;
        if !self.support().contains(y) {
            return Ok(0.0);
        }
        Ok(self.log_density(theta, phi, y).exp())
    }

    /// Unchecked density for hot loops; zero outside the support.
    pub fn density_unchecked(&self, theta: f64, phi: f64, y: f64) -> f64 {
        if !self.support().contains(y) {
            return 0.0;
        }
        self.log_density(theta, phi, y).exp()
    }

    /// Point CDF `P(Y <= y)` in closed form.
    pub fn cdf_point(&self, theta: f64, phi: f64, y: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => {
                if y <= 0.0 {
                    return 0.0;
                }
                let shape = 1.0 / phi;
                let rate = -theta / phi;
                gamma_p(shape, rate * y)
            }
            FamilyId::Normal => std_normal_cdf((y - theta) / phi.sqrt()),
            FamilyId::InverseGaussian => {
                if y <= 0.0 {
                    return 0.0;
                }
                let mu = self.mean(theta);
                let lambda = 1.0 / phi;
                inverse_gaussian_cdf(y, mu, lambda)
            }
        }
    }

    /// Probability of the half-open interval `(lo, hi]`.
    pub fn cdf(&self, theta: f64, phi: f64, region: &Interval) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_phi(phi)?;
        Ok(self.cdf_unchecked(theta, phi, region))
    }

    pub fn cdf_unchecked(&self, theta: f64, phi: f64, region: &Interval) -> f64 {
        let r = region.intersect(&self.support());
        if r.is_empty() {
            return 0.0;
        }
        let hi = if r.hi == f64::INFINITY {
            1.0
        } else {
            self.cdf_point(theta, phi, r.hi)
        };
        let lo = if r.lo == f64::NEG_INFINITY || (r.lo <= 0.0 && self.support().lo == 0.0) {
            0.0
        } else {
            self.cdf_point(theta, phi, r.lo)
        };
        (hi - lo).clamp(0.0, 1.0)
    }

    /// Partial mean `E[Y 1{Y in region}]` in closed form.
    pub fn partial_mean(&self, theta: f64, phi: f64, region: &Interval) -> f64 {
        let r = region.intersect(&self.support());
        if r.is_empty() {
            return 0.0;
        }
        let upper = |y: f64| -> f64 {
            // E[Y 1{Y <= y}]
            match self.id {
                FamilyId::Gamma => {
                    let shape = 1.0 / phi;
                    let rate = -theta / phi;
                    let mu = shape / rate;
                    if y == f64::INFINITY {
                        mu
                    } else {
                        mu * gamma_p(shape + 1.0, rate * y)
                    }
                }
                FamilyId::Normal => {
                    let sd = phi.sqrt();
                    if y == f64::INFINITY {
                        theta
                    } else {
                        let z = (y - theta) / sd;
                        theta * std_normal_cdf(z) - sd * std_normal_pdf(z)
                    }
                }
                FamilyId::InverseGaussian => {
                    let mu = self.mean(theta);
                    let lambda = 1.0 / phi;
                    if y == f64::INFINITY {
                        mu
                    } else {
                        inverse_gaussian_partial_mean(y, mu, lambda)
                    }
                }
            }
        };
        let hi = upper(r.hi);
        let lo = if r.lo == f64::NEG_INFINITY || (r.lo <= 0.0 && self.support().lo == 0.0) {
            0.0
        } else {
            upper(r.lo)
        };
        hi - lo
    }

    /// Partial expectation of `g(Y)` over the region.
    ///
    /// Closed form for the normal family; the positive-support families fall
    /// back to quadrature on the finite side of the region (the identity
    /// `E[g] - tail` avoids semi-infinite panels).
    pub fn partial_g_moment(&self, theta: f64, phi: f64, region: &Interval) -> f64 {
        let r = region.intersect(&self.support());
        if r.is_empty() {
            return 0.0;
        }
        match self.id {
            FamilyId::Normal => {
                // g(y) = -y^2/2; second partial moment of a normal
                let sd = phi.sqrt();
                let second = |y: f64| -> f64 {
                    // E[Y^2 1{Y <= y}]
                    if y == f64::INFINITY {
                        theta * theta + phi
                    } else {
                        let z = (y - theta) / sd;
                        (theta * theta + phi) * std_normal_cdf(z)
                            - sd * (y + theta) * std_normal_pdf(z)
                    }
                };
                let hi = second(r.hi);
                let lo = if r.lo == f64::NEG_INFINITY {
                    0.0
                } else {
                    second(r.lo)
                };
                -0.5 * (hi - lo)
            }
            FamilyId::Gamma => {
                // integrate ln(y) f(y) on the log scale: the substitution
                // t = ln y turns the endpoint singularity into a smooth,
                // exponentially decaying integrand
                let shape = 1.0 / phi;
                let rate = -theta / phi;
                let log_norm = shape * rate.ln() - ln_gamma(shape);
                let piece = |a: f64, b: f64| -> f64 {
                    if !(a < b) {
                        return 0.0;
                    }
                    let t_lo = if a <= 0.0 { f64::NEG_INFINITY } else { a.ln() };
                    let t_hi = if b == f64::INFINITY { f64::INFINITY } else { b.ln() };
                    crate::numerics::integrate(
                        |t| {
                            let e = shape * t - rate * t.exp() + log_norm;
                            t * e.exp()
                        },
                        t_lo,
                        t_hi,
                        1e-10,
                        1e-13,
                    )
                    .value
                };
                piece(r.lo.max(0.0), r.hi)
            }
            FamilyId::InverseGaussian => {
                // g(y) f(y) dy = -f(e^t)/2 dt under t = ln y
                let mu = self.mean(theta);
                let lambda = 1.0 / phi;
                let log_norm = 0.5 * (lambda / (2.0 * std::f64::consts::PI)).ln();
                let piece = |a: f64, b: f64| -> f64 {
                    if !(a < b) {
                        return 0.0;
                    }
                    let t_lo = if a <= 0.0 { f64::NEG_INFINITY } else { a.ln() };
                    let t_hi = if b == f64::INFINITY { f64::INFINITY } else { b.ln() };
                    crate::numerics::integrate(
                        |t| {
                            let y = t.exp();
                            let d = y - mu;
                            let e = log_norm - 1.5 * t - lambda * d * d / (2.0 * mu * mu * y);
                            -0.5 * e.exp()
                        },
                        t_lo,
                        t_hi,
                        1e-10,
                        1e-13,
                    )
                    .value
                };
                piece(r.lo.max(0.0), r.hi)
            }
        }
    }

    /// Full-support expectation `E[g(Y)]` in closed form.
    pub fn mean_g(&self, theta: f64, phi: f64) -> f64 {
        match self.id {
            FamilyId::Gamma => {
                // E[ln Y] = psi(shape) - ln(rate)
                let shape = 1.0 / phi;
                let rate = -theta / phi;
                digamma(shape) - rate.ln()
            }
            FamilyId::Normal => -0.5 * (theta * theta + phi),
            FamilyId::InverseGaussian => {
                // E[1/Y] = 1/mu + 1/lambda
                let mu = self.mean(theta);
                let lambda = 1.0 / phi;
                -0.5 * (1.0 / mu + 1.0 / lambda)
            }
        }
    }
}

/// CDF of the inverse Gaussian with mean `mu`, shape `lambda`, stable in the
/// regime where `exp(2 lambda / mu)` overflows.
fn inverse_gaussian_cdf(y: f64, mu: f64, lambda: f64) -> f64 {
    let s = (lambda / y).sqrt();
    let z1 = s * (y / mu - 1.0);
    let z2 = -s * (y / mu + 1.0);
    let tail = (2.0 * lambda / mu + std_normal_log_cdf(z2)).exp();
    (std_normal_cdf(z1) + tail).clamp(0.0, 1.0)
}

/// `E[Y 1{Y <= y}]` for the inverse Gaussian.
fn inverse_gaussian_partial_mean(y: f64, mu: f64, lambda: f64) -> f64 {
    let s = (lambda / y).sqrt();
    let z1 = s * (y / mu - 1.0);
    let z2 = -s * (y / mu + 1.0);
    let tail = (2.0 * lambda / mu + std_normal_log_cdf(z2)).exp();
    (mu * (std_normal_cdf(z1) - tail)).max(0.0)
}
