//! Regression links.
//!
//! The canonical parameter of observation `i` is `theta_i = xi(x_i' beta)`.
//! `Canonical` means `xi` is the identity; `Log` means the mean is
//! `exp(x' beta)`, which makes `xi` family specific.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{EdmFamily, FamilyId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkSpec {
    Canonical,
    Log,
}

impl LinkSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LinkSpec::Canonical => "canonical",
            LinkSpec::Log => "log",
        }
    }

    pub fn is_canonical(&self) -> bool {
        matches!(self, LinkSpec::Canonical)
    }

    /// `theta = xi(z)` at linear predictor `z`.
    pub fn xi(&self, family: &EdmFamily, z: f64) -> f64 {
        match self {
            LinkSpec::Canonical => z,
            LinkSpec::Log => match family.id {
                // mean exp(z) back-solved through A'
                FamilyId::Gamma => -(-z).exp(),
                FamilyId::Normal => z.exp(),
                FamilyId::InverseGaussian => -0.5 * (-2.0 * z).exp(),
            },
        }
    }

    /// `xi'(z)`.
    pub fn xi_prime(&self, family: &EdmFamily, z: f64) -> f64 {
        match self {
            LinkSpec::Canonical => 1.0,
            LinkSpec::Log => match family.id {
                FamilyId::Gamma => (-z).exp(),
                FamilyId::Normal => z.exp(),
                FamilyId::InverseGaussian => (-2.0 * z).exp(),
            },
        }
    }

    /// Inverse mapping `z = xi^{-1}(theta)`; used to seed intercept-only
    /// weight hyperparameters and initial values.
    pub fn z_from_theta(&self, family: &EdmFamily, theta: f64) -> Result<f64> {
        match self {
            LinkSpec::Canonical => Ok(theta),
            LinkSpec::Log => match family.id {
                FamilyId::Gamma => {
                    if theta >= 0.0 {
                        return Err(Error::Domain {
                            param: "theta",
                            value: theta,
                            constraint: "theta < 0 for gamma log link",
                        });
                    }
                    Ok(-(-theta).ln())
                }
                FamilyId::Normal => {
                    if theta <= 0.0 {
                        return Err(Error::Domain {
                            param: "theta",
                            value: theta,
                            constraint: "theta > 0 for normal log link",
                        });
                    }
                    Ok(theta.ln())
                }
                FamilyId::InverseGaussian => {
                    if theta >= 0.0 {
                        return Err(Error::Domain {
                            param: "theta",
                            value: theta,
                            constraint: "theta < 0 for invgauss log link",
                        });
                    }
                    Ok(-0.5 * (-2.0 * theta).ln())
                }
            },
        }
    }

    /// Linear predictor that produces mean `mu`.
    pub fn z_from_mean(&self, family: &EdmFamily, mu: f64) -> Result<f64> {
        match self {
            LinkSpec::Canonical => Ok(family.theta_from_mean(mu)),
            LinkSpec::Log => {
                if mu <= 0.0 {
                    return Err(Error::Domain {
                        param: "mu",
                        value: mu,
                        constraint: "mu > 0 for log link",
                    });
                }
                Ok(mu.ln())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd;

    #[test]
    fn log_link_recovers_mean() {
        // mean through the composed map equals exp(z)
        for (fam, zs) in [
            (EdmFamily::gamma(), vec![-1.0, 0.0, 1.5]),
            (EdmFamily::normal(), vec![-1.0, 0.3]),
            (EdmFamily::inverse_gaussian(), vec![-0.5, 0.0, 2.0]),
        ] {
            for z in zs {
                let theta = LinkSpec::Log.xi(&fam, z);
                assert!(
                    (fam.mean(theta) - z.exp()).abs() < 1e-10 * z.exp(),
                    "{} at {z}",
                    fam.name()
                );
            }
        }
    }

    #[test]
    fn xi_prime_matches_finite_differences() {
        for fam in [
            EdmFamily::gamma(),
            EdmFamily::normal(),
            EdmFamily::inverse_gaussian(),
        ] {
            for link in [LinkSpec::Canonical, LinkSpec::Log] {
                for &z in &[-1.2, -0.1, 0.0, 0.8, 2.0] {
                    let d = fd::derivative(|t| link.xi(&fam, t), z);
                    let got = link.xi_prime(&fam, z);
                    let rel = (got - d).abs() / d.abs().max(1e-8);
                    assert!(rel < 1e-6, "{} {} at {z}", fam.name(), link.name());
                }
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let fam = EdmFamily::inverse_gaussian();
        let z = 0.7;
        let theta = LinkSpec::Log.xi(&fam, z);
        assert!((LinkSpec::Log.z_from_theta(&fam, theta).unwrap() - z).abs() < 1e-12);
    }
}
