//! Core parameter and data containers shared across fitting paths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::EdmFamily;
use crate::link::LinkSpec;

/// GLM parameters: regression coefficients plus a positive dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    #[serde(with = "crate::serde_util::dvector")]
    pub beta: DVector<f64>,
    pub phi: f64,
}

impl ParamVector {
    pub fn new(beta: DVector<f64>, phi: f64) -> Self {
        ParamVector { beta, phi }
    }

    pub fn from_slice(beta: &[f64], phi: f64) -> Self {
        ParamVector {
            beta: DVector::from_column_slice(beta),
            phi,
        }
    }

    /// Number of parameters, `P + 1`.
    pub fn len(&self) -> usize {
        self.beta.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flatten to `(beta_1, ..., beta_P, phi)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        v.rows_mut(0, self.beta.len()).copy_from(&self.beta);
        v[self.beta.len()] = self.phi;
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let p = v.len() - 1;
        ParamVector {
            beta: v.rows(0, p).into_owned(),
            phi: v[p],
        }
    }

    /// Canonical parameter for covariate row `x`.
    pub fn theta_at(&self, family: &EdmFamily, link: &LinkSpec, x: &DVector<f64>) -> f64 {
        link.xi(family, x.dot(&self.beta))
    }

    /// Validate `theta_i` over every design row and `phi > 0`.
    pub fn validate(
        &self,
        family: &EdmFamily,
        link: &LinkSpec,
        x: &DMatrix<f64>,
    ) -> Result<()> {
        family.check_phi(self.phi)?;
        for i in 0..x.nrows() {
            let z = x.row(i).transpose().dot(&self.beta);
            let theta = link.xi(family, z);
            family.check_theta(theta)?;
        }
        Ok(())
    }
}

/// Complete-data sample: responses plus the design matrix (one row per
/// observation, intercept column included by the caller).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::InvalidData {
                row: None,
                message: format!(
                    "response length {} does not match design rows {}",
                    y.len(),
                    x.nrows()
                ),
            });
        }
        Ok(Dataset { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }
}
