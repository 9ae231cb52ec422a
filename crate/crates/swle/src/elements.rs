//! Closed-form covariance element functions for complete data.
//!
//! With complete observations every truncation/censoring correction drops
//! out and the per-observation expected-Jacobian and score-second-moment
//! blocks are explicit in the tilted parameter pairs. The cross form (two
//! different weight specs) covers the single-spec sandwich as the diagonal
//! case `k = k'`.

use nalgebra::DVector;

use crate::error::Result;
use crate::families::EdmFamily;
use crate::link::LinkSpec;
use crate::model::ParamVector;
use crate::weighting::{transform_shifted, Tilt, WeightSpec};

/// Scalar coefficients of a per-observation `(P+1) x (P+1)` block:
/// `tt` multiplies `x x'`, `tp`/`pt` multiply `x`, `pp` stands alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct ElementBlock {
    pub tt: f64,
    pub tp: f64,
    pub pt: f64,
    pub pp: f64,
}

/// Per-observation context for one weight spec at one covariate row.
#[derive(Debug, Clone, Copy)]
pub struct SpecContext {
    pub tilt: Tilt,
    pub theta_t: f64,
    pub phi_t: f64,
    pub kappa: f64,
    pub log_lambda: f64,
}

impl SpecContext {
    pub fn resolve(
        family: &EdmFamily,
        link: &LinkSpec,
        spec: &WeightSpec,
        theta: f64,
        phi: f64,
        x: &DVector<f64>,
    ) -> Result<Self> {
        let tilt = spec.tilt(family, link, x);
        let (theta_t, phi_t) = tilt.transform(family, theta, phi)?;
        Ok(SpecContext {
            tilt,
            theta_t,
            phi_t,
            kappa: tilt.kappa(theta),
            log_lambda: tilt.log_bias_adjustment(family, theta, phi, theta_t, phi_t),
        })
    }
}

/// Expected-Jacobian (Gamma) block for one observation under one spec.
pub fn gamma_block(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    x: &DVector<f64>,
) -> Result<ElementBlock> {
    let z = x.dot(&params.beta);
    let theta = link.xi(family, z);
    family.check_theta(theta)?;
    let xi_p = link.xi_prime(family, z);
    let phi = params.phi;
    let ctx = SpecContext::resolve(family, link, spec, theta, phi, x)?;
    let lambda = ctx.log_lambda.exp();
    let a2 = family.variance_shape(ctx.theta_t);
    let r = ctx.phi_t / phi;

    let w_tt = -lambda * (r / phi) * a2 * xi_p * xi_p;
    let w_tp = -lambda * (r * r / phi) * a2 * xi_p * ctx.kappa;
    let w_pp = lambda
        * (r * r * r * ctx.phi_t / phi)
        * (-a2 * ctx.kappa * ctx.kappa / ctx.phi_t
            + 2.0 * family.disp_norm_d1(ctx.phi_t) / ctx.phi_t
            + family.disp_norm_d2(ctx.phi_t));
    Ok(ElementBlock {
        tt: w_tt,
        tp: w_tp,
        pt: w_tp,
        pp: w_pp,
    })
}

/// Score second-moment block for one observation and a pair of specs.
///
/// The block is `E[ S^(k)(y) S^(k')(y)' | x ]` with the expectation under the
/// model at `params`; the doubly tilted parameter pair absorbs the product of
/// weights.
pub fn lambda_block_cross(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec_k: &WeightSpec,
    spec_l: &WeightSpec,
    x: &DVector<f64>,
) -> Result<ElementBlock> {
    let z = x.dot(&params.beta);
    let theta = link.xi(family, z);
    family.check_theta(theta)?;
    let xi_p = link.xi_prime(family, z);
    let phi = params.phi;

    let ck = SpecContext::resolve(family, link, spec_k, theta, phi, x)?;
    let cl = SpecContext::resolve(family, link, spec_l, theta, phi, x)?;

    // combined tilt for the weight product
    let (theta_c, phi_c) = transform_shifted(
        family,
        theta,
        phi,
        ck.tilt.theta_shift + cl.tilt.theta_shift,
        ck.tilt.inv_phi_shift + cl.tilt.inv_phi_shift,
    )?;
    let log_lambda_c = family.cumulant(theta_c) / phi_c - family.disp_norm(phi_c)
        - family.cumulant(theta) / phi
        + family.disp_norm(phi)
        + ck.tilt.log_scale
        + cl.tilt.log_scale;
    let lambda_c = log_lambda_c.exp();

    let a1c = family.mean(theta_c);
    let a2c = family.variance_shape(theta_c);
    let bc1 = phi_c * phi_c * family.disp_norm_d1(phi_c);

    // mean offsets of each side's score pieces under the combined tilt
    let u_t = |c: &SpecContext| -(family.mean(c.theta_t) - a1c);
    let u_p = |c: &SpecContext| {
        (c.theta_t - theta_c) * a1c - (family.cumulant(c.theta_t) - family.cumulant(theta_c))
            - (c.phi_t * c.phi_t * family.disp_norm_d1(c.phi_t) - bc1)
    };
    let (ut_k, ut_l) = (u_t(&ck), u_t(&cl));
    let (up_k, up_l) = (u_p(&ck), u_p(&cl));

    // moments of the centered pieces under the combined tilt:
    // E[(y - A'(theta_c))^2] = phi_c A''(theta_c); first moments vanish;
    // E[(y-A')(v - E v)] = d_theta_phi over the full support = 0;
    // E[(v - E v)^2] = -2 phi_c^3 b' - phi_c^4 b''.
    let var_t = phi_c * a2c;
    let var_p = -2.0 * phi_c * phi_c * phi_c * family.disp_norm_d1(phi_c)
        - phi_c * phi_c * phi_c * phi_c * family.disp_norm_d2(phi_c);

    let b_tt = (var_t + ut_k * ut_l) / (ck.phi_t * cl.phi_t);
    // theta-side k against phi-side l
    let b_tp_kl = -((cl.theta_t - theta_c) * var_t + ut_k * up_l)
        / (ck.phi_t * cl.phi_t * cl.phi_t);
    let b_tp_lk = -((ck.theta_t - theta_c) * var_t + ut_l * up_k)
        / (cl.phi_t * ck.phi_t * ck.phi_t);
    let b_pp = (var_p
        + (ck.theta_t - theta_c) * (cl.theta_t - theta_c) * var_t
        + up_k * up_l)
        / (ck.phi_t * ck.phi_t * cl.phi_t * cl.phi_t);

    let rk = ck.phi_t / phi;
    let rl = cl.phi_t / phi;
    let tt = lambda_c * rk * rl * xi_p * xi_p * b_tt;
    let tp = lambda_c * rk * rl * rl * xi_p * (cl.kappa * b_tt + b_tp_kl);
    let pt = lambda_c * rl * rk * rk * xi_p * (ck.kappa * b_tt + b_tp_lk);
    let pp = lambda_c
        * rk
        * rk
        * rl
        * rl
        * (ck.kappa * cl.kappa * b_tt + ck.kappa * b_tp_kl + cl.kappa * b_tp_lk + b_pp);
    Ok(ElementBlock { tt, tp, pt, pp })
}

/// Single-spec score second-moment block (`k = k'`).
pub fn lambda_block(
    family: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    x: &DVector<f64>,
) -> Result<ElementBlock> {
    lambda_block_cross(family, link, params, spec, spec, x)
}
