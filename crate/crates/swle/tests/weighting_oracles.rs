//! Quadrature and Monte Carlo oracles for the weight-function algebra.

use nalgebra::{DMatrix, DVector};
use swle::families::EdmFamily;
use swle::link::LinkSpec;
use swle::model::ParamVector;
use swle::numerics::integrate_default;
use swle::numerics::rng::Prng;
use swle::weighting::{
    bias_adjustment, calibrate_censored, calibrate_complete, transform, weight_eval,
    CalibrationOptions, CompleteCalibrator, WeightSpec,
};
use swle::Interval;

fn one_x() -> DVector<f64> {
    DVector::from_vec(vec![1.0])
}

/// The three showcase configurations: (family, link, theta, phi, theta~, phi~).
fn showcase() -> Vec<(EdmFamily, f64, f64, f64, f64)> {
    vec![
        (EdmFamily::gamma(), -1.0, 0.5, -0.5, 1.0),
        (EdmFamily::normal(), 0.0, 0.5, 0.0, 2.0),
        (EdmFamily::inverse_gaussian(), -0.5, 1.0, -2.0, 1.0),
    ]
}

#[test]
fn bias_adjustment_matches_quadrature() {
    let link = LinkSpec::Canonical;
    let x = one_x();
    for (fam, theta, phi, tt, pt) in showcase() {
        let spec = WeightSpec::intercept_only(&fam, &link, tt, pt, 1).unwrap();
        let lambda = bias_adjustment(&fam, &link, theta, phi, &spec, &x).unwrap();
        let sup = fam.support();
        let oracle = integrate_default(
            |y| {
                fam.density_unchecked(theta, phi, y) * weight_eval(&fam, &link, &spec, y, &x)
            },
            sup.lo,
            sup.hi,
        );
        assert!(oracle.converged);
        let rel = (lambda - oracle.value).abs() / oracle.value;
        assert!(rel < 1e-8, "{}: lambda {lambda} vs {}", fam.name(), oracle.value);
    }
}

#[test]
fn transformed_density_integrates_to_one() {
    let link = LinkSpec::Canonical;
    let x = one_x();
    let grid: Vec<(EdmFamily, f64, f64, f64, f64)> = vec![
        (EdmFamily::gamma(), -1.0, 0.5, -0.5, 1.0),
        (EdmFamily::gamma(), -2.0, 0.25, -1.0, 1.0),
        (EdmFamily::gamma(), -0.5, 1.5, -0.2, 0.7),
        (EdmFamily::normal(), 0.0, 0.5, 0.0, 2.0),
        (EdmFamily::normal(), 1.0, 0.25, 0.5, 0.8),
        (EdmFamily::normal(), -0.7, 2.0, 1.0, 5.0),
        (EdmFamily::inverse_gaussian(), -0.5, 1.0, -2.0, 1.0),
        (EdmFamily::inverse_gaussian(), -0.125, 0.2, -1.0, 2.0),
        (EdmFamily::inverse_gaussian(), -2.0, 0.5, -0.5, 0.6),
    ];
    for (fam, theta, phi, tt, pt) in grid {
        let spec = WeightSpec::intercept_only(&fam, &link, tt, pt, 1).unwrap();
        let t = transform(&fam, &link, theta, phi, &spec, &x).unwrap();
        let lambda = bias_adjustment(&fam, &link, theta, phi, &spec, &x).unwrap();
        let sup = fam.support();
        // f*(y) = f(y) W(y) / lambda* should be the tilted-family density
        let mass = integrate_default(
            |y| {
                fam.density_unchecked(theta, phi, y) * weight_eval(&fam, &link, &spec, y, &x)
                    / lambda
            },
            sup.lo,
            sup.hi,
        );
        assert!((mass.value - 1.0).abs() < 1e-8, "{} mass {}", fam.name(), mass.value);
        // and must agree pointwise with the family at the tilted parameters
        for &y in &[0.3, 0.9, 2.1] {
            let y = if sup.contains(y) { y } else { continue };
            let direct = fam.density_unchecked(t.theta_star, t.phi_star, y);
            let built = fam.density_unchecked(theta, phi, y)
                * weight_eval(&fam, &link, &spec, y, &x)
                / lambda;
            assert!(
                (direct - built).abs() <= 1e-10 * direct.max(1.0),
                "{} at y = {y}: {direct} vs {built}",
                fam.name()
            );
        }
    }
}

#[test]
fn canonical_link_tilts_coefficients_componentwise() {
    // theta* = x' beta* with beta* = (beta/phi + beta~/phi~) phi*
    let fam = EdmFamily::normal();
    let link = LinkSpec::Canonical;
    let beta = DVector::from_vec(vec![1.0, 0.5, -0.3]);
    let beta_tilde = DVector::from_vec(vec![0.2, -0.1, 0.05]);
    let phi = 0.25;
    let phi_tilde = 2.0;
    let spec = WeightSpec::weighted(beta_tilde.clone(), phi_tilde);
    let phi_star = 1.0 / (1.0 / phi + 1.0 / phi_tilde);
    let beta_star = (&beta / phi + &beta_tilde / phi_tilde) * phi_star;
    for xv in [
        vec![1.0, 0.0, 0.0],
        vec![1.0, 1.3, -2.0],
        vec![1.0, -0.7, 0.4],
    ] {
        let x = DVector::from_vec(xv);
        let theta = x.dot(&beta);
        let t = transform(&fam, &link, theta, phi, &spec, &x).unwrap();
        assert!((t.theta_star - x.dot(&beta_star)).abs() < 1e-12);
        assert!((t.phi_star - phi_star).abs() < 1e-12);
    }
}

#[test]
fn influence_terms_decay_in_the_tails() {
    let link = LinkSpec::Canonical;
    let x = one_x();

    // gamma, upper tail: W = exp(theta~ y) with theta~ < 0
    let gamma = EdmFamily::gamma();
    let spec = WeightSpec::intercept_only(&gamma, &link, -0.5, 1.0, 1).unwrap();
    let mut prev_y = f64::INFINITY;
    let mut prev_g = f64::INFINITY;
    let mut below = false;
    for k in 0..120 {
        // geometric grid in the tail, beyond the mode of y exp(theta~ y)
        let y = 4.0 * 1.5f64.powi(k);
        let w = weight_eval(&gamma, &link, &spec, y, &x);
        let wy = w * y.abs();
        let wg = w * gamma.g_stat(y).abs();
        assert!(wy <= prev_y * (1.0 + 1e-12) || wy < 1e-300);
        assert!(wg <= prev_g * (1.0 + 1e-12) || wg < 1e-300);
        prev_y = wy;
        prev_g = wg;
        if wy < 1e-12 && wg < 1e-12 {
            below = true;
            break;
        }
    }
    assert!(below, "gamma upper-tail influence never fell below 1e-12");

    // normal, both tails
    let normal = EdmFamily::normal();
    let spec = WeightSpec::intercept_only(&normal, &link, 0.0, 2.0, 1).unwrap();
    for sign in [-1.0, 1.0] {
        let mut prev = f64::INFINITY;
        let mut below = false;
        for k in 0..60 {
            let y = sign * 1.5f64.powi(k);
            let w = weight_eval(&normal, &link, &spec, y, &x);
            let m = (w * y.abs()).max(w * normal.g_stat(y).abs());
            if k > 3 {
                assert!(m <= prev * (1.0 + 1e-12) || m < 1e-300);
            }
            prev = m;
            if m < 1e-12 {
                below = true;
                break;
            }
        }
        assert!(below, "normal tail (sign {sign}) never fell below 1e-12");
    }

    // inverse gaussian, both endpoints (0+ and +inf)
    let ig = EdmFamily::inverse_gaussian();
    let spec = WeightSpec::intercept_only(&ig, &link, -2.0, 1.0, 1).unwrap();
    for upper in [true, false] {
        let mut prev = f64::INFINITY;
        let mut below = false;
        for k in 1..80 {
            let y = if upper {
                1.5f64.powi(k)
            } else {
                1.5f64.powi(-k)
            };
            let w = weight_eval(&ig, &link, &spec, y, &x);
            let m = (w * y.abs()).max(w * ig.g_stat(y).abs());
            if k > 3 {
                assert!(m <= prev * (1.0 + 1e-12) || m < 1e-300, "ig k={k}");
            }
            prev = m;
            if m < 1e-12 {
                below = true;
                break;
            }
        }
        assert!(below, "ig endpoint (upper {upper}) never fell below 1e-12");
    }
}

fn sim1_x_sample(seed: u64, m: usize) -> DMatrix<f64> {
    let mut rng = Prng::new(seed);
    DMatrix::from_fn(m, 2, |_, j| if j == 0 { 1.0 } else { rng.standard_normal() })
}

/// Independent Monte Carlo check of the tail-weight ratio at a solved spec:
/// fresh seed, direct samplers (not inverse CDF).
fn mc_ratio(
    fam: &EdmFamily,
    link: &LinkSpec,
    params: &ParamVector,
    spec: &WeightSpec,
    alpha: f64,
    seed: u64,
) -> f64 {
    let mut rng = Prng::new(seed);
    let n = 400_000usize;
    let mut ys = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for _ in 0..n {
        let x = DVector::from_vec(vec![1.0, rng.standard_normal()]);
        let theta = params.theta_at(fam, link, &x);
        let mu = fam.mean(theta);
        let y = match fam.id {
            swle::FamilyId::Gamma => rng.gamma(1.0 / params.phi, mu * params.phi),
            swle::FamilyId::Normal => rng.normal(mu, params.phi),
            swle::FamilyId::InverseGaussian => rng.inverse_gaussian(mu, 1.0 / params.phi),
        };
        ws.push(weight_eval(fam, link, spec, y, &x));
        ys.push(y);
    }
    let mut sorted = ys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = swle::weighting::quantile_type7(&sorted, alpha);
    let mean_w: f64 = ws.iter().sum::<f64>() / n as f64;
    let tail: Vec<f64> = ys
        .iter()
        .zip(&ws)
        .filter(|(y, _)| **y > q)
        .map(|(_, w)| *w)
        .collect();
    let mean_tail: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
    mean_tail / mean_w
}

#[test]
fn delta_one_returns_flat_weight() {
    let fam = EdmFamily::gamma();
    let link = LinkSpec::Log;
    let params = ParamVector::from_slice(&[1.0, 0.5], 0.5);
    let xs = sim1_x_sample(9, 256);
    let spec = calibrate_complete(
        &fam,
        &link,
        &params,
        &xs,
        0.99,
        1.0,
        &CalibrationOptions::default(),
    )
    .unwrap();
    assert!(spec.is_mle());
}

#[test]
fn gamma_calibration_hits_target_ratio() {
    // the printed hyperparameter pair for this setting is (6.53, 1), which is
    // incompatible with a decreasing exponential weight; the solved value
    // below is the golden one for this implementation (see the ledger note)
    let fam = EdmFamily::gamma();
    let link = LinkSpec::Log;
    let params = ParamVector::from_slice(&[1.0, 0.5], 0.5);
    let xs = sim1_x_sample(11, 4096);
    let opts = CalibrationOptions {
        mc_size: 1_000_000,
        seed: 20_240_517,
        ..Default::default()
    };
    let cal = CompleteCalibrator::new(&fam, &link, &params, &xs, 0.99, &opts).unwrap();
    let free = cal.solve_free(0.1).unwrap();
    assert!(free < 0.0, "gamma tilt must be negative, got {free}");
    let spec = cal.solve(0.1).unwrap();
    let r = mc_ratio(&fam, &link, &params, &spec, 0.99, 777);
    assert!((r - 0.1).abs() < 4e-3, "independent MC ratio {r}");
    // frozen golden value from the deterministic calibrator seed
    let golden = -0.156_451_066_001_821;
    assert!(
        (free - golden).abs() < 1e-6,
        "calibrated gamma tilt {free} drifted from {golden}"
    );
}

#[test]
fn normal_calibration_hits_target_ratio() {
    let fam = EdmFamily::normal();
    let link = LinkSpec::Canonical;
    let params = ParamVector::from_slice(&[1.0, 0.5], 0.25);
    let xs = sim1_x_sample(13, 4096);
    let opts = CalibrationOptions {
        mc_size: 1_000_000,
        seed: 20_240_518,
        ..Default::default()
    };
    let cal = CompleteCalibrator::new(&fam, &link, &params, &xs, 0.99, &opts).unwrap();
    let free = cal.solve_free(0.5).unwrap();
    assert!(free > 0.0);
    let spec = cal.solve(0.5).unwrap();
    let r = mc_ratio(&fam, &link, &params, &spec, 0.99, 778);
    assert!((r - 0.5).abs() < 5e-3, "independent MC ratio {r}");
    let golden = 2.211_490_615_358_891;
    assert!(
        (free - golden).abs() < 1e-4 * golden,
        "calibrated normal dispersion {free} drifted from {golden}"
    );
}

#[test]
fn censored_calibrator_agrees_with_complete_when_nothing_is_censored() {
    // With identical covariates the per-record conditional tail-weight ratio
    // equals the pooled one, so the plug-in calibrator and the Monte Carlo
    // calibrator solve the same equation. (With heterogeneous covariates the
    // plug-in form averages per-covariate ratios and is only an
    // approximation of the pooled target.)
    let fam = EdmFamily::gamma();
    let link = LinkSpec::Log;
    let params = ParamVector::from_slice(&[1.0], 0.5);

    let design = swle::simlab::SimDesign {
        kind: swle::simlab::GeneratorKind::PlainGlm,
        family: fam,
        link,
        true_params: params.clone(),
        n: 200_000,
        contamination: None,
        dispersion_coefs: None,
        censoring: None,
        seed: 4242,
    };
    let records = swle::simlab::generate(&design, 0).unwrap();

    let spec_cens =
        calibrate_censored(&fam, &link, &params, &records, 0.99, 0.1, None).unwrap();
    let xs = DMatrix::from_element(16, 1, 1.0);
    let opts = CalibrationOptions {
        seed: 31_415,
        ..Default::default()
    };
    let cal = CompleteCalibrator::new(&fam, &link, &params, &xs, 0.99, &opts).unwrap();
    let free_complete = cal.solve_free(0.1).unwrap();
    let free_cens = match &spec_cens {
        WeightSpec::Weighted { beta_tilde, .. } => link.xi(&fam, beta_tilde[0]),
        WeightSpec::Mle => panic!("expected a weighted spec"),
    };
    assert!(
        (free_complete - free_cens).abs() < 2e-3,
        "complete {free_complete} vs censored {free_cens}"
    );
}

#[test]
fn censored_calibration_golden_for_the_truncated_design() {
    // left truncation {0, 0.5}, right censoring {10, 20} on the gamma model
    let design = swle::simlab::SimDesign::sim3(false, 20_000, 777);
    let records = swle::simlab::generate(&design, 3).unwrap();
    let fam = EdmFamily::gamma();
    let link = LinkSpec::Log;
    let spec = calibrate_censored(
        &fam,
        &link,
        &design.true_params,
        &records,
        0.99,
        0.1,
        None,
    )
    .unwrap();
    let free = match &spec {
        WeightSpec::Weighted { beta_tilde, .. } => link.xi(&fam, beta_tilde[0]),
        WeightSpec::Mle => panic!("expected a weighted spec"),
    };
    assert!(free < 0.0);
    // frozen from the deterministic run; the plug-in ratio at the solution
    // must sit on the target
    let golden = -0.213_352_062_516;
    assert!(
        (free - golden).abs() < 2e-3,
        "censored-design tilt {free} drifted from {golden}"
    );
    // independent oracle: rebuild the plug-in tail-weight ratio at the
    // solution by direct quadrature of f and W over each record's regions
    let mut exact: Vec<f64> = records
        .iter()
        .filter_map(|r| match r.outcome {
            swle::censtrun::Outcome::Exact(y) => Some(y),
            _ => None,
        })
        .collect();
    exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = swle::weighting::quantile_type7(&exact, 0.99);
    let (mut num, mut den) = (0.0, 0.0);
    for rec in records.iter().step_by(97) {
        let theta = design.true_params.theta_at(&fam, &link, &rec.x);
        let phi = design.true_params.phi;
        let t_lo = rec.scheme.truncation.lo;
        let wf = |y: f64| {
            fam.density_unchecked(theta, phi, y) * weight_eval(&fam, &link, &spec, y, &rec.x)
        };
        let f = |y: f64| fam.density_unchecked(theta, phi, y);
        let wt = integrate_default(wf, t_lo.max(0.0), f64::INFINITY).value;
        let ft = integrate_default(f, t_lo.max(0.0), f64::INFINITY).value;
        let wq = integrate_default(wf, q.max(t_lo), f64::INFINITY).value;
        let fq = integrate_default(f, q.max(t_lo), f64::INFINITY).value;
        den += wt / ft;
        num += wq / fq;
    }
    let ratio = num / den;
    assert!(
        (ratio - 0.1).abs() < 2e-3,
        "quadrature-rebuilt ratio {ratio} off the 0.1 target"
    );
    assert!(matches!(
        calibrate_censored(&fam, &link, &design.true_params, &records, 0.99, 1.0, None).unwrap(),
        WeightSpec::Mle
    ));
}

#[test]
fn weight_scale_leaves_roots_invariant() {
    // multiplying W by a constant rescales the score linearly, so the fitted
    // parameters are unchanged
    let design = swle::simlab::SimDesign::sim1_gamma(400, 5150);
    let records = swle::simlab::generate(&design, 0).unwrap();
    let ds = swle::simlab::records_to_dataset(&records).unwrap();
    let fam = EdmFamily::gamma();
    let link = LinkSpec::Log;
    let spec = WeightSpec::intercept_only(&fam, &link, -0.15, 1.0, 2).unwrap();
    let scaled = spec.clone().with_scale(7.3);

    let opts = swle::complete::FitOptions::default();
    let fit1 = swle::complete::fit(&fam, &link, &spec, &ds, &opts).unwrap();
    let fit2 = swle::complete::fit(&fam, &link, &scaled, &ds, &opts).unwrap();
    let d = (fit1.params.to_vector() - fit2.params.to_vector()).amax();
    assert!(d < 1e-10, "scaled-weight fit moved by {d}");

    // the sandwich covariance is scale invariant too
    let dc = (&fit1.covariance - &fit2.covariance).amax();
    assert!(dc < 1e-10 * fit1.covariance.amax(), "covariance moved by {dc}");

    // and the score itself scales exactly linearly
    let s1 = swle::complete::score(&fam, &link, &fit1.params, &spec, &ds).unwrap();
    let s2 = swle::complete::score(&fam, &link, &fit1.params, &scaled, &ds).unwrap();
    assert!((7.3 * s1 - s2).amax() < 1e-9);
}
