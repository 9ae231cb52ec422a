//! Structural and degeneracy oracles for the Wald diagnostic machinery.

use nalgebra::{DMatrix, DVector};
use swle::complete::{fit, FitOptions};
use swle::diagnostics::{
    diagnose, individual_wald, meta_covariance, meta_wald, param_individual_wald,
    param_meta_wald, DataRef, HyperGrid,
};
use swle::families::EdmFamily;
use swle::link::LinkSpec;
use swle::model::ParamVector;
use swle::simlab::{generate, records_to_dataset, SimDesign};
use swle::weighting::WeightSpec;

fn gamma_setup() -> (
    EdmFamily,
    LinkSpec,
    swle::model::Dataset,
    ParamVector,
    Vec<WeightSpec>,
) {
    let design = SimDesign::sim1_gamma(400, 1234);
    let ds = records_to_dataset(&generate(&design, 0).unwrap()).unwrap();
    let fam = EdmFamily::gamma();
    let link = LinkSpec::Log;
    let specs = vec![
        WeightSpec::Mle,
        WeightSpec::intercept_only(&fam, &link, -0.1, 1.0, 2).unwrap(),
        WeightSpec::intercept_only(&fam, &link, -0.3, 1.0, 2).unwrap(),
    ];
    (fam, link, ds, design.true_params, specs)
}

#[test]
fn duplicated_spec_degenerates_to_zero_contrast_covariance() {
    let (fam, link, ds, truth, specs) = gamma_setup();
    // bypass the grid validation by calling the block assembler directly
    let dup = vec![specs[1].clone(), specs[1].clone()];
    let sigma = meta_covariance(&fam, &link, &truth, &dup, DataRef::Complete(&ds)).unwrap();
    let dim = 3;
    // all four blocks identical
    for a in 0..2 {
        for b in 0..2 {
            let blk = sigma.view((a * dim, b * dim), (dim, dim));
            let base = sigma.view((0, 0), (dim, dim));
            assert!((blk - base).amax() < 1e-10 * base.amax());
        }
    }
    // difference contrast covariance vanishes
    let mut j = DMatrix::<f64>::zeros(dim, 2 * dim);
    for r in 0..dim {
        j[(r, r)] = 1.0;
        j[(r, dim + r)] = -1.0;
    }
    let jsj = &j * &sigma * j.transpose();
    assert!(jsj.amax() < 1e-10 * sigma.amax(), "JSJ' max {}", jsj.amax());
}

#[test]
fn sigma_meta_is_symmetric_with_psd_diagonal_blocks() {
    let (fam, link, ds, truth, specs) = gamma_setup();
    let sigma = meta_covariance(&fam, &link, &truth, &specs, DataRef::Complete(&ds)).unwrap();
    let asym = (&sigma - sigma.transpose()).amax();
    assert!(asym < 1e-10 * sigma.amax(), "asymmetry {asym}");
    let dim = 3;
    for a in 0..specs.len() {
        let blk = sigma.view((a * dim, a * dim), (dim, dim)).into_owned();
        let min_eig = swle::numerics::linalg::min_symmetric_eigenvalue(&blk);
        assert!(min_eig >= -1e-8 * blk.trace(), "block {a} min eig {min_eig}");
    }
}

#[test]
fn diagonal_block_matches_single_fit_covariance() {
    let (fam, link, ds, truth, specs) = gamma_setup();
    let sigma = meta_covariance(&fam, &link, &truth, &specs, DataRef::Complete(&ds)).unwrap();
    let dim = 3;
    for (a, spec) in specs.iter().enumerate() {
        let cov =
            swle::complete::covariance_at_params(&fam, &link, &truth, spec, &ds).unwrap();
        let blk = sigma.view((a * dim, a * dim), (dim, dim)).into_owned() / ds.n() as f64;
        let rel = (&blk - &cov).amax() / cov.amax();
        assert!(rel < 1e-10, "spec {a}: diagonal block off by rel {rel}");
    }
}

#[test]
fn contrast_basis_does_not_change_meta_statistic() {
    let (_, _, _, _, _) = gamma_setup();
    // synthetic fits and a synthetic PSD covariance
    let dim = 3;
    let k = 3;
    let fits: Vec<ParamVector> = vec![
        ParamVector::from_slice(&[1.00, 0.50], 0.50),
        ParamVector::from_slice(&[1.02, 0.48], 0.53),
        ParamVector::from_slice(&[0.97, 0.55], 0.47),
    ];
    let m = DMatrix::from_fn(dim * k, dim * k, |i, j| {
        0.1 * ((i * 7 + j * 13 + 3) as f64).sin()
    });
    let sigma = &m * m.transpose() + DMatrix::identity(dim * k, dim * k);
    let n = 500usize;

    let z_consecutive = meta_wald(&fits, &sigma, n).unwrap();

    // differences against the first fit: a row-equivalent full-rank basis
    let mut j = DMatrix::<f64>::zeros(dim * (k - 1), dim * k);
    for a in 0..(k - 1) {
        for r in 0..dim {
            j[(a * dim + r, r)] = 1.0;
            j[(a * dim + r, (a + 1) * dim + r)] = -1.0;
        }
    }
    let mut stacked = DVector::zeros(dim * k);
    for (a, f) in fits.iter().enumerate() {
        stacked.rows_mut(a * dim, dim).copy_from(&f.to_vector());
    }
    let d = &j * &stacked;
    let jsj = &j * &sigma * j.transpose();
    let z_alt = n as f64 * d.dot(&jsj.lu().solve(&d).unwrap());

    assert!(
        (z_consecutive.value - z_alt).abs() < 1e-10 * z_alt.max(1.0),
        "{} vs {z_alt}",
        z_consecutive.value
    );
}

#[test]
fn param_individual_matches_brute_force_contrast() {
    let dim = 3;
    let k = 3;
    let fits: Vec<ParamVector> = vec![
        ParamVector::from_slice(&[1.00, 0.50], 0.50),
        ParamVector::from_slice(&[1.02, 0.48], 0.53),
        ParamVector::from_slice(&[0.97, 0.55], 0.47),
    ];
    let m = DMatrix::from_fn(dim * k, dim * k, |i, j| {
        0.07 * ((i * 3 + j * 11 + 1) as f64).cos()
    });
    let sigma = &m * m.transpose() + DMatrix::identity(dim * k, dim * k);
    let n = 321usize;

    for p in 0..dim {
        for (a, b) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let z = param_individual_wald(p, a, b, &fits, &sigma, n).unwrap();
            assert_eq!(z.df, 1);
            // brute force: scalar contrast via the explicit 1 x dim*k design row
            let mut row = DVector::zeros(dim * k);
            row[a * dim + p] = 1.0;
            row[b * dim + p] = -1.0;
            let mut stacked = DVector::zeros(dim * k);
            for (idx, f) in fits.iter().enumerate() {
                stacked.rows_mut(idx * dim, dim).copy_from(&f.to_vector());
            }
            let d = row.dot(&stacked);
            let var = (row.transpose() * &sigma * &row)[(0, 0)];
            let brute = n as f64 * d * d / var;
            assert!(
                (z.value - brute).abs() < 1e-10 * brute.max(1.0),
                "p={p} ({a},{b}): {} vs {brute}",
                z.value
            );
        }
    }
}

#[test]
fn single_parameter_meta_reduces_to_individual_for_two_fits() {
    let dim = 3;
    let fits: Vec<ParamVector> = vec![
        ParamVector::from_slice(&[1.00, 0.50], 0.50),
        ParamVector::from_slice(&[1.05, 0.45], 0.55),
    ];
    let m = DMatrix::from_fn(dim * 2, dim * 2, |i, j| 0.2 * ((i + 2 * j) as f64).sin());
    let sigma = &m * m.transpose() + DMatrix::identity(dim * 2, dim * 2);
    for p in 0..dim {
        let z_meta = param_meta_wald(p, &fits, &sigma, 200).unwrap();
        let z_ind = param_individual_wald(p, 0, 1, &fits, &sigma, 200).unwrap();
        assert!((z_meta.value - z_ind.value).abs() < 1e-10 * z_ind.value.max(1.0));
        assert_eq!(z_meta.df, 1);
    }
}

#[test]
fn full_diagnose_pipeline_runs_and_serializes() {
    let (fam, link, ds, _, specs) = gamma_setup();
    let grid = HyperGrid::new(specs).unwrap();
    let report = diagnose(
        &fam,
        &link,
        &grid,
        DataRef::Complete(&ds),
        &FitOptions::default(),
        0,
    )
    .unwrap();

    // residual benchmark column vanishes
    assert!(report.residual_matrix.column(0).amax() == 0.0);
    // sensible degrees of freedom
    assert_eq!(report.meta_stat.df, 3 * (report.fits.len() - 1));
    for a in 0..report.fits.len() {
        for b in (a + 1)..report.fits.len() {
            assert_eq!(report.individual_stats[a][b].unwrap().df, 3);
        }
    }
    assert!(report
        .param_meta_stats
        .iter()
        .all(|s| s.df == report.fits.len() - 1));
    // correctly specified data: only sanity-check the p-value range here
    assert!(report.meta_stat.p_value > 0.0 && report.meta_stat.p_value <= 1.0);

    // JSON round trip
    let json = serde_json::to_string(&report).unwrap();
    let back: swle::diagnostics::MetaWaldReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.fits.len(), report.fits.len());
    assert!((back.meta_stat.value - report.meta_stat.value).abs() < 1e-12);

    // text tables render with the triangular layout
    let table = report.individual_table();
    assert!(table.contains("---"));
    let summary = report.summary_table();
    assert!(summary.contains("phi"));
}

#[test]
fn null_p_values_are_not_degenerate_across_seeds() {
    // ten seeds of correctly specified normal data: no p-value should be
    // essentially zero, and they should not all pile up at one
    let fam = EdmFamily::normal();
    let link = LinkSpec::Canonical;
    let specs = vec![
        WeightSpec::Mle,
        WeightSpec::intercept_only(&fam, &link, 1.0, 2.0, 2).unwrap(),
    ];
    let grid = HyperGrid::new(specs).unwrap();
    let mut ps = Vec::new();
    for seed in 0..10u64 {
        let design = SimDesign::sim1_normal(800, 9000 + seed);
        let ds = records_to_dataset(&generate(&design, 0).unwrap()).unwrap();
        let report = diagnose(
            &fam,
            &link,
            &grid,
            DataRef::Complete(&ds),
            &FitOptions::default(),
            0,
        )
        .unwrap();
        ps.push(report.meta_stat.p_value);
    }
    assert!(ps.iter().all(|p| *p > 1e-3), "p-values {ps:?}");
    assert!(ps.iter().any(|p| *p < 0.999));
}

#[test]
fn censored_meta_covariance_reduces_to_complete() {
    let design = SimDesign::sim1_gamma(150, 555);
    let records = generate(&design, 0).unwrap();
    let ds = records_to_dataset(&records).unwrap();
    let fam = EdmFamily::gamma();
    let link = LinkSpec::Log;
    let specs = vec![
        WeightSpec::Mle,
        WeightSpec::intercept_only(&fam, &link, -0.15, 1.0, 2).unwrap(),
    ];
    let truth = design.true_params.clone();
    let s_complete =
        meta_covariance(&fam, &link, &truth, &specs, DataRef::Complete(&ds)).unwrap();
    let s_censored =
        meta_covariance(&fam, &link, &truth, &specs, DataRef::Censored(&records)).unwrap();
    let rel = (&s_complete - &s_censored).amax() / s_complete.amax();
    assert!(rel < 1e-6, "complete vs censored meta covariance rel {rel}");
}

#[test]
fn misspecified_fit_moves_estimates() {
    // normal data fitted as gamma: the weighted fits disagree with the MLE
    // by far more than the null covariance allows
    let design = SimDesign::sim1_normal(2500, 31_337);
    let records = generate(&design, 0).unwrap();
    let ds0 = records_to_dataset(&records).unwrap();
    // keep positive responses only
    let keep: Vec<usize> = (0..ds0.n()).filter(|&i| ds0.y[i] > 0.0).collect();
    let y = nalgebra::DVector::from_fn(keep.len(), |i, _| ds0.y[keep[i]]);
    let x = nalgebra::DMatrix::from_fn(keep.len(), 2, |i, j| ds0.x[(keep[i], j)]);
    let ds = swle::model::Dataset::new(y, x).unwrap();

    let fam = EdmFamily::gamma();
    let link = LinkSpec::Log;
    let grid = HyperGrid::new(vec![
        WeightSpec::Mle,
        WeightSpec::intercept_only(&fam, &link, -1.2, 1.0, 2).unwrap(),
    ])
    .unwrap();
    let report = diagnose(
        &fam,
        &link,
        &grid,
        DataRef::Complete(&ds),
        &FitOptions::default(),
        0,
    )
    .unwrap();
    assert!(
        report.meta_stat.p_value < 0.01,
        "misspecification went undetected: p = {}",
        report.meta_stat.p_value
    );
    // dispersion residual should move with the weight choice
    let dim = 3;
    assert!(report.residual_matrix[(dim - 1, 1)].abs() > 1.0);
}
