use std::time::Instant;
use swle::simlab::{generate, SimDesign};
use swle::weighting::WeightSpec;
use swle::model::ParamVector;

#[test]
#[ignore]
fn probe_score_cost() {
    let design = SimDesign::sim3(false, 5000, 42);
    let records = generate(&design, 0).unwrap();
    let fam = swle::EdmFamily::gamma();
    let link = swle::LinkSpec::Log;
    let params = ParamVector::from_slice(&[1.0, 0.5], 0.5);
    let spec = WeightSpec::intercept_only(&fam, &link, -0.2, 1.0, 2).unwrap();

    for name in ["mle", "weighted"] {
        let sp = if name == "mle" { WeightSpec::Mle } else { spec.clone() };
        let t0 = Instant::now();
        let mut s = nalgebra::DVector::zeros(3);
        for _ in 0..5 {
            s = swle::censtrun::extended_score(&fam, &link, &params, &sp, &records).unwrap();
        }
        println!("{name}: score eval {:?} (per eval {:?}), norm {:.3e}", t0.elapsed(), t0.elapsed()/5, s.amax());
    }

    // partial_g_moment cost
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..2500 {
        acc += fam.partial_g_moment(-1.0, 0.5, &swle::Interval::new(0.0, 0.5));
    }
    println!("2500 partial_g over (0,0.5]: {:?} (acc {acc:.3})", t0.elapsed());
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..2500 {
        acc += fam.cdf_unchecked(-1.0, 0.5, &swle::Interval::new(0.5, f64::INFINITY));
    }
    println!("2500 cdf: {:?} ({acc:.3})", t0.elapsed());
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..2500 {
        acc += fam.partial_mean(-1.0, 0.5, &swle::Interval::new(0.5, f64::INFINITY));
    }
    println!("2500 partial_mean: {:?} ({acc:.3})", t0.elapsed());
}

#[test]
#[ignore]
fn probe_sigma_meta_bug() {
    let design = SimDesign::sim3(false, 800, 42);
    let records = generate(&design, 0).unwrap();
    let fam = swle::EdmFamily::gamma();
    let link = swle::LinkSpec::Log;
    let params = ParamVector::from_slice(&[1.0, 0.5], 0.5);
    let specs = vec![
        WeightSpec::Mle,
        WeightSpec::intercept_only(&fam, &link, -0.1, 1.0, 2).unwrap(),
    ];
    let sigma = swle::diagnostics::meta_covariance(&fam, &link, &params, &specs, swle::diagnostics::DataRef::Censored(&records)).unwrap();
    println!("sigma finite: {}", sigma.iter().all(|v| v.is_finite()));
    for i in 0..6 { 
        let row: Vec<String> = (0..6).map(|j| format!("{:+.3e}", sigma[(i,j)])).collect();
        println!("{}", row.join(" "));
    }
}
