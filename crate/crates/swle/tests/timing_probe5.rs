use std::time::Instant;
use swle::simlab::{calibrate_design_grid, delta_grid, generate, SimDesign};
use swle::model::ParamVector;
use swle::Interval;
use swle::censtrun::d_terms;

#[test]
#[ignore]
fn probe_pieces() {
    let design = SimDesign::sim3(false, 2000, 42);
    let grid = calibrate_design_grid(&design, &delta_grid(5).unwrap(), 0.99, None, None).unwrap();
    let records = generate(&design, 0).unwrap();
    let fam = swle::EdmFamily::gamma();
    let link = swle::LinkSpec::Log;
    let params = ParamVector::from_slice(&[1.0, 0.5], 0.487);

    // time: d_terms over each record's pieces at spec-4 tilted params
    let spec = &grid.specs()[4];
    let t0 = Instant::now();
    let mut acc = 0.0;
    for rec in &records {
        let theta = params.theta_at(&fam, &link, &rec.x);
        let tilt = spec.tilt(&fam, &link, &rec.x);
        let (tt, pt) = tilt.transform(&fam, theta, params.phi).unwrap();
        for piece in rec.scheme.uncensored_pieces() {
            acc += d_terms(&fam, tt, pt, &piece).unwrap().d_phi_phi;
        }
    }
    println!("per-record U d_terms at spec5: {:?} (acc {acc:.1})", t0.elapsed() / records.len() as u32);

    // time: d_terms over truncation
    let t0 = Instant::now();
    for rec in &records {
        let theta = params.theta_at(&fam, &link, &rec.x);
        let tilt = spec.tilt(&fam, &link, &rec.x);
        let (tt, pt) = tilt.transform(&fam, theta, params.phi).unwrap();
        if rec.scheme.truncation.lo > 0.0 {
            acc += d_terms(&fam, tt, pt, &rec.scheme.truncation).unwrap().d_phi_phi;
        }
    }
    println!("per-record T d_terms: {:?}", t0.elapsed() / records.len() as u32);

    // time: d_first_order over censor tail via partial moments
    let t0 = Instant::now();
    for rec in &records {
        let theta = params.theta_at(&fam, &link, &rec.x);
        let tilt = spec.tilt(&fam, &link, &rec.x);
        let (tt, pt) = tilt.transform(&fam, theta, params.phi).unwrap();
        let iv = rec.scheme.censor_intervals[0];
        acc += fam.partial_g_moment(tt, pt, &iv);
        acc += fam.partial_mean(tt, pt, &iv);
        acc += fam.cdf_unchecked(tt, pt, &iv);
    }
    println!("per-record tail partials: {:?} ({acc:.2})", t0.elapsed() / records.len() as u32);

    // time: record_ctx-equivalent (d_first_order over T)
    let t0 = Instant::now();
    for rec in &records {
        let theta = params.theta_at(&fam, &link, &rec.x);
        let tilt = spec.tilt(&fam, &link, &rec.x);
        let (tt, pt) = tilt.transform(&fam, theta, params.phi).unwrap();
        let trunc = rec.scheme.truncation;
        if trunc.lo > 0.0 {
            acc += fam.partial_g_moment(tt, pt, &trunc);
            acc += fam.partial_mean(tt, pt, &trunc);
        }
    }
    println!("per-record T partials: {:?} ({acc:.2})", t0.elapsed() / records.len() as u32);

    let iv = Interval::new(20.0, f64::INFINITY);
    let t0 = Instant::now();
    for i in 0..2000 {
        acc += fam.partial_g_moment(-1.5 - (i%5) as f64*0.1, 0.5, &iv);
    }
    println!("tail partial_g alone: {:?} ({acc:.2})", t0.elapsed() / 2000);
}
