use std::time::Instant;
use swle::simlab::{calibrate_design_grid, delta_grid, generate, SimDesign};
use swle::model::ParamVector;
use swle::censtrun::{meta_record_blocks, d_terms};
use swle::Interval;

#[test]
#[ignore]
fn probe_meta_blocks() {
    let design = SimDesign::sim3(false, 400, 42);
    let grid = calibrate_design_grid(&design, &delta_grid(5).unwrap(), 0.99, None, None).unwrap();
    let records = generate(&design, 0).unwrap();
    let fam = swle::EdmFamily::gamma();
    let link = swle::LinkSpec::Log;
    let params = ParamVector::from_slice(&[1.0, 0.5], 0.487);

    let t0 = Instant::now();
    for rec in &records {
        let _ = meta_record_blocks(&fam, &link, &params, grid.specs(), rec).unwrap();
    }
    println!("meta_record_blocks: {:?}/record", t0.elapsed() / records.len() as u32);

    // what do the tilted parameters look like at the strongest spec pair?
    if let swle::WeightSpec::Weighted { beta_tilde, .. } = &grid.specs()[4] {
        println!("strongest tilt theta~: {}", link.xi(&fam, beta_tilde[0]));
    }
    // d_terms at a strongly tilted pair on U and T regions
    for th in [-1.0, -2.0, -3.3] {
        let t0 = Instant::now();
        for _ in 0..500 {
            let _ = d_terms(&fam, th, 0.5, &Interval::new(0.5, 10.0)).unwrap();
        }
        let du = t0.elapsed()/500;
        let t0 = Instant::now();
        for _ in 0..500 {
            let _ = d_terms(&fam, th, 0.5, &Interval::new(0.5, f64::INFINITY)).unwrap();
        }
        println!("theta={th}: U {du:?}  T {:?}", t0.elapsed()/500);
    }
}

#[test]
#[ignore]
fn probe_element_split() {
    let design = SimDesign::sim3(false, 400, 42);
    let grid = calibrate_design_grid(&design, &delta_grid(5).unwrap(), 0.99, None, None).unwrap();
    let records = generate(&design, 0).unwrap();
    let fam = swle::EdmFamily::gamma();
    let link = swle::LinkSpec::Log;
    let params = ParamVector::from_slice(&[1.0, 0.5], 0.487);

    let t0 = Instant::now();
    for rec in &records {
        for spec in grid.specs() {
            let _ = swle::censtrun::gamma_elements(&fam, &link, &params, spec, rec).unwrap();
        }
    }
    println!("5x gamma_elements: {:?}/record", t0.elapsed() / records.len() as u32);

    let t0 = Instant::now();
    for rec in &records {
        for a in 0..5 {
            for b in a..5 {
                let _ = swle::censtrun::lambda_elements_cross(&fam, &link, &params, &grid.specs()[a], &grid.specs()[b], rec).unwrap();
            }
        }
    }
    println!("15x lambda_cross (incl ctx): {:?}/record", t0.elapsed() / records.len() as u32);
}
