use std::time::Instant;
use swle::censtrun::d_terms;
use swle::Interval;

#[test]
#[ignore]
fn probe_d_terms() {
    let fam = swle::EdmFamily::gamma();
    for (lbl, iv) in [
        ("U=(0.5,10]", Interval::new(0.5, 10.0)),
        ("U=(0,10]", Interval::new(0.0, 10.0)),
        ("T=(0.5,inf)", Interval::new(0.5, f64::INFINITY)),
        ("I=(10,inf)", Interval::new(10.0, f64::INFINITY)),
        ("full", Interval::full()),
    ] {
        let t0 = Instant::now();
        let mut acc = 0.0;
        for i in 0..1000 {
            let th = -1.0 - (i % 7) as f64 * 0.01;
            let d = d_terms(&fam, th, 0.5, &iv).unwrap();
            acc += d.d_theta_theta;
        }
        println!("{lbl}: {:?}/call (acc {acc:.2})", t0.elapsed() / 1000);
    }
}
