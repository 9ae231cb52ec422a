//! End-to-end checks of the command-line surface.

use std::path::Path;
use std::process::Command;

fn swle_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swle"))
}

fn write_normal_csv(path: &Path, n: usize) {
    // deterministic complete-data linear model sample
    let design = swle::simlab::SimDesign::sim1_normal(n, 20_240_101);
    let records = swle::simlab::generate(&design, 0).unwrap();
    swle::dataset::write_records_path(path, &records).unwrap();
}

#[test]
fn fit_matches_library_and_reference_mle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("normal.csv");
    write_normal_csv(&data, 400);

    let out = swle_bin()
        .args([
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--family",
            "normal",
            "--link",
            "canonical",
            "--delta",
            "1.0",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // reference: OLS + mean squared residual, computed right here
    let records = swle::dataset::read_records_path(&data).unwrap();
    let ds = swle::simlab::records_to_dataset(&records).unwrap();
    let xtx = ds.x.transpose() * &ds.x;
    let xty = ds.x.transpose() * &ds.y;
    let beta = xtx.lu().solve(&xty).unwrap();
    let resid = &ds.y - &ds.x * &beta;
    let phi = resid.dot(&resid) / ds.n() as f64;

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap())
            .unwrap();
    let est = json["fit"]["params"]["beta"].as_array().unwrap();
    let got_b1 = est[0].as_f64().unwrap();
    let got_b2 = est[1].as_f64().unwrap();
    let got_phi = json["fit"]["params"]["phi"].as_f64().unwrap();
    assert!((got_b1 - beta[0]).abs() < 1e-8);
    assert!((got_b2 - beta[1]).abs() < 1e-8);
    assert!((got_phi - phi).abs() < 1e-8);
    assert!(json["config_hash"].as_str().unwrap().len() == 16);

    // params.csv exists with the three rows
    let csv = std::fs::read_to_string(dir.path().join("params.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn malformed_row_exits_2_and_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(
        &data,
        "y,x1,trunc_lo,trunc_hi,cens_lo,cens_hi,status\n1.0,1.0,,,,,exact\n2.0,1.0,,,5.0,,censored\n",
    )
    .unwrap();
    let out = swle_bin()
        .args([
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--family",
            "normal",
            "--delta",
            "1.0",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3"), "stderr: {err}");
}

#[test]
fn duplicate_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("normal.csv");
    write_normal_csv(&data, 120);
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"["Mle","Mle"]"#).unwrap();
    let out = swle_bin()
        .args([
            "diagnose",
            "--data",
            data.to_str().unwrap(),
            "--family",
            "normal",
            "--grid",
            grid.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn diagnose_produces_tables_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("normal.csv");
    write_normal_csv(&data, 500);
    let out = swle_bin()
        .args([
            "diagnose",
            "--data",
            data.to_str().unwrap(),
            "--family",
            "normal",
            "--link",
            "canonical",
            "--delta",
            "1.0,0.1",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let txt = std::fs::read_to_string(dir.path().join("diagnose.txt")).unwrap();
    assert!(txt.contains("meta Wald"));
    assert!(txt.contains("k \\ k'"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("diagnose.json")).unwrap())
            .unwrap();
    assert!(json["report"]["meta_stat"]["p_value"].as_f64().unwrap() >= 0.0);
}

#[test]
fn calibrate_delta_one_returns_flat_spec() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("normal.csv");
    write_normal_csv(&data, 300);
    let out = swle_bin()
        .args([
            "calibrate",
            "--data",
            data.to_str().unwrap(),
            "--family",
            "normal",
            "--delta",
            "1.0,0.5",
            "--alpha",
            "0.99",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("calibrate.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["specs"][0], serde_json::json!("Mle"));
    assert!(json["specs"][1]["Weighted"]["phi_tilde"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_smoke_study_is_fast_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    std::fs::write(
        &cfg,
        r#"{"design": {"preset": "sim1-normal", "n": 300, "seed": 7}, "k": 2, "b": 5, "level": 0.05}"#,
    )
    .unwrap();
    let t0 = std::time::Instant::now();
    let run = |out: &Path| {
        let o = swle_bin()
            .args([
                "simulate",
                "--config",
                cfg.to_str().unwrap(),
                "--jobs",
                "1",
                "--export-data",
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    run(&out1);
    run(&out2);
    assert!(
        t0.elapsed().as_secs() < 10,
        "smoke study too slow: {:?}",
        t0.elapsed()
    );
    let s1 = std::fs::read_to_string(out1.join("summary.csv")).unwrap();
    let s2 = std::fs::read_to_string(out2.join("summary.csv")).unwrap();
    assert_eq!(s1, s2);

    // the exported dataset round-trips bit for bit
    let exported = out1.join("dataset_rep0.csv");
    let records = swle::dataset::read_records_path(&exported).unwrap();
    let direct = swle::simlab::generate(&swle::simlab::SimDesign::sim1_normal(300, 7), 0).unwrap();
    assert_eq!(records, direct);
}

#[test]
fn log_response_transforms_consistently() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pos.csv");
    // strictly positive responses with a right-censor bound
    std::fs::write(
        &data,
        "y,x1,trunc_lo,trunc_hi,cens_lo,cens_hi,status\n\
         1.0,1.0,,,,,exact\n2.5,1.0,,,,,exact\n3.1,1.0,,,,,exact\n\
         0.7,1.0,,,,,exact\n1.9,1.0,,,,,exact\n1.2,1.0,,,,,exact\n\
         ,1.0,,,8.0,,censored\n",
    )
    .unwrap();
    let out = swle_bin()
        .args([
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--family",
            "normal",
            "--link",
            "canonical",
            "--delta",
            "1.0",
            "--log-response",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap())
            .unwrap();
    // the log of the censor bound is ln 8
    let mu = json["fit"]["params"]["beta"][0].as_f64().unwrap();
    assert!(mu > 0.0 && mu < 8.0f64.ln());
}
