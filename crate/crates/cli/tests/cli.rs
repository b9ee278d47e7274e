use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use koopfreq::bode::read_csv;
use koopfreq::oracle::TwoDExample;
use koopfreq::Complex64;
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn koopfreq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopfreq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn estimate(doc: &Value, method: &str) -> Complex64 {
    let e = doc["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["method"] == method)
        .unwrap_or_else(|| panic!("no {method} estimate in {doc}"));
    assert_eq!(e["status"], "ok", "{e}");
    Complex64::new(e["value"][0].as_f64().unwrap(), e["value"][1].as_f64().unwrap())
}

#[test]
fn simulate_reports_a_periodic_steady_state() {
    let dir = TempDir::new().unwrap();
    let plant = fixture("lag.plant");
    let out = koopfreq(&["simulate", plant.to_str().unwrap(), "--omega", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&out);
    assert_eq!(doc["periodic"], true);
    let period = doc["detected_period"].as_f64().unwrap();
    assert!((period - std::f64::consts::PI).abs() < 1e-9);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,re_x1,im_x1,re_u,im_u,re_y,im_y\n"));
    assert_eq!(csv.lines().count() as u64, doc["samples"].as_u64().unwrap() + 1);
}

#[test]
fn unstable_plant_exits_with_divergence() {
    let dir = TempDir::new().unwrap();
    let plant = fixture("unstable.plant");
    let out = koopfreq(&[
        "respond",
        plant.to_str().unwrap(),
        "--omega",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let missing = dir.path().join("missing.plant");
    assert_eq!(koopfreq(&["respond", missing.to_str().unwrap(), "--omega", "1"]).status.code(), Some(2));

    let bad = dir.path().join("bad.plant");
    fs::write(&bad, "[plant]\ndim = 1\n[dynamics]\nx1' = x1 +\n").unwrap();
    let out = koopfreq(&["respond", bad.to_str().unwrap(), "--omega", "1", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.plant:4:"));

    let lag = fixture("lag.plant");
    let lag = lag.to_str().unwrap();
    for extra in [
        &["--order", "0"][..],
        &["--methods", "closed"],
        &["--u0", "0"],
        &["--x0", "1,2"],
        &["--observable", "x3"],
        &["--methods", "dmd", "--dt", "0.5"],
    ] {
        let mut args = vec!["respond", lag, "--omega", "1", "--out", d];
        args.extend_from_slice(extra);
        assert_eq!(koopfreq(&args).status.code(), Some(2), "{extra:?}");
    }
    assert_eq!(koopfreq(&["respond", lag, "--omega", "-1", "--out", d]).status.code(), Some(2));
}

#[test]
fn respond_matches_the_closed_form_second_harmonic() {
    let dir = TempDir::new().unwrap();
    let plant = fixture("twod.plant");
    let out = koopfreq(&[
        "respond",
        plant.to_str().unwrap(),
        "--omega",
        "1",
        "--order",
        "2",
        "--methods",
        "harm,abel,dmd",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out);
    let want = TwoDExample::default_at(1.0).h2_x1();
    for (method, tol) in [("harmonic_average", 1e-6), ("abel_residue", 1e-4), ("dmd", 1e-6)] {
        let got = estimate(&doc, method);
        assert!((got - want).norm() <= tol * want.norm(), "{method}: {got} vs {want}");
    }
    let checks = doc["cross_checks"].as_array().unwrap();
    assert_eq!(checks.len(), 3);
    assert!(checks.iter().all(|c| c["passed"] == true));

    let csv = fs::read_to_string(dir.path().join("response.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("omega,order,method,re_H,im_H,err,status"));
    assert_eq!(lines.filter(|l| l.ends_with(",ok")).count(), 3);
}

#[test]
fn respond_on_a_linear_plant_gives_its_transfer_function() {
    let dir = TempDir::new().unwrap();
    let plant = fixture("lag.plant");
    let out = koopfreq(&[
        "respond",
        plant.to_str().unwrap(),
        "--omega",
        "3",
        "--order",
        "1",
        "--order",
        "1/2",
        "--methods",
        "harm,dmd",
        "--u0",
        "0.5@30",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out);
    let want = 2.0 / Complex64::new(1.0, 3.0);
    let estimates = doc["estimates"].as_array().unwrap();
    assert_eq!(estimates.len(), 4);
    for e in estimates {
        let h = Complex64::new(e["value"][0].as_f64().unwrap(), e["value"][1].as_f64().unwrap());
        match e["order"].as_str().unwrap() {
            "1" => assert!((h - want).norm() < 1e-6, "{e}"),
            "1/2" => assert!(h.norm() < 1e-9, "{e}"),
            other => panic!("unexpected order {other}"),
        }
    }
}

#[test]
fn sweep_writes_one_row_per_frequency_and_a_plot() {
    let dir = TempDir::new().unwrap();
    let plant = fixture("twod.plant");
    let out = koopfreq(&[
        "sweep",
        plant.to_str().unwrap(),
        "--omega-grid",
        "0.1:10:25",
        "--order",
        "2",
        "--methods",
        "harm",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out);
    assert_eq!(doc["tables"][0]["ok"], 25);

    let text = fs::read_to_string(dir.path().join("bode_H2.csv")).unwrap();
    let rows = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 25);
    for r in &rows {
        let want = TwoDExample::default_at(r.omega).h2_x1();
        let got = r.h.unwrap();
        assert!((got - want).norm() <= 1e-6 * want.norm(), "omega {}: {got} vs {want}", r.omega);
    }

    let svg = fs::read_to_string(dir.path().join("bode.svg")).unwrap();
    let tree = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    let root = tree.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    let panels = root.descendants().filter(|n| n.attribute("class") == Some("panel")).count();
    assert_eq!(panels, 2);
    let traces = root.descendants().filter(|n| n.attribute("class") == Some("trace")).count();
    assert_eq!(traces, 1);
}

#[test]
fn sweep_tags_rows_that_never_settle() {
    let dir = TempDir::new().unwrap();
    let plant = fixture("oscillator.plant");
    let out = koopfreq(&[
        "sweep",
        plant.to_str().unwrap(),
        "--omega-grid",
        "0.5:2:3",
        "--methods",
        "harm",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("bode_H1.csv")).unwrap();
    let rows = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 3);
    // resonance at omega = 1 grows without bound; off resonance the
    // response is periodic and equals 1 / (1 - omega^2)
    assert_eq!(rows[1].status.label(), "not_steady");
    assert!(rows[1].h.is_none());
    for r in [&rows[0], &rows[2]] {
        assert_eq!(r.status.label(), "ok");
        let want = 1.0 / (1.0 - r.omega * r.omega);
        assert!((r.h.unwrap() - want).norm() < 1e-6, "{:?}", r);
    }
}

#[test]
fn respond_reports_not_steady_with_its_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let plant = fixture("oscillator.plant");
    let out = koopfreq(&[
        "respond",
        plant.to_str().unwrap(),
        "--omega",
        "1",
        "--methods",
        "harm",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let doc = json(&out);
    assert_eq!(doc["estimates"][0]["status"], "not_steady");
}

#[test]
fn sweep_output_is_reproducible() {
    let plant = fixture("twod.plant");
    let run = || {
        let dir = TempDir::new().unwrap();
        let out = koopfreq(&[
            "sweep",
            plant.to_str().unwrap(),
            "--omega-grid",
            "0.5:2:6",
            "--order",
            "2",
            "--methods",
            "harm,dmd",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        (
            fs::read(dir.path().join("bode_H2.csv")).unwrap(),
            fs::read(dir.path().join("bode.svg")).unwrap(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn validate_passes_on_clean_parameters() {
    let out = koopfreq(&["validate", "--omega", "0.7", "--seed", "3"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("11 of 11 checks passed"), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn validate_rejects_degenerate_parameters() {
    let out = koopfreq(&["validate", "--a1", "-2", "--a2", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate parameters"));
}
