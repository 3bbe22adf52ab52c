use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn uws(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uws")).args(args).output().expect("run uws")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).display().to_string()
}

fn fixture_glob() -> String {
    fixture("model_*.uws")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn extract_fixture(dir: &Path) -> (String, String) {
    let (sub, scree) = (p(dir, "s.uws"), p(dir, "scree.csv"));
    let out = uws(&["extract", "--models", &fixture_glob(), "--out", &sub, "--report", &scree]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    (sub, scree)
}

#[test]
fn extract_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (sub, scree) = extract_fixture(dir.path());
    assert!(PathBuf::from(&sub).is_file());
    let report = std::fs::read_to_string(scree).unwrap();
    assert!(report.starts_with("# command=extract\n"));
    assert!(report.contains("# models=3\n") && report.contains("# policy=cumulative_variance(tau=0.95)\n"));
    assert!(report.contains("component_index,layer,sigma,ratio,cumulative\n"));
    assert!(report.contains(",*mean*,"));
}

#[test]
fn bad_magic_is_a_data_error_at_offset_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = uws(&[
        "extract",
        "--models",
        &fixture("bad_magic.uws"),
        "--out",
        &p(dir.path(), "s.uws"),
        "--report",
        &p(dir.path(), "r.csv"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset 0"));
    assert!(!dir.path().join("s.uws").exists());
}

#[test]
fn usage_errors_and_help() {
    let out = uws(&["extract", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-such-flag"));
    assert_eq!(uws(&["extract", "--tau", "0.9", "--fixed-k", "3", "--models", "x", "--out", "a", "--report", "b"]).status.code(), Some(1));
    for sub in [
        vec!["extract"],
        vec!["scree"],
        vec!["project"],
        vec!["reconstruct"],
        vec!["merge"],
        vec!["adapt"],
        vec!["memcalc"],
        vec!["theory", "converge"],
        vec!["theory", "bounds"],
        vec!["theory", "dk-check"],
    ] {
        let mut args = sub.clone();
        args.push("--help");
        let out = uws(&args);
        assert_eq!(out.status.code(), Some(0), "{sub:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn converge_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = p(dir.path(), name);
        let out = uws(&["theory", "converge", "--d", "16", "--k", "2", "--trials", "10", "--seed", "7", "--out", &path]);
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(path).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("# seed=7\n"));
    assert!(text.contains("T,trial,op_error,subspace_error,op_bound,subspace_bound\n"));
}

#[test]
fn pipeline_project_reconstruct_merge_adapt() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (sub, _) = extract_fixture(d);
    let coeffs = p(d, "c.uws");
    assert_eq!(uws(&["project", "--subspace", &sub, "--model", &fixture("model_0.uws"), "--out", &coeffs]).status.code(), Some(0));
    let rebuilt = p(d, "r.uws");
    assert_eq!(uws(&["reconstruct", "--subspace", &sub, "--coeffs", &coeffs, "--out", &rebuilt]).status.code(), Some(0));
    let original = universal_subspace::ensemble::load_weights(fixture("model_0.uws")).unwrap();
    let back = universal_subspace::ensemble::load_weights(&rebuilt).unwrap();
    for (name, layer) in &original.layers {
        let err = (&back.layers[name].matrix - &layer.matrix).norm() / layer.matrix.norm();
        assert!(err < 1e-2, "{name}: {err}");
    }

    let merged = p(d, "m.uws");
    let report = p(d, "m.json");
    let out = uws(&["merge", "--subspace", &sub, "--models", &fixture_glob(), "--weights", "0.5,0.25,0.25", "--out", &merged, "--report", &report]);
    assert_eq!(out.status.code(), Some(0));
    assert!(std::fs::read_to_string(&report).unwrap().contains("\"weights\""));
    let bad = uws(&["merge", "--subspace", &sub, "--models", &fixture_glob(), "--weights", "0.5,0.5,0.5", "--out", &merged]);
    assert_eq!(bad.status.code(), Some(2));

    // Adapt block0 (4 x 8) to data generated by model_1's block0.
    let w = universal_subspace::ensemble::load_weights(fixture("model_1.uws")).unwrap();
    let target = w.layer("block0").unwrap();
    let mut xs = String::new();
    let mut ys = String::new();
    for i in 0..20 {
        let x: Vec<f64> = (0..8).map(|j| ((i * 8 + j) as f64 * 0.731).sin()).collect();
        let y: Vec<f64> = (0..4).map(|r| (0..8).map(|c| target[(r, c)] * x[c]).sum()).collect();
        xs.push_str(&x.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        xs.push('\n');
        ys.push_str(&y.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        ys.push('\n');
    }
    std::fs::write(d.join("x.csv"), xs).unwrap();
    std::fs::write(d.join("y.csv"), ys).unwrap();
    let fit = p(d, "fit.csv");
    let out = uws(&[
        "adapt", "--subspace", &sub, "--layer", "block0", "--x", &p(d, "x.csv"), "--y", &p(d, "y.csv"),
        "--method", "gd", "--epochs", "200", "--out", &p(d, "a.uws"), "--report", &fit,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = std::fs::read_to_string(fit).unwrap();
    assert!(fit.contains("# method=gd\n") && fit.contains("epoch,loss\n"));
    let set = universal_subspace::ensemble::CoefficientSet::load(p(d, "a.uws")).unwrap();
    assert_eq!(set.coefficients.len(), 2);
}

#[test]
fn memcalc_bounds_dk() {
    let out = uws(&["memcalc", "--t", "500", "--per-model", "131072", "--basis", "262144", "--coeffs", "512"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("custom,500,131072,262144,512,0,126.48221343873517"));
    assert_eq!(uws(&["memcalc", "--t", "0", "--per-model", "1", "--basis", "1", "--coeffs", "1"]).status.code(), Some(2));

    let out = uws(&["theory", "bounds", "--b", "1", "--delta", "0.5", "--t", "100", "--eta-bar", "0.1", "--eta2-bar", "0.01", "--gamma-k", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.2932554611157698,1.173021844463079"));
    let out = uws(&["theory", "bounds", "--b", "1", "--delta", "0.5", "--t", "100", "--eta-bar", "0.1", "--eta2-bar", "0.01", "--gamma-k", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = uws(&["theory", "dk-check", "--d", "8", "--trials", "100", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 violations"));
}
