use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nrsfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrsfm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nrsfm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    nrsfm(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut a = vec!["synth", "--out-dir", s(dir)];
    a.extend_from_slice(extra);
    ok(&a);
}

fn reconstruct(trk: &Path, out: &Path, mode: &str) -> String {
    ok(&["reconstruct", "--in", s(trk), "--bases", "2", "--mode", mode, "--out-dir", s(out)])
}

#[test]
fn synth_defaults_and_clean_copy() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &[]);
    let trk = fs::read_to_string(d.path().join("tracking.trk")).unwrap();
    assert_eq!(trk.lines().nth(1), Some("frames=100 points=252"));
    assert_eq!(fs::read(d.path().join("clean.trk")).unwrap(), trk.as_bytes());
    let m = json(&d.path().join("manifest.json"));
    assert_eq!(m["format_version"], 1);
    assert_eq!(m["outputs"].as_object().unwrap().len(), 3);
    assert!(m.get("timestamp").is_none());
}

#[test]
fn synth_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let args = ["--frames", "20", "--noise", "1", "--outliers", "0.1", "--seed", "7"];
    synth(d.path(), &args);
    let first = fs::read(d.path().join("manifest.json")).unwrap();
    synth(d.path(), &args);
    assert_eq!(fs::read(d.path().join("manifest.json")).unwrap(), first);
    let digests = json(&d.path().join("manifest.json"))["outputs"].clone();
    let e = tempfile::tempdir().unwrap();
    synth(e.path(), &args);
    assert_eq!(json(&e.path().join("manifest.json"))["outputs"], digests);
}

#[test]
fn invalid_flags_are_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&["synth", "--out-dir", s(d.path()), "--outliers", "1.5"]), 2);
    assert_eq!(code(&["synth", "--out-dir", s(d.path()), "--noise", "-1"]), 2);
    assert_eq!(code(&["reconstruct", "--in", "x.trk", "--bases", "0", "--out-dir", s(d.path())]), 2);
    assert_eq!(code(&["reconstruct", "--in", "x.trk", "--bases", "1", "--mode", "svd", "--out-dir", "o"]), 2);
    assert_eq!(code(&["sweep", "--noise", "5:1:1", "--out-dir", s(d.path())]), 2);
    assert_eq!(code(&["bogus"]), 2);
}

#[test]
fn missing_files_are_io_errors() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&["reconstruct", "--in", s(&p.join("none.trk")), "--bases", "2", "--out-dir", s(p)]), 3);
    fs::write(p.join("bad.trk"), "not a trk file\n").unwrap();
    assert_eq!(code(&["reconstruct", "--in", s(&p.join("bad.trk")), "--bases", "2", "--out-dir", s(p)]), 3);
    synth(&p.join("s"), &["--frames", "12"]);
    reconstruct(&p.join("s/tracking.trk"), &p.join("r"), "robust");
    assert_eq!(code(&["eval", "--recon", s(&p.join("r")), "--gt", s(&p.join("missing.json"))]), 3);
}

#[test]
fn clean_reconstruction_scores_zero() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(&p.join("s"), &[]);
    reconstruct(&p.join("s/tracking.trk"), &p.join("r"), "robust");
    let audit = json(&p.join("r/audit.json"));
    for r in audit["rounds"].as_array().unwrap() {
        assert_eq!(r["rejected_count"], 0);
    }
    let xyz = fs::read_to_string(p.join("r/frames/frame_0099.xyz")).unwrap();
    assert_eq!(xyz.lines().count(), 252);
    assert_eq!(xyz.lines().next().unwrap().split(' ').count(), 3);

    let out = ok(&["eval", "--recon", s(&p.join("r")), "--gt", s(&p.join("s/ground_truth.json"))]);
    assert!(out.contains("reprojection variance"));
    let m = json(&p.join("r/metrics.json"));
    assert!(m["reproj_variance_inliers"].as_f64().unwrap() < 1e-16);
    assert!(m["reproj_rms"].as_f64().unwrap() < 1e-8);
    assert!(m["shape_error"].as_f64().unwrap() < 1e-5);
    assert!(m.get("detection_recall").is_none());
}

#[test]
fn direct_is_worse_than_robust_under_outliers() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(&p.join("s"), &["--noise", "3", "--outliers", "0.1", "--seed", "3"]);
    let gt = p.join("s/ground_truth.json");
    let mut var = Vec::new();
    for mode in ["direct", "robust"] {
        let r = p.join(mode);
        reconstruct(&p.join("s/tracking.trk"), &r, mode);
        ok(&["eval", "--recon", s(&r), "--gt", s(&gt)]);
        var.push(json(&r.join("metrics.json"))["reproj_variance_inliers"].as_f64().unwrap());
    }
    assert!(var[0] >= 3.0 * var[1], "direct {} robust {}", var[0], var[1]);
    let m = json(&p.join("robust/metrics.json"));
    assert!(m["detection_precision"].as_f64().unwrap() >= 0.95);
    assert!(m["detection_recall"].as_f64().unwrap() >= 0.95);
}

#[test]
fn eval_rejects_mismatched_ground_truth() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(&p.join("a"), &["--frames", "12"]);
    synth(&p.join("b"), &["--frames", "13"]);
    reconstruct(&p.join("a/tracking.trk"), &p.join("r"), "robust");
    let out = nrsfm(&["eval", "--recon", s(&p.join("r")), "--gt", s(&p.join("b/ground_truth.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

/// Rewrites rows of a TRK body; `f(row, tokens)`.
fn edit_trk(src: &Path, dst: &Path, f: impl Fn(usize, &mut Vec<String>)) {
    let text = fs::read_to_string(src).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for (row, line) in lines.iter_mut().skip(2).enumerate() {
        let mut toks: Vec<String> = line.split(' ').map(String::from).collect();
        f(row, &mut toks);
        *line = toks.join(" ");
    }
    fs::write(dst, lines.join("\n") + "\n").unwrap();
}

#[test]
fn pipeline_failures_have_their_own_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(&p.join("s"), &["--frames", "20", "--noise", "1"]);
    let src = p.join("s/tracking.trk");
    let o = p.join("o");
    let run = |trk: &Path, bases: &str, extra: &[&str]| {
        let mut a = vec!["reconstruct", "--in", s(trk), "--bases", bases, "--out-dir", s(&o)];
        a.extend_from_slice(extra);
        nrsfm(&a)
    };

    // Frame 5 keeps three points.
    let sparse = p.join("sparse.trk");
    edit_trk(&src, &sparse, |row, t| {
        if row / 2 == 5 {
            t.iter_mut().skip(3).for_each(|x| *x = "NaN".into());
        }
    });
    let out = run(&sparse, "2", &[]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 1"));

    // Every frame seen by the same camera.
    let still = p.join("still.trk");
    let text = fs::read_to_string(&src).unwrap();
    let first: Vec<String> = text.lines().skip(2).take(2).map(String::from).collect();
    edit_trk(&src, &still, |row, t| *t = first[row % 2].split(' ').map(String::from).collect());
    let out = run(&still, "1", &[]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&src, "2", &["--threshold-multiplier", "1e-9", "--rejection-rounds", "5"]);
    assert_eq!(out.status.code(), Some(6), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!p.join("o/manifest.json").exists());
}

#[test]
fn sweep_smoke_and_jobs_invariance() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let base = ["sweep", "--trials", "1", "--noise", "0:0:1", "--ratios", "0", "--frames", "30"];
    let z = p.join("z");
    let mut a = base.to_vec();
    a.extend_from_slice(&["--out-dir", s(&z)]);
    let csv = ok(&a);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let v: f64 = l.split(',').nth(4).unwrap().parse().unwrap();
        assert!(v < 1e-12, "{l}");
    }

    let grid = ["sweep", "--trials", "2", "--noise", "1:2:1", "--ratios", "0.1", "--frames", "40"];
    let mut runs = Vec::new();
    for jobs in ["1", "3"] {
        let dir = p.join(format!("j{jobs}"));
        let mut a = grid.to_vec();
        a.extend_from_slice(&["--jobs", jobs, "--out-dir", s(&dir)]);
        ok(&a);
        runs.push((fs::read(dir.join("sweep.csv")).unwrap(), json(&dir.join("manifest.json"))));
    }
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1["outputs"], runs[1].1["outputs"]);
    assert_eq!(runs[0].1["config"], runs[1].1["config"]);
}
