use std::path::Path;
use std::process::Command;

use nhflow::cli::{self, snapshot, RunConfig, EXIT_BLOWUP, EXIT_CONFIG, EXIT_DEGENERACY, EXIT_OK, EXIT_VERIFY};

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("nhflow").chain(args.iter().copied()))
}

fn out(dir: &Path) -> String {
    format!("output=\"{}\"", dir.display())
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,dt"));
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_nhflow");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[flow]\nschme = \"linear\"\n").unwrap();
    let st = Command::new(exe).args(["flow", bad.to_str().unwrap()]).status().unwrap();
    assert_eq!(st.code(), Some(EXIT_CONFIG));
    let st = Command::new(exe).arg("--help").output().unwrap();
    assert_eq!(st.status.code(), Some(EXIT_OK));
    let st = Command::new(exe).arg("frobnicate").status().unwrap();
    assert_eq!(st.code(), Some(EXIT_CONFIG));
}

#[test]
fn flow_on_omega_is_trivial() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "flow",
        "--override",
        &out(dir.path()),
        "--override",
        "grid.dims=[8,8,8,8]",
        "--override",
        "flow.t_end=0.3",
    ]);
    assert_eq!(code, EXIT_OK);
    let r = rows(&dir.path().join("series.csv"));
    assert_eq!(r.len(), 4);
    for row in &r {
        assert_eq!(row.len(), 14);
        assert_eq!(row[3], 0.0, "E0");
        assert_eq!((row[4], row[5]), (1.0, 1.0), "u");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "completed");
    assert!(summary["event"].is_null());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path());
    assert_eq!(run(&["flow", "--override", &o, "--override", "flow.scheme=nope"]), EXIT_CONFIG);
    assert_eq!(run(&["flow", "--override", &o, "--override", "grid.dims=[8,8,8]"]), EXIT_CONFIG);
    assert_eq!(run(&["flow", "/nonexistent/config.toml"]), EXIT_CONFIG);
    // degenerate initial data is a precondition failure, not an event
    assert_eq!(
        run(&["reduced", "--override", &o, "--override", "reduced.amplitude=1.5", "--override", "reduced.dims=[16,16]"]),
        EXIT_CONFIG
    );
}

#[test]
fn counterexample_degenerates() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&["counterexample", "--override", &out(dir.path()), "--override", "counterexample.dims=[32,8,8,8]"]);
    assert_eq!(code, EXIT_DEGENERACY);
    let r = rows(&dir.path().join("series.csv"));
    let last = r.last().unwrap();
    assert!(last[0] > 0.0 && last[0] < 1.0);
    assert!(last[4] < 1e-6, "terminal minU {}", last[4]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["event"]["cause"], "u_floor");
    assert!(summary["details"]["analytic_min_u_t1"].as_f64().unwrap() < 0.0);
}

#[test]
fn counterexample_with_zero_amplitude_stays_volume_one() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "counterexample",
        "--override",
        &out(dir.path()),
        "--override",
        "counterexample.a0=0.0",
        "--override",
        "counterexample.dims=[16,8,8,8]",
        "--override",
        "counterexample.t_end=0.2",
    ]);
    assert_eq!(code, EXIT_OK);
    for row in rows(&dir.path().join("series.csv")) {
        assert_eq!((row[4], row[5]), (1.0, 1.0));
    }
}

#[test]
fn reduced_models_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path());
    let code = run(&["reduced", "--override", &o, "--override", "reduced.dims=[32,32]", "--override", "reduced.t_end=1"]);
    assert_eq!(code, EXIT_OK);
    let r = rows(&dir.path().join("series.csv"));
    assert_eq!(r.len(), 11);
    assert!(r.windows(2).all(|w| w[1][5] < w[0][5]), "sup deviation decreases");
    let code = run(&[
        "reduced",
        "--override",
        &o,
        "--override",
        "reduced.model=ab_system",
        "--override",
        "reduced.dims=[16,16]",
        "--override",
        "reduced.amplitude=0.1",
        "--override",
        "reduced.t_end=0.3",
    ]);
    assert_eq!(code, EXIT_OK);
    let code = run(&["reduced", "--override", &o, "--override", "reduced.model=ab_system", "--override", "reduced.dims=[16]"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn soliton_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path());
    assert_eq!(run(&["soliton", "--override", &o, "--override", "soliton.n=32"]), EXIT_OK);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["error_vs_manufactured"].as_f64().unwrap() < 1e-8);
    let (g, comps) = snapshot::decode(&std::fs::read(dir.path().join("solution.nhf")).unwrap()).unwrap();
    assert_eq!((g.dims(), comps.len()), (&[32usize, 32][..], 1));
    assert_eq!(
        run(&["soliton", "--override", &o, "--override", "soliton.n=32", "--override", "soliton.max_iter=2"]),
        EXIT_BLOWUP
    );
}

#[test]
fn verify_exit_codes() {
    assert_eq!(run(&["verify", "--override", "verify.suite=algebra", "--override", "verify.samples=2"]), EXIT_OK);
    // 12⁴ cannot resolve the nonlinear residuals to 1e-7
    assert_eq!(run(&["verify", "--override", "verify.suite=identities", "--override", "verify.resolution=12"]), EXIT_VERIFY);
    assert_eq!(run(&["verify", "--override", "verify.suite=bogus"]), EXIT_CONFIG);
    assert_eq!(run(&["poincare", "--override", "grid.dims=[8,8,8,8]", "--override", "poincare.probes=3"]), EXIT_OK);
}

#[test]
fn determinism_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.toml");
    std::fs::write(
        &cfg,
        "[grid]\ndims = [8, 8, 8, 8]\n[flow]\nscheme = \"matrix_a1\"\nt_end = 0.2\nsample_every = 0.05\nsnapshot_every = 0.1\n[scenario]\nkind = \"random_near_omega\"\neps = 0.1\nband = 2\nseed = 3\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["flow", c, "--override", &out(&d.join("a"))]), EXIT_OK);
    assert_eq!(run(&["flow", c, "--override", &out(&d.join("b"))]), EXIT_OK);
    assert_eq!(std::fs::read(d.join("a/series.csv")).unwrap(), std::fs::read(d.join("b/series.csv")).unwrap());

    // snap_<step>.nhf names sort by step; the first is the mid-run checkpoint
    let mut snaps: Vec<_> = std::fs::read_dir(d.join("a/snapshots"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "nhf") && !p.ends_with("final.nhf"))
        .collect();
    snaps.sort();
    assert_eq!(snaps.len(), 2);
    let snap = snaps.remove(0);
    let (state, meta) = snapshot::snapshot_read(&snap).unwrap();
    let meta = meta.unwrap();
    assert!((state.t - 0.1).abs() < 1e-12 && meta.scheme == "matrix_a1");
    let cfg_parsed = RunConfig::load(Some(&cfg), &[out(&d.join("a"))]).unwrap();
    assert_eq!(meta.config_digest, cfg_parsed.digest());

    let resume = format!("flow.resume=\"{}\"", snap.display());
    assert_eq!(run(&["flow", c, "--override", &out(&d.join("r")), "--override", &resume]), EXIT_OK);
    let fa = snapshot::read_two_form(&d.join("a/snapshots/final.nhf")).unwrap();
    let fr = snapshot::read_two_form(&d.join("r/snapshots/final.nhf")).unwrap();
    assert!(fa.max_abs_diff(&fr) <= 1e-12);

    // wrong scheme for the snapshot, and a truncated snapshot
    let bad = ["--override", "flow.scheme=linear", "--override", &resume];
    assert_eq!(run(&[&["flow", c, "--override", &out(&d.join("x"))][..], &bad[..]].concat()), EXIT_CONFIG);
    let bytes = std::fs::read(&snap).unwrap();
    let cut = d.join("cut.nhf");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let resume_cut = format!("flow.resume=\"{}\"", cut.display());
    assert_eq!(run(&["flow", c, "--override", &out(&d.join("y")), "--override", &resume_cut]), EXIT_CONFIG);
}
