use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use renaissance::topology::{edge_connectivity, load_topology};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn renaissance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_renaissance")).args(args).env_remove("RENAISSANCE_LOG").output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.cfg");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn b4_bootstrap_row() {
    let out = renaissance(&["run", fixture("b4-bootstrap.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], renaissance_cli::CSV_HEADER.join(","));
    assert!(lines[1].starts_with("b4-bootstrap,0,true,"), "{}", lines[1]);
    assert_eq!(lines.len(), 2);
}

#[test]
fn seed_sweep_gives_one_row_per_seed_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let out = renaissance(&[
        "run",
        fixture("ring8-corrupt.cfg").to_str().unwrap(),
        "--seeds",
        "1..20",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let mut r = csv::Reader::from_path(&csv).unwrap();
    let seeds: Vec<u64> = r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(seeds, (1..=20).collect::<Vec<u64>>());
}

#[test]
fn csv_appends_without_repeating_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let cfg = fixture("ring8-corrupt.cfg");
    for seed in ["4", "5"] {
        let out = renaissance(&["run", cfg.to_str().unwrap(), "--seed", seed, "--csv", csv.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    let body = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().count(), 3);
    assert_eq!(body.matches("scenario_id").count(), 1);
}

#[test]
fn missing_topology_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "topology=nowhere/none.topo\n");
    let out = renaissance(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("none.topo"), "{}", text(&out.stderr));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "topology=x.topo\nkappa=lots\n");
    let out = renaissance(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains(":2:"), "{}", text(&out.stderr));
    assert_eq!(renaissance(&["run"]).status.code(), Some(2));
    assert_eq!(renaissance(&["launch"]).status.code(), Some(2));
}

#[test]
fn covered_non_convergence_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("topology={}\nmax_steps=50\n", fixture("b4.topo").display()));
    let out = renaissance(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains(",false,"));
}

#[test]
fn best_effort_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("path.topo"), "1 3\n1-2\n2-3\n3-4\n").unwrap();
    let cfg = write_config(dir.path(), "topology=path.topo\nkappa=1\nmax_steps=50\n");
    let out = renaissance(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
}

#[test]
fn verify_reports_pass_and_fail() {
    let out = renaissance(&["verify", fixture("b4.topo").to_str().unwrap(), "--kappa", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let report = text(&out.stdout);
    assert!(report.contains("edge connectivity 2"));
    assert!(report.ends_with("PASS\n"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.topo");
    std::fs::write(&path, "1 3\n1-2\n2-3\n3-4\n").unwrap();
    let out = renaissance(&["verify", path.to_str().unwrap(), "--kappa", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let report = text(&out.stdout);
    assert!(report.contains("warning"));
    assert!(report.contains("witness cut: "), "{report}");
    assert!(report.ends_with("FAIL\n"));
}

#[test]
fn gen_writes_loadable_topologies() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str], usize); 4] = [
        ("ring", &["n=8"], 8),
        ("grid", &["rows=3", "cols=3"], 9),
        ("clos-lite", &["spine=2", "leaf=4"], 6),
        ("random", &["n=10", "k=2", "seed=7"], 10),
    ];
    for (family, params, switches) in cases {
        let out_path = dir.path().join(format!("{family}.topo"));
        let mut args = vec!["gen", family];
        args.extend_from_slice(params);
        args.extend_from_slice(&["-o", out_path.to_str().unwrap()]);
        let out = renaissance(&args);
        assert_eq!(out.status.code(), Some(0), "{family}: {}", text(&out.stderr));
        let g = load_topology(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
        assert_eq!(g.switches().count(), switches, "{family}");
        assert!(edge_connectivity(&g) >= 2, "{family}");
    }
    let a = std::fs::read(dir.path().join("random.topo")).unwrap();
    let again = dir.path().join("again.topo");
    renaissance(&["gen", "random", "n=10", "k=2", "seed=7", "-o", again.to_str().unwrap()]);
    assert_eq!(a, std::fs::read(&again).unwrap());

    let bad = renaissance(&["gen", "ring", "n=2", "-o", dir.path().join("x").to_str().unwrap()]);
    assert_ne!(bad.status.code(), Some(0));
}

#[test]
fn trace_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.txt");
    let out = renaissance(&["run", fixture("ring8-corrupt.cfg").to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let body = std::fs::read_to_string(&trace).unwrap();
    let frames = renaissance::engine::frame_count(body.lines());
    assert!(!frames.is_empty());
    assert!(body.lines().all(|l| l.split(' ').count() >= 3));
}
