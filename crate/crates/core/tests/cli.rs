use std::path::Path;
use std::process::Command;

use indlab::harness::{RunManifest, CLUSTERS_FILE, EVENTS_FILE, FAILED_MARKER, METRICS_FILE, METRICS_HEADER, TRACE_FILE};
use indlab::infometrics::mutual_info_pair;
use indlab::population::{Alphabet, StateTrace};

fn indlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_indlab")).args(args).env("INDLAB_THREADS", "2").output().unwrap()
}

fn code(out: &std::process::Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_emits_file_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = indlab(&["run", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["closures.csv", "clusters.csv", "events.csv", "manifest.json", "metrics.csv", "trace.csv"]);
    let manifest = RunManifest::load(dir.path()).unwrap();
    assert!(manifest.verify(dir.path()).unwrap().is_empty());
    let metrics = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
    // every float carries exactly six decimals
    for row in metrics.lines().skip(1) {
        for field in row.split(',').skip(1).filter(|f| f.contains('.')) {
            assert_eq!(field.split('.').nth(1).unwrap().len(), 6, "{row}");
        }
    }
}

#[test]
fn seed_flag_controls_output_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "4"), (&b, "4"), (&c, "5")] {
        assert_eq!(code(&indlab(&["run", "--seed", seed, "--out", s(dir.path())])), 0);
    }
    let ma = RunManifest::load(a.path()).unwrap();
    let mb = RunManifest::load(b.path()).unwrap();
    let mc = RunManifest::load(c.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ma.seed, 4);
    assert_ne!(ma.files[0].sha256, mc.files[0].sha256);
    assert_ne!(ma.config_hash, mc.config_hash);
}

#[test]
fn analyze_reproduces_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let re_dir = dir.path().join("re");
    assert_eq!(code(&indlab(&["run", "--seed", "2", "--out", s(&run_dir)])), 0);
    let trace = run_dir.join(TRACE_FILE);
    let out = indlab(&["analyze", "--seed", "2", "--trace", s(&trace), "--out", s(&re_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [METRICS_FILE, CLUSTERS_FILE, EVENTS_FILE] {
        assert_eq!(std::fs::read(run_dir.join(f)).unwrap(), std::fs::read(re_dir.join(f)).unwrap(), "{f}");
    }
    assert!(!re_dir.join(TRACE_FILE).exists());
}

#[test]
fn hand_built_copy_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.csv");
    // agents 0 and 1 always agree; agent 2 is independent of both; the four
    // joint states appear equally often
    let mut text = String::from("tick,a0,a1,a2\n");
    for t in 0..4096u32 {
        let (x, z) = (t & 1, (t >> 1) & 1);
        text.push_str(&format!("{},{x},{x},{z}\n", t + 1));
    }
    std::fs::write(&path, text).unwrap();
    let trace = StateTrace::read_csv(std::io::BufReader::new(std::fs::File::open(&path).unwrap()), Alphabet::BINARY, None).unwrap();
    let w = trace.take_window(4096).unwrap();
    assert!((mutual_info_pair(&w, 0, 1).unwrap().value() - 1.0).abs() <= 0.02);
    assert!(mutual_info_pair(&w, 0, 2).unwrap().value() <= 0.02);

    let config = dir.path().join("cfg.json");
    std::fs::write(&config, r#"{"scenario": {"kind": "disparate", "n": 3}, "window": 1024}"#).unwrap();
    let out = indlab(&["analyze", "--config", s(&config), "--trace", s(&path), "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let scan = indlab(&["scan", "--config", s(&config), "--trace", s(&path)]);
    let stdout = String::from_utf8(scan.stdout).unwrap();
    assert!(stdout.lines().nth(1).unwrap().starts_with("4096,0-1,"), "{stdout}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"windw": 4096}"#).unwrap();
    let out = indlab(&["run", "--config", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("windw"));

    std::fs::write(&bad, r#"{"noise": 3.0}"#).unwrap();
    assert_eq!(code(&indlab(&["run", "--config", s(&bad)])), 1);
    assert_eq!(code(&indlab(&["run", "--config", s(&dir.path().join("missing.json"))])), 1);
    assert_eq!(code(&indlab(&["run", "--bogus"])), 1);

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&indlab(&["run", "--out", s(&blocker.join("sub"))])), 2);

    let trunc = dir.path().join("t.csv");
    std::fs::write(&trunc, "tick,a0,a1\n1,0,1\n2,1,1\n3,0\n").unwrap();
    let out_dir = dir.path().join("o");
    let out = indlab(&["analyze", "--trace", s(&trunc), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    assert!(out_dir.join(FAILED_MARKER).exists());
    assert!(!out_dir.join("manifest.json").exists());

    assert_eq!(code(&indlab(&["scenarios"])), 0);
}
