use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_locc-blocks"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn report(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(out));
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

#[test]
fn cnot_enumerates_four_branches() {
    let out = run(&["--config", config("cnot.json").to_str().unwrap()]);
    let r = report(&out);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["mode"], "enumerate");
    assert_eq!(r["passed"], true);
    let branches = r["branches"].as_array().unwrap();
    assert_eq!(branches.len(), 4);
    for b in branches {
        assert!((b["probability"].as_f64().unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(b["trace"]["ledger"]["total_ebits"], 1);
        assert_eq!(b["trace"]["ledger"]["total_cbits"], 2);
        // |10⟩ ↦ |11⟩
        assert_eq!(b["trace"]["final_state"]["amps"][3][0], 1.0);
    }
    assert!(stderr(&out).contains("1 ebits, 2 cbits"));
}

#[test]
fn three_party_verify_reports_sixteen_branches() {
    for name in ["three-party-haar.json", "three-party-ccz.json"] {
        three_party_case(name);
    }
}

fn three_party_case(name: &str) {
    let out = run(&["--config", config(name).to_str().unwrap()]);
    let r = report(&out);
    assert_eq!(r["mode"], "verify");
    assert_eq!(r["protocol"], "three-party");
    assert_eq!(r["summary"]["branches"], 16);
    assert_eq!(r["resources"]["total_ebits"], 2);
    assert_eq!(r["resources"]["total_cbits"], 4);
    for b in r["branches"].as_array().unwrap() {
        assert_eq!(b["steps"].as_array().unwrap().len(), 5);
        assert!(b.get("trace").is_none());
    }
    assert!(stderr(&out).contains("2 ebits, 4 cbits"));
}

#[test]
fn every_shipped_config_verifies() {
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")).unwrap() {
        let path = entry.unwrap().path();
        for mode in ["enumerate", "sample", "verify"] {
            let out = run(&["--config", path.to_str().unwrap(), "--mode", mode]);
            assert_eq!(
                out.status.code(),
                Some(0),
                "{} {mode}: {}",
                path.display(),
                stderr(&out)
            );
        }
    }
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let outputs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let path = dir.path().join(format!("r{i}.json"));
            let out = run(&[
                "--config",
                config("multiqubit-random.json").to_str().unwrap(),
                "--mode",
                "sample",
                "--seed",
                "8",
                "--out",
                path.to_str().unwrap(),
            ]);
            assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
            assert!(out.stdout.is_empty());
            fs::read(path).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);

    let other = run(&[
        "--config",
        config("multiqubit-random.json").to_str().unwrap(),
        "--mode",
        "sample",
        "--seed",
        "9",
    ]);
    assert_ne!(
        report(&other)["operation"],
        serde_json::from_slice::<Value>(&outputs[0]).unwrap()["operation"]
    );
}

#[test]
fn sample_mode_honours_sample_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let text = fs::read_to_string(config("offdiagonal-random.json")).unwrap();
    fs::write(&cfg, text.replace("\"seed\"", "\"samples\": 7, \"seed\"")).unwrap();
    let r = report(&run(&["--config", cfg.to_str().unwrap(), "--mode", "sample"]));
    assert_eq!(r["branches"].as_array().unwrap().len(), 7);
}

#[test]
fn non_unitary_block_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let text = fs::read_to_string(config("cnot.json")).unwrap();
    // unnormalized Hadamard as the second block
    let bad = text.replace("[[[0,0],[1,0]],[[1,0],[0,0]]]", "[[[1,0],[1,0]],[[1,0],[-1,0]]]");
    assert_ne!(bad, text);
    fs::write(&cfg, bad).unwrap();
    let out = run(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("blocks[1] fails unitarity"),
        "{}",
        stderr(&out)
    );
    assert!(out.stdout.is_empty());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
    assert_eq!(run(&["--selftest", "--grid", "n=x"]).status.code(), Some(2));
    let bad_mode = run(&[
        "--config",
        config("cnot.json").to_str().unwrap(),
        "--mode",
        "guess",
    ]);
    assert_eq!(bad_mode.status.code(), Some(2));
}

#[test]
fn corrupted_run_exits_one_and_names_the_step() {
    let out = run(&[
        "--config",
        config("multiqubit-random.json").to_str().unwrap(),
        "--corrupt-correction-order",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.contains("verification failed: bipartite-multiqubit branch "),
        "{err}"
    );
    assert!(err.contains("after step 5"), "{err}");
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["passed"], false);
}

#[test]
fn selftest_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("selftest.json");
    let out = run(&[
        "--selftest",
        "--grid",
        "n=1,2;m=1;cases=3",
        "--seed",
        "5",
        "--out",
        path.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", stderr(&out));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 10);
    assert!(stdout.contains("selftest passed"));

    let r: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    assert_eq!(r["schema"], 1);
    assert_eq!(r["criteria"].as_array().unwrap().len(), 10);
}

#[test]
fn restricting_the_grid_runs_fewer_cases() {
    let cases = |grid: &str| -> u64 {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let out = run(&["--selftest", "--grid", grid, "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let r: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        r["criteria"][4]["cases"].as_u64().unwrap()
    };
    // criterion 5 runs `cases` per (N, M) shape
    assert_eq!(cases("n=1;cases=4"), 4 * 2);
    assert_eq!(cases("n=1,2,3;cases=4"), 4 * 6);
}

#[test]
fn corrupted_selftest_fails_criterion_five() {
    let out = run(&[
        "--selftest",
        "--grid",
        "n=2;m=1;cases=3",
        "--corrupt-correction-order",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("criterion 5"), "{err}");
    assert!(err.contains("after step 5"), "{err}");
}
