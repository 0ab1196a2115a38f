//! End-to-end checks of the `qprobe` binary: artifact layout, exit codes,
//! determinism and flag handling, all through a real subprocess.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qprobe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn strip_stamp(text: &str) -> String {
    text.lines().filter(|l| !l.contains("generated_at")).collect::<Vec<_>>().join("\n")
}

#[test]
fn list_bundled_names_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = qprobe(&["list-bundled"], dir.path());
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for name in ["vacuum-smoke", "ens-thermal", "duan-tmsv"] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn validate_reports_cost_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = qprobe(&["validate", "duan-tmsv"], dir.path());
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("ok: duan-tmsv"), "{text}");
    assert!(text.contains("14 state preparation(s)"), "{text}");
    // Nothing was executed, so nothing may be written.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn run_writes_the_documented_artifact_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = qprobe(&["run", "vacuum-smoke", "--out", "out"], dir.path());
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("scenario vacuum-smoke"), "{text}");
    assert!(text.contains("observable"), "{text}");

    let root = dir.path().join("out/vacuum-smoke");
    let results: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("results.json")).unwrap()).unwrap();
    assert!(results["generated_at"].is_string());
    let report = &results["report"];
    assert_eq!(report["name"], "vacuum-smoke");
    assert_eq!(report["results"].as_array().unwrap().len(), 3);

    for entry in report["results"].as_array().unwrap() {
        for run in entry["runs"].as_array().unwrap() {
            let csv_path = root.join(run["file"].as_str().unwrap());
            let csv = fs::read_to_string(&csv_path).unwrap();
            assert!(csv.starts_with("# projector:"), "{}", csv_path.display());
            assert!(csv.contains("\ntau,value\n"));
            let rows = csv.lines().skip_while(|l| *l != "tau,value").skip(1).count();
            assert_eq!(rows as u64, run["points"].as_u64().unwrap());
        }
    }
}

#[test]
fn repeat_runs_differ_only_in_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    for out_dir in ["a", "b"] {
        let out = qprobe(&["run", "ens-thermal", "--out", out_dir], dir.path());
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    }
    let read = |sub: &str| {
        fs::read_to_string(dir.path().join(sub).join("ens-thermal/results.json")).unwrap()
    };
    let (a, b) = (read("a"), read("b"));
    let differing = a.lines().zip(b.lines()).filter(|(x, y)| x != y).count();
    assert!(differing <= 1, "{differing} lines differ");
    assert_eq!(strip_stamp(&a), strip_stamp(&b));
}

const SAMPLED_SCENARIO: &str = r#"
schema = 1
name = "sampled"
truncation = 12
shots = 500
seed = 3

[[field]]
kind = "coherent"
re = 0.8

[grid]
min = -1.0
max = 1.0
points = 21

[estimator]
name = "polyfit"
degree = 4
window = 1.0

[[observables]]
kind = "y"
"#;

#[test]
fn seed_flag_overrides_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SAMPLED_SCENARIO).unwrap();

    let run = |out_dir: &str, seed: &str| {
        let out = qprobe(
            &["run", "s.toml", "--out", out_dir, "--seed", seed],
            dir.path(),
        );
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
        fs::read_to_string(dir.path().join(out_dir).join("sampled/results.json")).unwrap()
    };
    let seven_a = run("a", "7");
    let seven_b = run("b", "7");
    let eight = run("c", "8");

    assert_eq!(strip_stamp(&seven_a), strip_stamp(&seven_b));
    assert_ne!(strip_stamp(&seven_a), strip_stamp(&eight), "seed must reach the sampler");

    let report: serde_json::Value = serde_json::from_str(&seven_a).unwrap();
    assert_eq!(report["report"]["seed"], 7);
    let input = &report["report"]["results"][0]["moments"][0]["inputs"][0];
    assert!(
        input["fit_residual"].as_f64().unwrap() > 0.0,
        "polyfit runs report their fit residual"
    );
}

#[test]
fn jobs_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    for (out_dir, jobs) in [("a", "1"), ("b", "3")] {
        let out = qprobe(
            &["run", "vacuum-smoke", "--out", out_dir, "--jobs", jobs],
            dir.path(),
        );
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    }
    let read = |sub: &str| {
        fs::read_to_string(dir.path().join(sub).join("vacuum-smoke/results.json")).unwrap()
    };
    assert_eq!(strip_stamp(&read("a")), strip_stamp(&read("b")));
}

#[test]
fn numerical_breakdown_exits_3() {
    let dir = tempfile::tempdir().unwrap();

    // Passes the state-build leakage gate (loose tol) but trips the runtime
    // alarm: the top Fock level carries ~6e-4 of population during the run.
    let alarmed = r#"
schema = 1
name = "alarmed"
truncation = 8
leakage_tol = 1e-2

[[field]]
kind = "coherent"
re = 1.2

[grid]
min = -1.0
max = 1.0
points = 21

[[observables]]
kind = "x"
"#;
    fs::write(dir.path().join("alarmed.toml"), alarmed).unwrap();
    let out = qprobe(&["run", "alarmed.toml", "--out", "out"], dir.path());
    assert_eq!(exit_code(&out), 3, "{}\n{}", stdout(&out), stderr(&out));
    assert!(stderr(&out).contains("leakage alarm"), "{}", stderr(&out));
    // Artifacts still land on disk for inspection.
    let results = dir.path().join("out/alarmed/results.json");
    let text = fs::read_to_string(results).unwrap();
    assert!(text.contains("\"leakage_alarm\": true"));

    // Fails the build gate outright: same exit class, no artifacts.
    let overfull = alarmed
        .replace("re = 1.2", "re = 2.0")
        .replace("leakage_tol = 1e-2", "")
        .replace("name = \"alarmed\"", "name = \"overfull\"");
    fs::write(dir.path().join("overfull.toml"), overfull).unwrap();
    let out = qprobe(&["run", "overfull.toml", "--out", "out"], dir.path());
    assert_eq!(exit_code(&out), 3, "{}", stderr(&out));
    assert!(!dir.path().join("out/overfull").exists());
}

#[test]
fn bad_inputs_exit_2_with_context() {
    let dir = tempfile::tempdir().unwrap();

    let out = qprobe(&["run", "no-such-scenario"], dir.path());
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("vacuum-smoke"), "{}", stderr(&out));

    let typo = SAMPLED_SCENARIO.replace("min = -1.0", "min = -1.0\nstrde = 2");
    fs::write(dir.path().join("typo.toml"), typo).unwrap();
    let out = qprobe(&["validate", "typo.toml"], dir.path());
    assert_eq!(exit_code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("typo.toml") && err.contains("unknown field"), "{err}");
    assert!(err.contains("line"), "parse errors carry a location: {err}");

    let stencil = SAMPLED_SCENARIO
        .replace("name = \"polyfit\"\ndegree = 4\nwindow = 1.0", "name = \"central_fd\"");
    fs::write(dir.path().join("stencil.toml"), stencil).unwrap();
    let out = qprobe(&["run", "stencil.toml"], dir.path());
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("stencil"), "{}", stderr(&out));
}

#[test]
fn compare_benchmarks_all_four_estimators() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SAMPLED_SCENARIO).unwrap();
    let out = qprobe(&["compare", "s.toml", "--out", "out"], dir.path());
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("kernel width sweep"), "{text}");

    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/sampled/compare.json")).unwrap(),
    )
    .unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        assert!(row["noiseless_gap"].as_f64().unwrap() < 1e-6, "{row}");
        assert!(row["shot_std"].as_f64().unwrap() > 0.0, "{row}");
    }
    assert_eq!(report["seeds"], 20);
}
