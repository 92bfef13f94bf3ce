use std::path::Path;
use std::process::{Command, Output};

fn webstack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webstack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[test]
fn scenario_gen_prints_a_scenario() {
    let o = webstack(&["scenario", "gen", "--seed", "7", "--kind", "find-flight"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["scenario"], "TASK_FIND_FLIGHT");
    assert_eq!(webstack(&["scenario", "gen", "--seed", "7"]).status.code(), Some(0));
    assert_eq!(webstack(&["scenario", "gen", "--seed", "7", "--kind", "fly"]).status.code(), Some(1));
    assert_eq!(webstack(&["scenario", "gen"]).status.code(), Some(1));
    assert_eq!(webstack(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let t = trace.to_str().unwrap();
    let o = webstack(&["run", "--kind", "BOOK_FLIGHT", "--seed", "3", "--agent", "flat", "--trace-out", t]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["metrics"]["suc"], 1);
    assert_eq!(v["max_depth"], 1);
    let o = webstack(&["replay", "--trace", t]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("\"match\": true"));

    // Dropping a page operation makes the replay disagree.
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut dropped = false;
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            let skip = !dropped && l.contains("\"record\":\"env_action\"");
            dropped |= skip;
            !skip
        })
        .collect();
    std::fs::write(&trace, kept.join("\n")).unwrap();
    assert_eq!(webstack(&["replay", "--trace", t]).status.code(), Some(2));
}

#[test]
fn http_provider_without_settings_is_an_error() {
    let o = webstack(&["run", "--kind", "FIND_FLIGHT", "--seed", "1", "--provider", "http"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--http-config"));
}

#[test]
fn suite_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("suite.toml");
    std::fs::write(&config, "kinds = [\"FIND_BOOKING\"]\nseeds_per_kind = 3\noutput_dir = \"out\"\n").unwrap();
    let o = webstack(&["suite", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("| FIND_BOOKING | 3 | 1.000 | 1.000 |"));
    assert_eq!(std::fs::read_dir(dir.path().join("out/traces")).unwrap().count(), 3);

    std::fs::write(&config, "seeds_per_kind = 0\n").unwrap();
    assert_eq!(webstack(&["suite", "--config", config.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn autolabel_then_generate_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let labeled = dir.path().join("labeled");
    let prompts = dir.path().join("prompts");
    let f = fixtures();
    let o = webstack(&[
        "autolabel",
        "--demos",
        f.join("demos").to_str().unwrap(),
        "--vocab",
        f.join("vocab.txt").to_str().unwrap(),
        "--out",
        labeled.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("agreement with hand labels: 32/32"));
    let o = webstack(&["gen-prompts", "--labeled", labeled.to_str().unwrap(), "--out", prompts.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let planner = std::fs::read_to_string(prompts.join("planner.toml")).unwrap();
    let spec = webstack_core::policy::PolicySpec::from_toml(&planner).unwrap();
    assert_eq!(spec.callable.len(), 3);
    // The generated prompts load as a library.
    webstack_core::policy::PolicyLibrary::load_dir(&prompts).unwrap();
}

#[test]
fn fixture_runs() {
    let o = webstack(&["fixture", fixtures().join("recursion").to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["max_depth"], 3);
    assert_eq!(v["answer"], "3");
}
