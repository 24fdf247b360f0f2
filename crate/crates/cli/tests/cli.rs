use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BAA: &str = r#"{"case": "ieee9-modified", "mode": "baa", "seed": 3,
    "initial_bids": [7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254],
    "schedule": {"kind": "per_generator_random", "low": 0.001, "high": 0.05},
    "stop": {"epsilon": null, "max_iters": 300},
    "iso_policy": "randomized"}"#;

fn gridbid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridbid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn opf_prints_the_summary_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "opf.json", r#"{"case": "ieee9-modified", "mode": "opf_only"}"#);
    let out_dir = dir.path().join("out");
    let out = gridbid(&["opf", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&String> = summary.as_object().unwrap().keys().collect();
    for key in ["b_star", "x_star", "entry_iteration", "terminal_distance", "violations", "bounds"] {
        assert!(keys.iter().any(|k| *k == key), "missing {key} in {keys:?}");
    }
    assert!(out_dir.join("summary.json").exists());
}

#[test]
fn baa_trace_is_reproducible_and_has_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "baa.json", BAA);
    let traces: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|sub| {
            let out_dir = dir.path().join(sub);
            let out = gridbid(&["baa", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
            fs::read(out_dir.join("trace.csv")).unwrap()
        })
        .collect();
    assert_eq!(traces[0], traces[1]);
    let text = String::from_utf8(traces[0].clone()).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("k,b_1,b_2,b_3,b_4,b_5,b_6,xopt_1,"));
    assert!(header.ends_with(",q_6,beta,dist_to_bstar"));
    assert_eq!(text.lines().count(), 301);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "baa.json", BAA);
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = gridbid(&[
            "baa", "--config", path_str(&cfg), "--seed", seed, "--max-iters", "40", "--out", path_str(&out_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_dir.join("trace.csv")).unwrap()
    };
    let first = run("1", "s1");
    let second = run("2", "s2");
    assert_eq!(first.lines().count(), 41);
    assert_ne!(first, second, "per-generator stepsizes depend on the seed");
}

#[test]
fn several_configs_get_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let one = write(dir.path(), "one.json", BAA);
    let two = write(dir.path(), "two.json", &BAA.replace("\"seed\": 3", "\"seed\": 4"));
    let out_dir = dir.path().join("out");
    let out = gridbid(&[
        "baa", "--config", path_str(&one), "--config", path_str(&two), "--max-iters", "20", "--out", path_str(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("one").join("trace.csv").exists());
    assert!(out_dir.join("two").join("trace.csv").exists());
}

#[test]
fn subcommand_must_match_the_config_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "baa.json", BAA);
    let out = gridbid(&["collude", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mode"));
}

#[test]
fn incomplete_collusion_config_names_the_missing_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "collude.json",
        r#"{"case": "ieee9-modified", "mode": "collusion",
            "schedule": {"kind": "constant", "beta": 0.01},
            "collusion": {"strategies": [{"kind": "constant", "bid": 5.0}]}}"#,
    );
    let out = gridbid(&["collude", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("collusion.members"));
}

#[test]
fn malformed_config_reports_the_json_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"case": "ieee9-modified", "mode": "baa", "schedule": {"kind": "constant", "beta": "fast"}}"#,
    );
    let out = gridbid(&["baa", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schedule"));
}

#[test]
fn validate_warns_about_single_generator_buses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "single.json",
        r#"{"case": {"inline": {
                "buses": [{"id": 1, "load": 0.0}, {"id": 2, "load": 1.0}],
                "lines": [{"from": 1, "to": 2, "limit": 2.0}],
                "generators": [{"id": 1, "bus": 1, "a": 0.1, "c": 1.0}]}},
            "mode": "opf_only"}"#,
    );
    let out = gridbid(&["validate", "--config", path_str(&cfg)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("warning"), "{stdout}");
}

#[test]
fn validate_rejects_an_infeasible_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "infeasible.json",
        r#"{"case": {"inline": {
                "buses": [{"id": 1, "load": 0.0}, {"id": 2, "load": 3.0}],
                "lines": [{"from": 1, "to": 2, "limit": 1.0}],
                "generators": [{"id": 1, "bus": 1, "a": 0.1, "c": 1.0}, {"id": 2, "bus": 1, "a": 0.1, "c": 1.0}]}},
            "mode": "opf_only"}"#,
    );
    let out = gridbid(&["validate", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("error"));
}
