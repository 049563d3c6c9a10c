use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_adskew");

fn adskew(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("ADSKEW_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = adskew(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn step(dir: &Path, out: &str, args: &[&str]) {
    let mut full = vec!["--config", "audit.toml", "--out", out];
    full.extend_from_slice(args);
    ok(dir, &full);
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = adskew(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is not one line: {err}");
    err
}

fn workspace(bias: f64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let bias = bias.to_string();
    ok(
        dir.path(),
        &["fixtures", "--out", ".", "--per-dma", "1200", "--per-race-size", "1500", "--bias-beta", &bias],
    );
    dir
}

fn pipeline(dir: &Path, out: &str, trials: &str) {
    for s in [
        &["ingest"][..],
        &["build-audience"],
        &["pair-schools"],
        &["simulate", "--trials", trials],
        &["analyze"],
        &["report"],
    ] {
        step(dir, out, s);
    }
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers.iter().map(String::from).zip(r.iter().map(String::from)).collect()
        })
        .collect()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn injected_bias_is_flagged_end_to_end() {
    let ws = workspace(0.8);
    pipeline(ws.path(), "out", "0");
    let results = csv_rows(&ws.path().join("out/results.csv"));
    assert_eq!(results.len(), 12);
    assert!(results.iter().all(|r| r["holm_significant"] == "true"));
    let report = fs::read_to_string(ws.path().join("out/report.md")).unwrap();
    assert!(report.contains("12 of 12 experiments show significant skew"));
    let svg = fs::read_to_string(ws.path().join("out/plots/z_original.svg")).unwrap();
    assert!(svg.contains(r#"data-threshold="1.64""#));
    assert_eq!(svg.matches("data-z=").count(), 6);
    let frac = fs::read_to_string(ws.path().join("out/plots/fractions_epair-1a-aud-nc-1.svg")).unwrap();
    assert_eq!(frac.matches("data-ci-low=").count(), 2);
}

#[test]
fn unbiased_run_exits_zero_and_reruns_byte_identically() {
    let ws = workspace(0.0);
    pipeline(ws.path(), "run1", "20");
    pipeline(ws.path(), "run2", "20");
    let (mut a, mut b) = (files(&ws.path().join("run1")), files(&ws.path().join("run2")));
    a.remove(Path::new("run_meta.json")).unwrap();
    b.remove(Path::new("run_meta.json")).unwrap();
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs between runs", k.display());
    }
    assert!(a.contains_key(Path::new("verdict_rates.csv")));
    // Rerunning a step in place leaves the artifacts unchanged.
    step(ws.path(), "run1", &["simulate", "--trials", "20"]);
    let mut again = files(&ws.path().join("run1"));
    again.remove(Path::new("run_meta.json"));
    assert_eq!(again, a);
}

#[test]
fn seed_flag_changes_samples() {
    let ws = workspace(0.0);
    step(ws.path(), "s1", &["ingest"]);
    step(ws.path(), "s1", &["build-audience"]);
    step(ws.path(), "s2", &["ingest"]);
    step(ws.path(), "s2", &["--seed", "99", "build-audience"]);
    let a = fs::read(ws.path().join("s1/audiences/aud-nc-1.csv")).unwrap();
    let b = fs::read(ws.path().join("s2/audiences/aud-nc-1.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn pairs_table_matches_sorted_pairing() {
    let ws = workspace(0.0);
    step(ws.path(), "out", &["pair-schools"]);
    step(ws.path(), "out", &["report"]);
    let table = fs::read_to_string(ws.path().join("out/pairs_table.md")).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(
        rows,
        [
            "| epair-1a | Strayer University | Colorado State University |",
            "| epair-2a | Monroe College | Arizona State University |",
            "| epair-3a | American InterContinental University | Fort Hays State University |",
        ]
    );
}

#[test]
fn explicit_pairing_mode() {
    let ws = workspace(0.0);
    let cfg = fs::read_to_string(ws.path().join("audit.toml")).unwrap().replace(
        "mode = \"sorted\"",
        "mode = \"explicit\"\nskewed = [\"DeVry University\", \"Grand Canyon University\", \"Keiser University\"]\npublic = [\"Colorado State University\", \"Fort Hays State University\", \"Arizona State University\"]",
    );
    fs::write(ws.path().join("audit.toml"), cfg).unwrap();
    step(ws.path(), "out", &["pair-schools"]);
    let rows = csv_rows(&ws.path().join("out/pairs.csv"));
    let got: Vec<(&str, &str, &str)> = rows
        .iter()
        .map(|r| (r["pair_id"].as_str(), r["skewed_school"].as_str(), r["public_school"].as_str()))
        .collect();
    assert_eq!(
        got,
        [
            ("epair-1b", "DeVry University", "Colorado State University"),
            ("epair-2b", "Grand Canyon University", "Fort Hays State University"),
            ("epair-3b", "Keiser University", "Arizona State University"),
        ]
    );
}

#[test]
fn missing_artifacts_are_named() {
    let ws = workspace(0.0);
    let err = fail(ws.path(), &["--config", "audit.toml", "--out", "out", "build-audience"]);
    assert!(err.contains("missing artifact individuals.csv"), "{err}");
    let err = fail(ws.path(), &["--config", "audit.toml", "--out", "out", "analyze"]);
    assert!(err.contains("missing artifact experiment list"), "{err}");
}

#[test]
fn analyze_on_empty_snapshot_log_fails() {
    let ws = workspace(0.0);
    for s in [&["ingest"][..], &["build-audience"], &["pair-schools"], &["simulate"]] {
        step(ws.path(), "out", s);
    }
    fs::write(
        ws.path().join("out/snapshots_epair-1a-aud-nc-1.csv"),
        "campaign_id,time,region,unique_impressions\n",
    )
    .unwrap();
    let err = fail(ws.path(), &["--config", "audit.toml", "--out", "out", "analyze"]);
    assert!(err.contains("snapshots_epair-1a-aud-nc-1.csv"), "{err}");
    assert!(err.contains("empty"), "{err}");
    fs::remove_file(ws.path().join("out/snapshots_epair-1a-aud-nc-1.csv")).unwrap();
    let err = fail(ws.path(), &["--config", "audit.toml", "--out", "out", "analyze"]);
    assert!(err.contains("missing artifact snapshots_epair-1a-aud-nc-1.csv"), "{err}");
}

#[test]
fn direction_switch_is_refused() {
    let ws = workspace(0.0);
    for s in [&["ingest"][..], &["build-audience"], &["pair-schools"], &["simulate"]] {
        step(ws.path(), "out", s);
    }
    let err = fail(
        ws.path(),
        &["--config", "audit.toml", "--out", "out", "analyze", "--skewed-campaign", "b"],
    );
    assert!(err.contains("refusing to switch test direction"), "{err}");
    step(ws.path(), "out", &["analyze", "--skewed-campaign", "a"]);
}

#[test]
fn config_errors_are_single_line() {
    let ws = workspace(0.0);
    let err = fail(ws.path(), &["--out", "out", "ingest"]);
    assert!(err.contains("--config is required"), "{err}");
    let err = fail(ws.path(), &["--config", "nope.toml", "--out", "out", "ingest"]);
    assert!(err.contains("nope.toml"), "{err}");
    fs::write(ws.path().join("bad.toml"), "seed = 1\n[sim]\nmatch_rate = 2.0\n").unwrap();
    let err = fail(ws.path(), &["--config", "bad.toml", "--out", "out", "ingest"]);
    assert!(err.contains("match_rate"), "{err}");
    fs::write(ws.path().join("bad.toml"), "seed = 1\nunknown_key = 3\n").unwrap();
    let err = fail(ws.path(), &["--config", "bad.toml", "--out", "out", "ingest"]);
    assert!(err.contains("unknown"), "{err}");
    fs::write(ws.path().join("bad.toml"), "seed = 1\n").unwrap();
    let err = fail(ws.path(), &["--config", "bad.toml", "--out", "out", "ingest"]);
    assert!(err.contains("[ingest]"), "{err}");
}

#[test]
fn launch_requires_dry_run_and_writes_requests() {
    let ws = workspace(0.0);
    for s in [&["ingest"][..], &["build-audience"], &["pair-schools"]] {
        step(ws.path(), "out", s);
    }
    let err = fail(ws.path(), &["--config", "audit.toml", "--out", "out", "launch"]);
    assert!(err.contains("--dry-run"), "{err}");
    step(ws.path(), "out", &["launch", "--dry-run"]);
    let req_dir = ws.path().join("out/requests");
    let n = fs::read_dir(&req_dir).unwrap().count();
    assert_eq!(n, 24);
    let body: serde_json::Value =
        serde_json::from_slice(&fs::read(req_dir.join("epair-1a-aud-nc-1-a.request.json")).unwrap()).unwrap();
    assert_eq!(body["campaign"]["objective"], "OUTCOME_TRAFFIC");
    assert_eq!(body["ad_set"]["lifetime_budget_cents"], 5000);
    assert_eq!(body["ad_set"]["targeting"]["custom_audiences"][0], "aud-nc-1");
    // No delivery data yet, so analysis must name what is missing.
    let err = fail(ws.path(), &["--config", "audit.toml", "--out", "out", "analyze"]);
    assert!(err.contains("missing artifact snapshots_"), "{err}");
}

#[test]
fn dry_run_replays_recorded_snapshots() {
    let ws = workspace(0.8);
    for s in [&["ingest"][..], &["build-audience"], &["pair-schools"], &["simulate"]] {
        step(ws.path(), "sim", s);
    }
    // Merge every recorded log into one fixture file.
    let mut merged = String::from("campaign_id,time,region,unique_impressions\n");
    for e in fs::read_dir(ws.path().join("sim")).unwrap() {
        let p = e.unwrap().path();
        if p.file_name().unwrap().to_string_lossy().starts_with("snapshots_") {
            let text = fs::read_to_string(&p).unwrap();
            merged.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    fs::write(ws.path().join("recorded.csv"), merged).unwrap();
    let fixtures = serde_json::json!({
        "snapshot_log": ws.path().join("recorded.csv"),
        "launch_time": "2023-04-03T00:00:00Z",
    });
    fs::write(ws.path().join("fixtures.json"), fixtures.to_string()).unwrap();
    for s in [&["ingest"][..], &["build-audience"], &["pair-schools"]] {
        step(ws.path(), "dry", s);
    }
    step(ws.path(), "dry", &["launch", "--dry-run", "--fixtures", "fixtures.json"]);
    step(ws.path(), "dry", &["analyze"]);
    step(ws.path(), "sim", &["analyze"]);
    assert_eq!(
        fs::read(ws.path().join("dry/results.csv")).unwrap(),
        fs::read(ws.path().join("sim/results.csv")).unwrap()
    );
}
