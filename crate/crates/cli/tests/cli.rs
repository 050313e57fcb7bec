use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
name = "small"

[topology]
kind = "ring"
switches = 4
hosts_per_switch = 4

[traffic.params]
n_flows = 40
count_basis = "transfers"
coflow_width_min = 2
coflow_width_max = 6
load = 0.5

[control]
th_configure = 0.2
th_remove = 0.1
"#;

fn ocsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocsim"))
        .args(args)
        .output()
        .expect("spawn ocsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

fn files_under(dir: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p);
            }
        }
    }
    out
}

fn sidecar(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = ocsim(&["--config", cfg, "--seed", "7", "--out", out.to_str().unwrap(), "generate"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace-seed7.csv", "trace-seed7.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(sidecar(&a.join("trace-seed7.json"))["seed"], 7);
}

#[test]
fn run_covers_every_cell_under_out() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    let o = ocsim(&[
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "1-2",
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
        "--debug-logs",
        "run",
        "--modes",
        "private,shared",
        "--rules",
        "cshare,per_flow",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = files_under(&out);
    let reports: Vec<_> = files
        .iter()
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("report-"))
        .collect();
    assert_eq!(reports.len(), 8);
    for seed in [1, 2] {
        let n = reports
            .iter()
            .filter(|p| p.to_str().unwrap().ends_with(&format!("-seed{seed}.json")))
            .count();
        assert_eq!(n, 4, "seed {seed}");
    }
    assert!(out.join("results.csv").exists());
    assert!(out.join("debug/ring4-shared-per_flow-seed2/events.log").exists());
    assert!(out.join("debug/ring4-private-cshare-seed1/rules.csv").exists());
    assert!(files.iter().all(|p| p.starts_with(&out)));

    // Reruns overwrite with identical content.
    let first: Vec<Vec<u8>> = reports.iter().map(|p| fs::read(p).unwrap()).collect();
    let o = ocsim(&[
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "1,2",
        "--out",
        out.to_str().unwrap(),
        "--debug-logs",
        "run",
        "--modes",
        "private,shared",
        "--rules",
        "cshare,per_flow",
    ]);
    assert!(o.status.success());
    let second: Vec<Vec<u8>> = reports.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(first, second);

    let rep = tmp.path().join("rep");
    let mut args = vec!["--out", rep.to_str().unwrap(), "report"];
    let names: Vec<String> = reports.iter().map(|p| p.to_str().unwrap().to_string()).collect();
    args.extend(names.iter().map(String::as_str));
    let o = ocsim(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.csv", "comparison.csv", "comparison.json", "completion.csv", "footprint.csv"] {
        assert!(rep.join(f).exists(), "{f}");
    }
    let fp = fs::read_to_string(rep.join("footprint.csv")).unwrap();
    let lines: Vec<&str> = fp.lines().collect();
    assert_eq!(lines[0], "rules,private:ring4,shared:ring4");
    assert!(lines[1].starts_with("cshare,") && lines[2].starts_with("per_flow,"));
    let completion = fs::read_to_string(rep.join("completion.csv")).unwrap();
    assert_eq!(completion.lines().count(), 3);
}

#[test]
fn single_report_passes_through() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    let o = ocsim(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "run",
        "--modes",
        "shared",
    ]);
    assert!(o.status.success());
    let report = out.join("report-ring4-shared-cshare-seed1.json");
    let o = ocsim(&["--out", tmp.path().join("rep").to_str().unwrap(), "report", report.to_str().unwrap()]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("ring4 shared/cshare seed 1"), "{s}");
    assert!(s.contains("fct_mean_us"), "{s}");
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[topology]\nbogus = 1\n").unwrap();
    assert_eq!(ocsim(&["--config", bad.to_str().unwrap(), "validate"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.toml");
    assert_eq!(ocsim(&["--config", missing.to_str().unwrap(), "run"]).status.code(), Some(2));
    assert_eq!(ocsim(&["--preset", "nope", "run"]).status.code(), Some(2));
    assert_eq!(ocsim(&["run"]).status.code(), Some(2));
    let no_trace = tmp.path().join("no_trace.toml");
    fs::write(&no_trace, "[traffic]\nsource = \"trace\"\npath = \"absent.csv\"\n").unwrap();
    assert_eq!(ocsim(&["--config", no_trace.to_str().unwrap(), "validate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("none.json");
    assert_eq!(ocsim(&["report", missing.to_str().unwrap()]).status.code(), Some(3));
    let cfg = tmp.path().join("cap.toml");
    fs::write(&cfg, format!("{SMALL}\n[run]\nmax_sim_time_us = 1000\n")).unwrap();
    let o = ocsim(&["--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn ring10_sim_preset_shape() {
    let o = ocsim(&["--preset", "ring10-sim", "validate"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("ring10 (10 switches, 400 hosts)"));
    let o = ocsim(&["--preset", "ring10-sim", "topology"]);
    let csv = stdout(&o);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.ends_with(",10000000000")));
    let toml = stdout(&ocsim(&["presets", "ring10-sim"]));
    assert!(toml.contains("circuit_rate_bps = 100000000000.0"), "{toml}");
}

#[test]
fn emu_scale_preset_shape() {
    let o = ocsim(&["--preset", "fbfly333-emu-scale", "validate"]);
    assert!(stdout(&o).contains("fbfly3-3 (9 switches"), "{}", stdout(&o));
    let toml = stdout(&ocsim(&["presets", "fbfly333-emu-scale"]));
    assert!(toml.contains("packet_rate_bps = 10000000.0"), "{toml}");
    assert!(toml.contains("circuit_rate_bps = 100000000.0"), "{toml}");
}

#[test]
fn preset_round_trips_through_a_file() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("ring12.toml");
    fs::write(&p, stdout(&ocsim(&["presets", "ring12-sim"]))).unwrap();
    let o = ocsim(&["--config", p.to_str().unwrap(), "validate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("ring12 (12 switches"));
}

#[test]
fn uniform_coflow_is_mostly_coflows() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = ocsim(&["--preset", "uniform-coflow", "--seed", "3", "--out", out, "generate"]);
    assert!(o.status.success());
    let mut rd = csv::Reader::from_path(tmp.path().join("trace-seed3.csv")).unwrap();
    let mut coflows = BTreeSet::new();
    let mut standalone = 0usize;
    for rec in rd.records() {
        let rec = rec.unwrap();
        match &rec[1] {
            "" => standalone += 1,
            c => {
                coflows.insert(c.to_string());
            }
        }
    }
    let frac = coflows.len() as f64 / (coflows.len() + standalone) as f64;
    assert!((frac - 0.9).abs() < 0.02, "coflow fraction {frac}");
}

#[test]
fn uniform_intensive_demand_split() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = ocsim(&["--preset", "uniform-intensive", "--seed", "1", "--out", out, "generate"]);
    assert!(o.status.success());
    let meta = sidecar(&tmp.path().join("trace-seed1.json"));
    let f = meta["validation"]["elephant_demand_fraction"].as_f64().unwrap();
    assert!((0.88..=0.92).contains(&f), "{f}");
    assert!(meta["validation"]["violations"].as_array().unwrap().is_empty());
}
