//! Tables built from saved run reports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use ocsim_core::metrics::{
    compare_batches, completion_stats, improvement, result_rows, scalar_metrics, write_result_csv, BatchDelta,
};
use ocsim_core::MetricsReport;
use serde::Serialize;

use crate::commands::{create, write_json, write_rows};
use crate::CliError;

/// Orders `ring10` before `ring12` and `fbfly3-3` before `fbfly4-3`.
fn topo_key(label: &str) -> (String, Vec<u64>) {
    let alpha: String = label.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    let nums = label[alpha.len()..]
        .split(|c: char| !c.is_ascii_digit())
        .filter_map(|s| s.parse().ok())
        .collect();
    (alpha, nums)
}

fn load(files: &[PathBuf]) -> Result<Vec<MetricsReport>, CliError> {
    files
        .iter()
        .map(|p| {
            let f = File::open(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            MetricsReport::read_json(BufReader::new(f)).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        })
        .collect()
}

#[derive(Serialize)]
struct ComparisonGroup {
    topology: String,
    rules: String,
    /// Seeds present under both circuit modes.
    seeds: Vec<u64>,
    /// Relative change from private to shared.
    deltas: Vec<BatchDelta>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    topology: &'a str,
    rules: &'a str,
    metric: &'a str,
    class: &'a str,
    delta: f64,
    ci_low: f64,
    ci_high: f64,
    trials: usize,
    fraction_lower: f64,
}

/// Mean completion times in milliseconds and per-seed mean improvements.
#[derive(Serialize)]
struct CompletionRow {
    topology: String,
    rules: String,
    trials: usize,
    private_elephant_ms: f64,
    shared_elephant_ms: f64,
    elephant_improvement: f64,
    private_mice_coflow_ms: f64,
    shared_mice_coflow_ms: f64,
    mice_coflow_improvement: f64,
    improvement: f64,
}

type Key = (String, String);
type BySeed<'a> = BTreeMap<u64, &'a MetricsReport>;
/// Rule mode and one value per footprint column.
type FootprintRow = (String, Vec<Option<f64>>);

/// Private and shared reports of one (topology, rules) group, paired by seed.
fn paired(reports: &[MetricsReport]) -> BTreeMap<Key, Vec<(&MetricsReport, &MetricsReport)>> {
    let mut by: BTreeMap<Key, (BySeed, BySeed)> = BTreeMap::new();
    for r in reports {
        let e = by
            .entry((r.info.topology.clone(), r.info.rule_mode.clone()))
            .or_default();
        match r.info.circuit_mode.as_str() {
            "private" => {
                e.0.insert(r.info.seed, r);
            }
            "shared" => {
                e.1.insert(r.info.seed, r);
            }
            _ => {}
        }
    }
    let mut out: BTreeMap<Key, Vec<_>> = BTreeMap::new();
    for (k, (p, s)) in by {
        let pairs: Vec<_> = p.iter().filter_map(|(seed, a)| Some((*a, *s.get(seed)?))).collect();
        if !pairs.is_empty() {
            out.insert(k, pairs);
        }
    }
    out
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn completion_row(key: &Key, pairs: &[(&MetricsReport, &MetricsReport)]) -> CompletionRow {
    let stats: Vec<_> = pairs
        .iter()
        .map(|(a, b)| (completion_stats(a), completion_stats(b)))
        .collect();
    let ms = |f: &dyn Fn(&(ocsim_core::metrics::CompletionStats, ocsim_core::metrics::CompletionStats)) -> Option<f64>| {
        mean(stats.iter().filter_map(f)) / 1e3
    };
    let gain = |f: &dyn Fn(&ocsim_core::metrics::CompletionStats) -> Option<f64>| {
        mean(stats.iter().filter_map(|(a, b)| Some(improvement(f(a)?, f(b)?))))
    };
    let el = gain(&|s| s.elephant.map(|x| x.mean));
    let mc = gain(&|s| s.mice_coflow.map(|x| x.mean));
    CompletionRow {
        topology: key.0.clone(),
        rules: key.1.clone(),
        trials: pairs.len(),
        private_elephant_ms: ms(&|(a, _)| a.elephant.map(|x| x.mean)),
        shared_elephant_ms: ms(&|(_, b)| b.elephant.map(|x| x.mean)),
        elephant_improvement: el,
        private_mice_coflow_ms: ms(&|(a, _)| a.mice_coflow.map(|x| x.mean)),
        shared_mice_coflow_ms: ms(&|(_, b)| b.mice_coflow.map(|x| x.mean)),
        mice_coflow_improvement: mc,
        improvement: (el + mc) / 2.0,
    }
}

/// Mean rules installed per minute, rows by rule mode and columns by circuit mode and topology.
fn footprint_table(reports: &[MetricsReport]) -> (Vec<String>, Vec<FootprintRow>) {
    let mut cols: Vec<(String, String)> = reports
        .iter()
        .filter(|r| r.info.circuit_mode != "none")
        .map(|r| (r.info.circuit_mode.clone(), r.info.topology.clone()))
        .collect();
    cols.sort_by(|a, b| (&a.0, topo_key(&a.1)).cmp(&(&b.0, topo_key(&b.1))));
    cols.dedup();
    let mut rules: Vec<String> = reports.iter().map(|r| r.info.rule_mode.clone()).collect();
    rules.sort();
    rules.dedup();
    let rows = rules
        .into_iter()
        .map(|rule| {
            let vals = cols
                .iter()
                .map(|(c, t)| {
                    let v = mean(
                        reports
                            .iter()
                            .filter(|r| r.info.rule_mode == rule && &r.info.circuit_mode == c && &r.info.topology == t)
                            .map(|r| r.installs_per_minute()),
                    );
                    (!v.is_nan()).then_some(v)
                })
                .collect();
            (rule, vals)
        })
        .collect();
    let header = cols.into_iter().map(|(c, t)| format!("{c}:{t}")).collect();
    (header, rows)
}

fn write_footprint(path: &Path, header: &[String], rows: &[FootprintRow]) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = create(path)?;
    writeln!(w, "rules,{}", header.join(",")).map_err(err)?;
    for (rule, vals) in rows {
        let cells: Vec<String> = vals
            .iter()
            .map(|v| v.map_or(String::new(), |x| format!("{x:.2}")))
            .collect();
        writeln!(w, "{rule},{}", cells.join(",")).map_err(err)?;
    }
    w.flush().map_err(err)
}

pub fn run(files: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut reports = load(files)?;
    reports.sort_by(|a, b| {
        (topo_key(&a.info.topology), &a.info.circuit_mode, &a.info.rule_mode, a.info.seed).cmp(&(
            topo_key(&b.info.topology),
            &b.info.circuit_mode,
            &b.info.rule_mode,
            b.info.seed,
        ))
    });

    let path = out.join("results.csv");
    write_result_csv(&result_rows(&reports), create(&path)?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;

    let mut pairs: Vec<_> = paired(&reports).into_iter().collect();
    pairs.sort_by(|a, b| (topo_key(&a.0 .0), &a.0 .1).cmp(&(topo_key(&b.0 .0), &b.0 .1)));

    let groups: Vec<ComparisonGroup> = pairs
        .iter()
        .map(|((topology, rules), ps)| {
            let a: Vec<MetricsReport> = ps.iter().map(|(a, _)| (*a).clone()).collect();
            let b: Vec<MetricsReport> = ps.iter().map(|(_, b)| (*b).clone()).collect();
            let (deltas, warnings) = compare_batches(&a, &b);
            ComparisonGroup {
                topology: topology.clone(),
                rules: rules.clone(),
                seeds: ps.iter().map(|(a, _)| a.info.seed).collect(),
                deltas,
                warnings,
            }
        })
        .collect();
    write_json(&out.join("comparison.json"), &groups)?;
    let rows: Vec<ComparisonRow> = groups
        .iter()
        .flat_map(|g| {
            g.deltas.iter().map(move |d| ComparisonRow {
                topology: &g.topology,
                rules: &g.rules,
                metric: &d.metric,
                class: &d.class,
                delta: d.delta.mean,
                ci_low: d.delta.ci_low,
                ci_high: d.delta.ci_high,
                trials: d.delta.n,
                fraction_lower: d.fraction_lower,
            })
        })
        .collect();
    write_rows(&out.join("comparison.csv"), &rows)?;

    let completion: Vec<CompletionRow> = pairs.iter().map(|(k, ps)| completion_row(k, ps)).collect();
    write_rows(&out.join("completion.csv"), &completion)?;

    let (header, fp) = footprint_table(&reports);
    write_footprint(&out.join("footprint.csv"), &header, &fp)?;

    if reports.len() == 1 {
        let r = &reports[0];
        println!(
            "{} {} seed {}: {} flows, {} events",
            r.info.topology,
            r.info.mode_label(),
            r.info.seed,
            r.flows.len(),
            r.events
        );
        for (m, c, v) in scalar_metrics(r) {
            println!("  {m:<28} {c:<10} {v:.3}");
        }
    } else {
        println!("{} reports", reports.len());
    }
    for c in &completion {
        println!(
            "{:<10} {:<9} n={:<3} elephant {:>6.1}% mice coflow {:>6.1}% combined {:>6.1}%",
            c.topology,
            c.rules,
            c.trials,
            100.0 * c.elephant_improvement,
            100.0 * c.mice_coflow_improvement,
            100.0 * c.improvement
        );
    }
    if !header.is_empty() {
        println!("installs/min  {}", header.join("  "));
        for (rule, vals) in &fp {
            let cells: Vec<String> = vals.iter().map(|v| v.map_or("-".into(), |x| format!("{x:.1}"))).collect();
            println!("{rule:<12}  {}", cells.join("  "));
        }
    }
    println!("tables written to {}", out.display());
    Ok(())
}
