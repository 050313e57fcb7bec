//! Per-run reports and the statistics drawn from them.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics, Statistics};

use crate::engine::SimConfig;
use crate::switch::{footprint, CircuitRecord, RuleLogEntry};
use crate::topology::SwitchId;
use crate::traffic::{CoflowId, FlowClass, FlowId};

pub const MINUTE_US: u64 = 60_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub id: FlowId,
    pub coflow: Option<CoflowId>,
    pub class: FlowClass,
    pub size: u64,
    pub delivered: u64,
    pub start_us: u64,
    pub end_us: u64,
    pub fct_us: u64,
    pub mean_rate_bps: f64,
    pub tagged: bool,
    pub tag_time_us: Option<u64>,
    pub first_circuit_us: Option<u64>,
    pub circuits_used: Vec<(SwitchId, SwitchId)>,
    pub bytes_on_circuit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoflowRecord {
    pub id: CoflowId,
    pub width: u32,
    pub arrival_us: u64,
    pub end_us: u64,
    /// Last member's completion minus arrival.
    pub completion_us: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FootprintBucket {
    pub start_us: u64,
    pub installs: u64,
    pub peak_concurrent: u32,
    pub installs_per_switch: Vec<u32>,
    pub peak_per_switch: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub topology: String,
    pub circuit_mode: String,
    pub rule_mode: String,
    pub seed: u64,
}

impl RunInfo {
    /// `circuit/rules` label used in result tables.
    pub fn mode_label(&self) -> String {
        format!("{}/{}", self.circuit_mode, self.rule_mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub info: RunInfo,
    pub config: SimConfig,
    pub flows: Vec<FlowRecord>,
    pub coflows: Vec<CoflowRecord>,
    pub footprint: Vec<FootprintBucket>,
    pub circuits: Vec<CircuitRecord>,
    pub reconfigurations: u64,
    pub overflows: u64,
    pub events: u64,
    pub event_log_sha256: String,
    pub sim_end_us: u64,
    pub total_bytes: u64,
    pub delivered_bytes: u64,
    pub switches: usize,
    /// Highest cshare-rule count seen at any switch.
    pub max_cshare_rules: u32,
    /// Highest up-circuit count sourced at any switch.
    pub max_up_circuits: u32,
    /// Peak installed plus queued rules at one switch.
    pub peak_committed: u32,
}

impl MetricsReport {
    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }

    pub fn read_json<R: std::io::Read>(r: R) -> serde_json::Result<Self> {
        serde_json::from_reader(r)
    }

    pub fn total_installs(&self) -> u64 {
        self.footprint.iter().map(|b| b.installs).sum()
    }

    /// Rules installed per simulated minute over the whole run.
    pub fn installs_per_minute(&self) -> f64 {
        let minutes = self.sim_end_us.max(1) as f64 / MINUTE_US as f64;
        self.total_installs() as f64 / minutes
    }

    pub fn peak_rules(&self) -> u32 {
        self.footprint.iter().map(|b| b.peak_concurrent).max().unwrap_or(0)
    }
}

/// One-minute footprint buckets aligned to t = 0 covering `[0, end]`.
pub fn footprint_buckets(log: &[RuleLogEntry], switches: usize, end_us: u64) -> Vec<FootprintBucket> {
    let n = end_us / MINUTE_US + 1;
    (0..n)
        .map(|m| {
            let t0 = m * MINUTE_US;
            let fp = footprint(log, switches, t0, t0 + MINUTE_US);
            FootprintBucket {
                start_us: t0,
                installs: fp.total_installs(),
                peak_concurrent: fp.max_peak(),
                installs_per_switch: fp.per_switch_installs,
                peak_per_switch: fp.per_switch_peak,
            }
        })
        .collect()
}

/// Groups flow records into coflows; standalone flows are left out.
pub fn coflow_records(flows: &[FlowRecord]) -> Vec<CoflowRecord> {
    let mut groups: BTreeMap<CoflowId, (u32, u64, u64)> = BTreeMap::new();
    for f in flows {
        if let Some(c) = f.coflow {
            let e = groups.entry(c).or_insert((0, u64::MAX, 0));
            e.0 += 1;
            e.1 = e.1.min(f.start_us);
            e.2 = e.2.max(f.end_us);
        }
    }
    groups
        .into_iter()
        .map(|(id, (width, arrival, end))| CoflowRecord {
            id,
            width,
            arrival_us: arrival,
            end_us: end,
            completion_us: end - arrival,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThroughputStats {
    pub mice: Option<f64>,
    pub elephant: Option<f64>,
}

/// Per-class mean of lifetime throughput `size * 8 / FCT`.
pub fn throughput_stats(report: &MetricsReport) -> ThroughputStats {
    let mean = |class| {
        let v: Vec<f64> = report
            .flows
            .iter()
            .filter(|f| f.class == class)
            .map(|f| f.mean_rate_bps)
            .collect();
        (!v.is_empty()).then(|| v.mean())
    };
    ThroughputStats {
        mice: mean(FlowClass::Mice),
        elephant: mean(FlowClass::Elephant),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut d = Data::new(values.to_vec());
        Some(Summary {
            n: values.len(),
            mean: values.mean(),
            p50: d.percentile(50),
            p90: d.percentile(90),
            p99: d.percentile(99),
            max: values.max(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionStats {
    /// Coflow completion in microseconds; standalone mice count as singleton coflows.
    pub mice_coflow: Option<Summary>,
    pub mice_flow: Option<Summary>,
    pub elephant: Option<Summary>,
}

pub fn completion_stats(report: &MetricsReport) -> CompletionStats {
    let mice: Vec<&FlowRecord> = report.flows.iter().filter(|f| f.class == FlowClass::Mice).collect();
    let mut coflow: Vec<f64> = report
        .coflows
        .iter()
        .map(|c| c.completion_us as f64)
        .collect();
    coflow.extend(mice.iter().filter(|f| f.coflow.is_none()).map(|f| f.fct_us as f64));
    let mice_fct: Vec<f64> = mice.iter().map(|f| f.fct_us as f64).collect();
    let eleph: Vec<f64> = report
        .flows
        .iter()
        .filter(|f| f.class == FlowClass::Elephant)
        .map(|f| f.fct_us as f64)
        .collect();
    CompletionStats {
        mice_coflow: Summary::of(&coflow),
        mice_flow: Summary::of(&mice_fct),
        elephant: Summary::of(&eleph),
    }
}

/// Scalar metrics a report is compared on: `(metric, class, value)`.
pub fn scalar_metrics(report: &MetricsReport) -> Vec<(&'static str, &'static str, f64)> {
    let mut out = Vec::new();
    let c = completion_stats(report);
    if let Some(s) = c.elephant {
        out.push(("fct_mean_us", "elephant", s.mean));
    }
    if let Some(s) = c.mice_flow {
        out.push(("fct_mean_us", "mice", s.mean));
    }
    if let Some(s) = c.mice_coflow {
        out.push(("coflow_completion_mean_us", "mice", s.mean));
    }
    let t = throughput_stats(report);
    if let Some(v) = t.elephant {
        out.push(("throughput_mean_bps", "elephant", v));
    }
    if let Some(v) = t.mice {
        out.push(("throughput_mean_bps", "mice", v));
    }
    out.push(("rule_installs_per_min", "all", report.installs_per_minute()));
    out.push(("peak_rules", "all", report.peak_rules() as f64));
    out.push(("reconfigurations", "all", report.reconfigurations as f64));
    out.push(("overflows", "all", report.overflows as f64));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub metric: String,
    pub class: String,
    pub a: f64,
    pub b: f64,
    /// `(b - a) / a`; `None` when `a` is zero.
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub deltas: Vec<Delta>,
    pub warnings: Vec<String>,
}

fn config_warnings(a: &MetricsReport, b: &MetricsReport) -> Vec<String> {
    let mut w = Vec::new();
    if a.info.topology != b.info.topology {
        w.push(format!("topology differs: {} vs {}", a.info.topology, b.info.topology));
    }
    if a.total_bytes != b.total_bytes || a.flows.len() != b.flows.len() {
        w.push("traces differ".to_string());
    }
    w
}

/// Relative change of every shared scalar metric from `a` to `b`.
pub fn compare_runs(a: &MetricsReport, b: &MetricsReport) -> Comparison {
    let mb: BTreeMap<(&str, &str), f64> = scalar_metrics(b).into_iter().map(|(m, c, v)| ((m, c), v)).collect();
    let deltas = scalar_metrics(a)
        .into_iter()
        .filter_map(|(m, c, va)| {
            let vb = *mb.get(&(m, c))?;
            Some(Delta {
                metric: m.to_string(),
                class: c.to_string(),
                a: va,
                b: vb,
                delta: (va != 0.0).then(|| (vb - va) / va),
            })
        })
        .collect();
    Comparison {
        deltas,
        warnings: config_warnings(a, b),
    }
}

/// Mean with a two-sided 95% Student-t interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Option<Estimate> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.mean();
        if n < 2 {
            return Some(Estimate {
                mean,
                ci_low: mean,
                ci_high: mean,
                n,
            });
        }
        let sd = values.std_dev();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(1.96);
        let half = t * sd / (n as f64).sqrt();
        Some(Estimate {
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
            n,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchDelta {
    pub metric: String,
    pub class: String,
    pub delta: Estimate,
    /// Fraction of paired trials where `b < a`.
    pub fraction_lower: f64,
}

/// Paired comparison of two equally long trial batches (trial `i` of `a` against trial `i` of `b`).
pub fn compare_batches(a: &[MetricsReport], b: &[MetricsReport]) -> (Vec<BatchDelta>, Vec<String>) {
    let mut per: BTreeMap<(String, String), (Vec<f64>, usize)> = BTreeMap::new();
    let mut warnings = Vec::new();
    if a.len() != b.len() {
        warnings.push(format!("batch sizes differ: {} vs {}", a.len(), b.len()));
    }
    for (ra, rb) in a.iter().zip(b) {
        let cmp = compare_runs(ra, rb);
        for w in cmp.warnings {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        for d in cmp.deltas {
            if let Some(x) = d.delta {
                let e = per.entry((d.metric, d.class)).or_default();
                e.0.push(x);
                if d.b < d.a {
                    e.1 += 1;
                }
            }
        }
    }
    let out = per
        .into_iter()
        .filter_map(|((metric, class), (v, lower))| {
            Some(BatchDelta {
                metric,
                class,
                fraction_lower: lower as f64 / v.len() as f64,
                delta: Estimate::of(&v)?,
            })
        })
        .collect();
    (out, warnings)
}

/// Relative improvement `(a - b) / a` of a lower-is-better metric.
pub fn improvement(a: f64, b: f64) -> f64 {
    (a - b) / a
}

/// Row of the tabular results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub metric: String,
    pub class: String,
    pub mode: String,
    pub topology: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
}

/// Per-trial means with CIs, plus pooled means over all flows, per (mode, topology) cell.
pub fn result_rows(reports: &[MetricsReport]) -> Vec<ResultRow> {
    let mut cells: BTreeMap<(String, String), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        cells.entry((r.info.mode_label(), r.info.topology.clone())).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((mode, topology), rs) in cells {
        let mut per: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
        for r in &rs {
            for (m, c, v) in scalar_metrics(r) {
                per.entry((m, c)).or_default().push(v);
            }
        }
        for ((m, c), v) in per {
            let Some(e) = Estimate::of(&v) else { continue };
            rows.push(ResultRow {
                metric: m.into(),
                class: c.into(),
                mode: mode.clone(),
                topology: topology.clone(),
                value: e.mean,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                trials: e.n,
            });
        }
        for (m, c, v) in pooled_metrics(&rs) {
            rows.push(ResultRow {
                metric: m.into(),
                class: c.into(),
                mode: mode.clone(),
                topology: topology.clone(),
                value: v,
                ci_low: v,
                ci_high: v,
                trials: rs.len(),
            });
        }
    }
    rows
}

/// Means over every flow or coflow of every trial.
pub fn pooled_metrics(reports: &[&MetricsReport]) -> Vec<(&'static str, &'static str, f64)> {
    let mut out = Vec::new();
    let fct = |class: FlowClass| -> Vec<f64> {
        reports
            .iter()
            .flat_map(|r| r.flows.iter())
            .filter(|f| f.class == class)
            .map(|f| f.fct_us as f64)
            .collect()
    };
    let e = fct(FlowClass::Elephant);
    if !e.is_empty() {
        out.push(("fct_pooled_mean_us", "elephant", e.mean()));
    }
    let m = fct(FlowClass::Mice);
    if !m.is_empty() {
        out.push(("fct_pooled_mean_us", "mice", m.mean()));
    }
    let c: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.coflows.iter())
        .map(|c| c.completion_us as f64)
        .collect();
    if !c.is_empty() {
        out.push(("coflow_completion_pooled_mean_us", "mice", c.mean()));
    }
    out
}

pub fn write_result_csv<W: Write>(rows: &[ResultRow], w: W) -> csv::Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
