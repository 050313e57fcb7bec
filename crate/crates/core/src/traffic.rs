//! Workload traces: the synthetic uniform generator, the trace CSV format and
//! ingestion of pre-extracted flow records keyed by IPv4 addresses.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{HostId, SwitchId, Topology};

pub const KB: u64 = 1024;
pub const MB: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoflowId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowClass {
    Mice,
    Elephant,
}

impl FlowClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Mice => "mice",
            FlowClass::Elephant => "elephant",
        }
    }
}

/// Static description of one unidirectional host-to-host transfer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: FlowId,
    pub coflow: Option<CoflowId>,
    pub src: HostId,
    pub dst: HostId,
    /// bytes
    pub size: u64,
    /// microseconds
    pub start: u64,
    /// Ground-truth label; only metrics look at it.
    pub class: FlowClass,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub source: String,
    pub seed: Option<u64>,
    pub params: Option<TraceParams>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub flows: Vec<FlowSpec>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn new(flows: Vec<FlowSpec>) -> Self {
        Self {
            flows,
            meta: TraceMeta::default(),
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.flows.iter().map(|f| f.size).sum()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }
}

/// What `n_flows` counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountBasis {
    /// Individual flows: a width-W coflow contributes W.
    #[default]
    Flows,
    /// Transfers: a coflow counts once, like a standalone elephant.
    Transfers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceParams {
    pub n_flows: usize,
    pub count_basis: CountBasis,
    pub elephant_count_fraction: f64,
    pub elephant_demand_fraction: f64,
    pub mice_size_min: u64,
    pub mice_size_max: u64,
    pub elephant_size_min: u64,
    pub elephant_size_max: u64,
    pub coflow_width_min: u32,
    pub coflow_width_max: u32,
    /// Offered load relative to the aggregate packet capacity
    /// (`switches * packet_rate`); sets the Poisson arrival rate.
    pub load: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            n_flows: 1000,
            count_basis: CountBasis::Flows,
            elephant_count_fraction: 0.10,
            elephant_demand_fraction: 0.90,
            mice_size_min: 2 * KB,
            mice_size_max: 32 * KB,
            elephant_size_min: MB,
            elephant_size_max: 100 * MB,
            coflow_width_min: 4,
            coflow_width_max: 32,
            load: 0.5,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("infeasible trace parameters: {0}")]
    Infeasible(String),
    #[error("row {row}: {msg}")]
    Malformed { row: u64, msg: String },
    #[error("{groups} address groups do not fit on {hosts} simulated hosts")]
    Capacity { groups: usize, hosts: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Realized elephant demand must land this close to the requested fraction.
pub const DEMAND_SPLIT_TOLERANCE: f64 = 0.02;

impl TraceParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::Infeasible(m));
        for (name, v) in [
            ("elephant_count_fraction", self.elephant_count_fraction),
            ("elephant_demand_fraction", self.elephant_demand_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must be in (0,1), got {v}"));
            }
        }
        if self.mice_size_min == 0 || self.mice_size_min > self.mice_size_max {
            return bad("mice size range must be positive and ordered".into());
        }
        if self.elephant_size_min == 0 || self.elephant_size_min > self.elephant_size_max {
            return bad("elephant size range must be positive and ordered".into());
        }
        if self.elephant_size_max <= self.mice_size_max {
            return bad("elephants must be able to exceed the largest mice flow".into());
        }
        if self.coflow_width_min == 0 || self.coflow_width_min > self.coflow_width_max {
            return bad("coflow width range must be positive and ordered".into());
        }
        if !(self.load.is_finite() && self.load > 0.0) {
            return bad(format!("load must be positive, got {}", self.load));
        }
        if self.n_flows == 0 {
            return bad("n_flows must be at least 1".into());
        }
        Ok(())
    }
}

enum Unit {
    Elephant { size: u64 },
    Coflow { sizes: Vec<u64> },
}

/// Synthetic uniform trace: elephants are standalone, mice arrive in coflow
/// bursts toward a single destination switch. Arrivals are Poisson.
pub fn generate_uniform_trace(topo: &Topology, params: &TraceParams, seed: u64) -> Result<Trace, TraceError> {
    params.validate()?;
    if topo.switch_count() < 2 {
        return Err(TraceError::Infeasible("need at least two switches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_elephants = ((params.n_flows as f64) * params.elephant_count_fraction).round() as usize;
    let n_rest = params.n_flows - n_elephants;
    if n_elephants == 0 || n_rest == 0 {
        return Err(TraceError::Infeasible(format!(
            "{} flows at elephant fraction {} leaves an empty class",
            params.n_flows, params.elephant_count_fraction
        )));
    }
    let draw_width = |rng: &mut ChaCha8Rng| rng.random_range(params.coflow_width_min..=params.coflow_width_max) as usize;
    let mut widths = Vec::new();
    match params.count_basis {
        CountBasis::Flows => {
            let mut left = n_rest;
            while left > 0 {
                let w = draw_width(&mut rng).min(left);
                widths.push(w);
                left -= w;
            }
        }
        CountBasis::Transfers => {
            for _ in 0..n_rest {
                widths.push(draw_width(&mut rng));
            }
        }
    }

    let mut units: Vec<Unit> = Vec::with_capacity(widths.len() + n_elephants);
    let mut mice_total = 0u64;
    for w in widths {
        let sizes: Vec<u64> = (0..w)
            .map(|_| rng.random_range(params.mice_size_min..=params.mice_size_max))
            .collect();
        mice_total += sizes.iter().sum::<u64>();
        units.push(Unit::Coflow { sizes });
    }
    let target = mice_total as f64 * params.elephant_demand_fraction / (1.0 - params.elephant_demand_fraction);
    let raw: Vec<f64> = (0..n_elephants)
        .map(|_| rng.random_range(params.elephant_size_min as f64..=params.elephant_size_max as f64))
        .collect();
    for size in rescale_elephants(&raw, target, params)? {
        units.push(Unit::Elephant { size });
    }

    let elephant_total: u64 = units
        .iter()
        .map(|u| match u {
            Unit::Elephant { size } => *size,
            Unit::Coflow { .. } => 0,
        })
        .sum();
    let realized = elephant_total as f64 / (elephant_total + mice_total) as f64;
    if (realized - params.elephant_demand_fraction).abs() > DEMAND_SPLIT_TOLERANCE {
        return Err(TraceError::Infeasible(format!(
            "realized elephant demand fraction {realized:.4} misses {} by more than {DEMAND_SPLIT_TOLERANCE}",
            params.elephant_demand_fraction
        )));
    }

    units.shuffle(&mut rng);
    let total_bits = 8.0 * (elephant_total + mice_total) as f64;
    let capacity = params.load * topo.switch_count() as f64 * topo.packet_rate();
    let span_us = total_bits / capacity * 1e6;
    let gap = Exp::new(units.len() as f64 / span_us).expect("positive arrival rate");

    let n_sw = topo.switch_count() as u32;
    let pick_host = |rng: &mut ChaCha8Rng, s: SwitchId| {
        let hs = topo.hosts_of(s);
        hs[rng.random_range(0..hs.len())]
    };
    let other_switch = |rng: &mut ChaCha8Rng, not: SwitchId| {
        let v = rng.random_range(0..n_sw - 1);
        SwitchId(if v >= not.0 { v + 1 } else { v })
    };

    let mut flows = Vec::with_capacity(params.n_flows);
    let mut clock = 0.0f64;
    let mut next_coflow = 0u64;
    for unit in &units {
        clock += gap.sample(&mut rng);
        let start = clock.floor() as u64;
        match unit {
            Unit::Elephant { size } => {
                let s = SwitchId(rng.random_range(0..n_sw));
                let d = other_switch(&mut rng, s);
                flows.push(FlowSpec {
                    id: FlowId(0),
                    coflow: None,
                    src: pick_host(&mut rng, s),
                    dst: pick_host(&mut rng, d),
                    size: *size,
                    start,
                    class: FlowClass::Elephant,
                });
            }
            Unit::Coflow { sizes } => {
                let id = CoflowId(next_coflow);
                next_coflow += 1;
                let d = SwitchId(rng.random_range(0..n_sw));
                for &size in sizes {
                    let s = other_switch(&mut rng, d);
                    flows.push(FlowSpec {
                        id: FlowId(0),
                        coflow: Some(id),
                        src: pick_host(&mut rng, s),
                        dst: pick_host(&mut rng, d),
                        size,
                        start,
                        class: FlowClass::Mice,
                    });
                }
            }
        }
    }
    flows.sort_by_key(|f| f.start);
    for (i, f) in flows.iter_mut().enumerate() {
        f.id = FlowId(i as u64);
    }
    Ok(Trace {
        flows,
        meta: TraceMeta {
            source: "uniform".into(),
            seed: Some(seed),
            params: Some(params.clone()),
        },
    })
}

// Multiplicative rescale toward `target`, clamping every elephant strictly
// above the mice range and at most the configured maximum. Clamped sizes are
// frozen and the remainder re-scaled until the total settles.
fn rescale_elephants(raw: &[f64], target: f64, params: &TraceParams) -> Result<Vec<u64>, TraceError> {
    let lo = (params.mice_size_max + 1) as f64;
    let hi = params.elephant_size_max as f64;
    let n = raw.len() as f64;
    if target < lo * n || target > hi * n {
        return Err(TraceError::Infeasible(format!(
            "elephant demand {target:.0} B cannot be met by {} elephants sized in [{lo}, {hi}] B",
            raw.len()
        )));
    }
    let mut sizes = raw.to_vec();
    let mut fixed = vec![false; sizes.len()];
    for _ in 0..64 {
        let fixed_sum: f64 = sizes.iter().zip(&fixed).filter(|(_, &f)| f).map(|(s, _)| s).sum();
        let free_sum: f64 = sizes.iter().zip(&fixed).filter(|(_, &f)| !f).map(|(s, _)| s).sum();
        if free_sum <= 0.0 {
            break;
        }
        let c = (target - fixed_sum) / free_sum;
        let mut changed = false;
        for (s, f) in sizes.iter_mut().zip(fixed.iter_mut()) {
            if *f {
                continue;
            }
            *s *= c;
            if *s < lo {
                *s = lo;
                *f = true;
                changed = true;
            } else if *s > hi {
                *s = hi;
                *f = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(sizes.iter().map(|s| s.round().clamp(lo, hi) as u64).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    flow_id: u64,
    coflow_id: Option<u64>,
    src_host: u32,
    dst_host: u32,
    size_bytes: u64,
    start_time_us: u64,
    class: FlowClass,
}

/// Writes the trace CSV (`flow_id,coflow_id,src_host,dst_host,size_bytes,start_time_us,class`).
pub fn write_trace_csv<W: Write>(trace: &Trace, w: W) -> Result<(), TraceError> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for f in &trace.flows {
        wr.serialize(CsvRow {
            flow_id: f.id.0,
            coflow_id: f.coflow.map(|c| c.0),
            src_host: f.src.0,
            dst_host: f.dst.0,
            size_bytes: f.size,
            start_time_us: f.start,
            class: f.class,
        })?;
    }
    // An empty trace still gets its header.
    if trace.flows.is_empty() {
        wr.write_record(["flow_id", "coflow_id", "src_host", "dst_host", "size_bytes", "start_time_us", "class"])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<Trace, TraceError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut flows = Vec::new();
    for (i, row) in rd.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| TraceError::Malformed {
            row: i as u64 + 1,
            msg: e.to_string(),
        })?;
        flows.push(FlowSpec {
            id: FlowId(row.flow_id),
            coflow: row.coflow_id.map(CoflowId),
            src: HostId(row.src_host),
            dst: HostId(row.dst_host),
            size: row.size_bytes,
            start: row.start_time_us,
            class: row.class,
        });
    }
    Ok(Trace {
        flows,
        meta: TraceMeta {
            source: "csv".into(),
            ..Default::default()
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Addresses sharing this many leading bits become one simulated host.
    pub prefix_bits: u8,
    /// Start times are divided by this factor.
    pub time_compression: f64,
    /// Size above which unlabeled records are classified as elephants.
    pub elephant_min_bytes: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            prefix_bits: 24,
            time_compression: 1.0,
            elephant_min_bytes: 32 * KB + 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: usize,
    pub groups: usize,
    /// Records whose endpoints fell into the same group.
    pub dropped_intra_group: usize,
}

#[derive(Debug, Deserialize)]
struct RecordRow {
    flow_id: u64,
    coflow_id: Option<u64>,
    src_host: String,
    dst_host: String,
    size_bytes: u64,
    start_time_us: u64,
    class: Option<String>,
}

/// Consolidates address-keyed flow records onto simulated hosts. Prefix groups
/// are sorted numerically and dealt round-robin across switches.
pub fn ingest_flow_records<R: Read>(
    r: R,
    topo: &Topology,
    opts: &IngestOptions,
) -> Result<(Trace, IngestSummary), TraceError> {
    if opts.prefix_bits > 32 {
        return Err(TraceError::Infeasible(format!("prefix of {} bits", opts.prefix_bits)));
    }
    if !(opts.time_compression.is_finite() && opts.time_compression > 0.0) {
        return Err(TraceError::Infeasible("time compression must be positive".into()));
    }
    let mask = |a: Ipv4Addr| -> u32 {
        let v = u32::from(a);
        if opts.prefix_bits == 0 {
            0
        } else {
            v >> (32 - opts.prefix_bits as u32)
        }
    };
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let mut rows = Vec::new();
    for (i, row) in rd.deserialize::<RecordRow>().enumerate() {
        let row_no = i as u64 + 1;
        let malformed = |msg: String| TraceError::Malformed { row: row_no, msg };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let src: Ipv4Addr = row
            .src_host
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad source address {:?}", row.src_host)))?;
        let dst: Ipv4Addr = row
            .dst_host
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad destination address {:?}", row.dst_host)))?;
        if row.size_bytes == 0 {
            return Err(malformed("zero-sized flow".into()));
        }
        let class = match row.class.as_deref().map(str::trim) {
            None | Some("") => {
                if row.size_bytes >= opts.elephant_min_bytes {
                    FlowClass::Elephant
                } else {
                    FlowClass::Mice
                }
            }
            Some("mice") => FlowClass::Mice,
            Some("elephant") => FlowClass::Elephant,
            Some(other) => return Err(malformed(format!("unknown class {other:?}"))),
        };
        rows.push((row.flow_id, row.coflow_id, mask(src), mask(dst), row.size_bytes, row.start_time_us, class));
    }

    let groups: BTreeSet<u32> = rows.iter().flat_map(|r| [r.2, r.3]).collect();
    if groups.len() > topo.host_count() {
        return Err(TraceError::Capacity {
            groups: groups.len(),
            hosts: topo.host_count(),
        });
    }
    let n_sw = topo.switch_count();
    let host_of: BTreeMap<u32, HostId> = groups
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let s = SwitchId((i % n_sw) as u32);
            (g, topo.hosts_of(s)[i / n_sw])
        })
        .collect();
    // Round-robin fills switches evenly, so i / n_sw never exceeds hosts per switch
    // as long as every switch has the same host count.

    let mut summary = IngestSummary {
        records: rows.len(),
        groups: groups.len(),
        dropped_intra_group: 0,
    };
    let mut flows = Vec::with_capacity(rows.len());
    for (id, coflow, sg, dg, size, start, class) in rows {
        if sg == dg {
            summary.dropped_intra_group += 1;
            continue;
        }
        flows.push(FlowSpec {
            id: FlowId(id),
            coflow: coflow.map(CoflowId),
            src: host_of[&sg],
            dst: host_of[&dg],
            size,
            start: (start as f64 / opts.time_compression).floor() as u64,
            class,
        });
    }
    flows.sort_by_key(|f| f.start);
    Ok((
        Trace {
            flows,
            meta: TraceMeta {
                source: "flow-records".into(),
                ..Default::default()
            },
        },
        summary,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Unsorted { row: usize },
    ZeroSize { row: usize },
    SelfLoop { row: usize },
    ClassSize { row: usize, class: FlowClass, size: u64 },
    DuplicateId { row: usize },
    UnknownHost { row: usize },
    CoflowWithElephant { row: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairDemandSummary {
    pub pairs: usize,
    pub max_bytes: u64,
    pub mean_bytes: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub flows: usize,
    pub elephants: usize,
    pub mice: usize,
    pub coflows: usize,
    pub total_bytes: u64,
    pub elephant_bytes: u64,
    /// `None` for an empty trace.
    pub elephant_demand_fraction: Option<f64>,
    pub sorted: bool,
    pub violations: Vec<Violation>,
    /// Switch-pair demand (needs a topology to resolve hosts).
    pub pair_demand: Option<PairDemandSummary>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_trace(trace: &Trace, topo: Option<&Topology>) -> ValidationReport {
    let limits = trace.meta.params.clone().unwrap_or_default();
    let mut rep = ValidationReport {
        sorted: true,
        ..Default::default()
    };
    let mut ids = BTreeSet::new();
    let mut coflows = BTreeSet::new();
    let mut pairs: BTreeMap<(SwitchId, SwitchId), u64> = BTreeMap::new();
    let mut prev_start = 0;
    for (row, f) in trace.flows.iter().enumerate() {
        rep.flows += 1;
        rep.total_bytes += f.size;
        match f.class {
            FlowClass::Elephant => {
                rep.elephants += 1;
                rep.elephant_bytes += f.size;
                if f.size > limits.elephant_size_max {
                    rep.violations.push(Violation::ClassSize { row, class: f.class, size: f.size });
                }
                if f.coflow.is_some() {
                    rep.violations.push(Violation::CoflowWithElephant { row });
                }
            }
            FlowClass::Mice => {
                rep.mice += 1;
                if f.size > limits.mice_size_max {
                    rep.violations.push(Violation::ClassSize { row, class: f.class, size: f.size });
                }
            }
        }
        if f.start < prev_start {
            rep.sorted = false;
            rep.violations.push(Violation::Unsorted { row });
        }
        prev_start = prev_start.max(f.start);
        if f.size == 0 {
            rep.violations.push(Violation::ZeroSize { row });
        }
        if f.src == f.dst {
            rep.violations.push(Violation::SelfLoop { row });
        }
        if !ids.insert(f.id) {
            rep.violations.push(Violation::DuplicateId { row });
        }
        if let Some(c) = f.coflow {
            coflows.insert(c);
        }
        if let Some(t) = topo {
            match (t.host_switch(f.src), t.host_switch(f.dst)) {
                (Ok(s), Ok(d)) => *pairs.entry((s, d)).or_default() += f.size,
                _ => rep.violations.push(Violation::UnknownHost { row }),
            }
        }
    }
    rep.coflows = coflows.len();
    if rep.total_bytes > 0 {
        rep.elephant_demand_fraction = Some(rep.elephant_bytes as f64 / rep.total_bytes as f64);
    }
    if topo.is_some() {
        let total: u64 = pairs.values().sum();
        rep.pair_demand = Some(PairDemandSummary {
            pairs: pairs.len(),
            max_bytes: pairs.values().copied().max().unwrap_or(0),
            mean_bytes: if pairs.is_empty() { 0.0 } else { total as f64 / pairs.len() as f64 },
        });
    }
    rep
}
