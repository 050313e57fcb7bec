//! Discrete-event fluid simulation of the hybrid upper tier.
//!
//! Rates are constant between events and recomputed (max-min fair) once per
//! timestamp after every event at that time has been handled, so completion
//! and detection instants are exact up to rounding to the next microsecond.

pub mod alloc;
pub mod event;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use alloc::{allocate_rates, Allocator};
pub use event::{Event, EventKind, EventQueue, Payload};

use crate::control::{
    detect_elephant, observe_demand, schedule_circuits, DemandMatrix, DetectorConfig, FlowObservation,
    SchedulerConfig,
};
use crate::metrics::{coflow_records, footprint_buckets, FlowRecord, MetricsReport, RunInfo};
use crate::switch::{
    compile_rules, match_packet, CircuitId, CircuitMode, InstallRequest, OcsEvent, OcsState, Packet, PendingId,
    PlanError, RuleMode, RuleOrigin, SwitchTiming, IngressClass,
};
use crate::topology::{LinkId, Path, SwitchId, Topology, TopologyError};
use crate::traffic::{FlowId, FlowSpec, Trace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitSetting {
    None,
    Private,
    #[default]
    Shared,
}

impl CircuitSetting {
    pub fn mode(self) -> Option<CircuitMode> {
        match self {
            CircuitSetting::None => None,
            CircuitSetting::Private => Some(CircuitMode::Private),
            CircuitSetting::Shared => Some(CircuitMode::Shared),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CircuitSetting::None => "none",
            CircuitSetting::Private => "private",
            CircuitSetting::Shared => "shared",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub detector: DetectorConfig,
    pub observer_period_us: u64,
    /// bits/s
    pub th_configure_bps: f64,
    /// bits/s
    pub th_remove_bps: f64,
    pub decision_period_us: u64,
    pub hop_weighted: bool,
    pub circuits: CircuitSetting,
    pub rules: RuleMode,
    pub timing: SwitchTiming,
    pub dscp_e: u8,
    pub seed: u64,
    /// Abort once simulated time passes this bound.
    pub max_sim_time_us: u64,
    pub record_event_log: bool,
    pub record_demand: bool,
    /// Check link capacities after every reallocation.
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            observer_period_us: 100_000,
            th_configure_bps: 3e9,
            th_remove_bps: 1e9,
            decision_period_us: 100_000,
            hop_weighted: false,
            circuits: CircuitSetting::Shared,
            rules: RuleMode::Cshare,
            timing: SwitchTiming::default(),
            dscp_e: 8,
            seed: 0,
            max_sim_time_us: 3_600_000_000,
            record_event_log: false,
            record_demand: false,
            check_invariants: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.detector.validate()?;
        if self.observer_period_us == 0 {
            return Err("observer period must be positive".into());
        }
        if self.timing.setup_rate <= 0.0 || !self.timing.setup_rate.is_finite() {
            return Err("setup rate must be positive".into());
        }
        if self.timing.table_capacity == 0 {
            return Err("table capacity must be positive".into());
        }
        if self.dscp_e > 63 {
            return Err("DSCP code point must fit in 6 bits".into());
        }
        self.scheduler(CircuitMode::Shared).validate()
    }

    pub fn scheduler(&self, mode: CircuitMode) -> SchedulerConfig {
        SchedulerConfig {
            th_configure: self.th_configure_bps,
            th_remove: self.th_remove_bps,
            decision_period_us: self.decision_period_us,
            mode,
            hop_weighted: self.hop_weighted,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("simulated time cap {cap_us} us reached with {remaining} flows unfinished")]
    TimeCap { cap_us: u64, remaining: usize },
    #[error("event queue drained with {0} flows unfinished")]
    Stalled(usize),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("path for flow {0:?} uses a circuit that is not up")]
    PathRejected(FlowId),
    #[error("unknown flow {0:?}")]
    UnknownFlow(FlowId),
    #[error("link {link:?} over capacity: {load} > {capacity}")]
    Capacity { link: LinkId, load: f64, capacity: f64 },
    #[error("invariant violated at {at} us: {msg}")]
    Invariant { at: u64, msg: String },
}

/// Dynamic state of one flow.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub spec: FlowSpec,
    /// Default switch route, source switch first.
    pub route: Arc<[SwitchId]>,
    pub default_path: Path,
    pub bytes_sent: f64,
    /// bits/s
    pub rate: f64,
    pub path: Path,
    pub tagged: bool,
    pub tag_time: Option<u64>,
    pub completion_time: Option<u64>,
    pub active: bool,
    pub circuit: Option<CircuitId>,
    pub circuits_used: Vec<(SwitchId, SwitchId)>,
    pub first_circuit_time: Option<u64>,
    pub bytes_on_circuit: f64,
    gen: u32,
    due: u64,
    detect_gen: u32,
    detect_cross: Option<u64>,
    window_bytes: f64,
    /// `bytes_sent` is current as of this time.
    synced: u64,
    /// Per-flow rule requested or installed: (circuit, switch).
    rule: Option<(CircuitId, SwitchId)>,
}

impl FlowState {
    pub fn new(spec: FlowSpec, route: Arc<[SwitchId]>, default_path: Path) -> Self {
        Self {
            spec,
            route,
            path: default_path.clone(),
            default_path,
            bytes_sent: 0.0,
            rate: 0.0,
            tagged: false,
            tag_time: None,
            completion_time: None,
            active: false,
            circuit: None,
            circuits_used: Vec::new(),
            first_circuit_time: None,
            bytes_on_circuit: 0.0,
            gen: 0,
            due: u64::MAX,
            detect_gen: 0,
            detect_cross: None,
            window_bytes: 0.0,
            synced: 0,
            rule: None,
        }
    }

    pub fn src_switch(&self) -> SwitchId {
        self.route[0]
    }

    pub fn dst_switch(&self) -> SwitchId {
        self.route[self.route.len() - 1]
    }

    pub fn remaining(&self) -> f64 {
        (self.spec.size as f64 - self.bytes_sent).max(0.0)
    }

    fn finished(&self) -> bool {
        self.bytes_sent >= self.spec.size as f64
    }

    /// Brings `bytes_sent` forward to `t` at the current rate.
    fn sync(&mut self, ocs: &mut OcsState, t: u64) {
        if t <= self.synced {
            return;
        }
        let dt = (t - self.synced) as f64;
        self.synced = t;
        if self.rate <= 0.0 || !self.active {
            return;
        }
        let size = self.spec.size as f64;
        let inc = if self.due <= t {
            size - self.bytes_sent
        } else {
            (self.rate * dt / 8e6).min(size - self.bytes_sent)
        };
        self.bytes_sent += inc;
        if let Some(c) = self.circuit {
            self.bytes_on_circuit += inc;
            ocs.add_circuit_bytes(c, inc);
        }
    }
}

/// Demand matrix snapshot for the debug dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandRow {
    pub t_us: u64,
    pub transit_switch: u32,
    pub dst_switch: u32,
    pub rate_bps: f64,
    pub flows: u32,
}

pub struct Simulation<'t> {
    topo: &'t Topology,
    cfg: SimConfig,
    flows: Vec<FlowState>,
    index: HashMap<FlowId, u32>,
    active: Vec<u32>,
    pos: Vec<u32>,
    queue: EventQueue,
    now: u64,
    dirty: bool,
    alloc: Allocator,
    rates: Vec<f64>,
    ocs: OcsState,
    demand: DemandMatrix,
    last_tick: u64,
    remaining: usize,
    hasher: Sha256,
    events: u64,
    event_log: Vec<String>,
    demand_log: Vec<DemandRow>,
    max_cshare_rules: u32,
    max_up_circuits: u32,
}

const INACTIVE: u32 = u32::MAX;

impl<'t> Simulation<'t> {
    pub fn new(topo: &'t Topology, trace: &Trace, cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate().map_err(SimError::Config)?;
        let mut routes: HashMap<(SwitchId, SwitchId), Arc<[SwitchId]>> = HashMap::new();
        let mut flows = Vec::with_capacity(trace.flows.len());
        let mut index = HashMap::with_capacity(trace.flows.len());
        let mut queue = EventQueue::new();
        for (i, spec) in trace.flows.iter().enumerate() {
            let path = topo.default_path(spec.src, spec.dst)?;
            let s = topo.host_switch(spec.src)?;
            let d = topo.host_switch(spec.dst)?;
            let route = routes
                .entry((s, d))
                .or_insert_with(|| Arc::from(topo.switch_route(s, d)))
                .clone();
            index.insert(spec.id, i as u32);
            queue.push(spec.start, EventKind::FlowArrival, Payload::Flow { flow: i as u32, gen: 0 });
            flows.push(FlowState::new(spec.clone(), route, path));
        }
        if cfg.circuits.mode().is_some() && !flows.is_empty() {
            queue.push(cfg.observer_period_us, EventKind::ObserverTick, Payload::None);
            queue.push(cfg.decision_period_us, EventKind::SchedulerDecision, Payload::None);
        }
        let n = flows.len();
        Ok(Self {
            topo,
            ocs: OcsState::new(topo, cfg.timing),
            cfg,
            remaining: n,
            pos: vec![INACTIVE; n],
            flows,
            index,
            active: Vec::new(),
            queue,
            now: 0,
            dirty: false,
            alloc: Allocator::new(),
            rates: Vec::new(),
            demand: DemandMatrix::new(),
            last_tick: 0,
            hasher: Sha256::new(),
            events: 0,
            event_log: Vec::new(),
            demand_log: Vec::new(),
            max_cshare_rules: 0,
            max_up_circuits: 0,
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn flows(&self) -> &[FlowState] {
        &self.flows
    }

    pub fn flow(&self, id: FlowId) -> Option<&FlowState> {
        self.index.get(&id).map(|&i| &self.flows[i as usize])
    }

    pub fn ocs(&self) -> &OcsState {
        &self.ocs
    }

    pub fn demand(&self) -> &DemandMatrix {
        &self.demand
    }

    pub fn event_log(&self) -> &[String] {
        &self.event_log
    }

    pub fn demand_log(&self) -> &[DemandRow] {
        &self.demand_log
    }

    pub fn event_log_hash(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    pub fn is_done(&self) -> bool {
        self.remaining == 0
    }

    /// Processes every event up to and including time `t`, then moves the clock to `t`.
    pub fn run_until(&mut self, t: u64) -> Result<(), SimError> {
        loop {
            if self.dirty {
                self.reallocate()?;
            }
            if self.remaining == 0 {
                return Ok(());
            }
            let Some(next) = self.queue.peek_time() else {
                break;
            };
            if next > t {
                break;
            }
            if next > self.cfg.max_sim_time_us {
                return Err(SimError::TimeCap {
                    cap_us: self.cfg.max_sim_time_us,
                    remaining: self.remaining,
                });
            }
            // Drain one timestamp before reallocating.
            while self.queue.peek_time() == Some(next) {
                let ev = self.queue.next_event().expect("peeked");
                if ev.time > self.now {
                    self.advance(ev.time);
                }
                self.handle(ev)?;
            }
        }
        if t != u64::MAX && t > self.now {
            self.advance(t);
        }
        self.sync_all();
        Ok(())
    }

    /// Runs to completion.
    pub fn run(mut self) -> Result<MetricsReport, SimError> {
        self.run_until(u64::MAX)?;
        if self.remaining > 0 {
            return Err(SimError::Stalled(self.remaining));
        }
        Ok(self.into_report())
    }

    /// Moves the clock; flow progress is brought forward lazily.
    fn advance(&mut self, t: u64) {
        self.now = t;
    }

    fn sync_all(&mut self) {
        for &i in &self.active {
            self.flows[i as usize].sync(&mut self.ocs, self.now);
        }
    }

    fn reallocate(&mut self) -> Result<(), SimError> {
        self.dirty = false;
        let topo = self.topo;
        let paths: Vec<&[LinkId]> = self
            .active
            .iter()
            .map(|&i| self.flows[i as usize].path.links())
            .collect();
        self.alloc.allocate(&paths, |l| topo.capacity(l), &mut self.rates);
        if self.cfg.check_invariants {
            let mut load: HashMap<LinkId, f64> = HashMap::new();
            for (k, p) in paths.iter().enumerate() {
                for &l in p.iter() {
                    *load.entry(l).or_default() += self.rates[k];
                }
            }
            for (l, x) in load {
                let cap = topo.capacity(l);
                if x > cap * (1.0 + 1e-9) {
                    return Err(SimError::Capacity {
                        link: l,
                        load: x,
                        capacity: cap,
                    });
                }
            }
            self.check_ocs()?;
        }
        drop(paths);
        for k in 0..self.active.len() {
            let i = self.active[k];
            let new = self.rates[k];
            let f = &mut self.flows[i as usize];
            if new == f.rate {
                continue;
            }
            f.sync(&mut self.ocs, self.now);
            f.rate = new;
            f.gen = f.gen.wrapping_add(1);
            let rem = f.remaining();
            f.due = self.now + (rem * 8e6 / new).ceil() as u64;
            self.queue.push(
                f.due,
                EventKind::FlowCompletion,
                Payload::Flow { flow: i, gen: f.gen },
            );
            if !f.tagged && f.detect_cross.is_none_or(|c| c > self.now) {
                f.detect_gen = f.detect_gen.wrapping_add(1);
                f.detect_cross = None;
                if let Some(at) = detect_elephant(f, &self.cfg.detector, self.now) {
                    f.detect_cross = Some(at - self.cfg.detector.detection_latency_us);
                    self.queue.push(
                        at,
                        EventKind::DetectionFires,
                        Payload::Flow {
                            flow: i,
                            gen: f.detect_gen,
                        },
                    );
                }
            }
        }
        Ok(())
    }

    fn check_ocs(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Invariant { at: self.now, msg });
        if !self.ocs.is_valid_matching() {
            return bad("circuits do not form a matching".into());
        }
        for s in self.topo.switches() {
            let (rules, up, ports) = (
                self.ocs.cshare_rules(s),
                self.ocs.up_circuits_from(s),
                self.topo.ocs_ports(s) as usize,
            );
            if rules > up || up > ports {
                return bad(format!("switch {}: {rules} cshare rules, {up} circuits up, {ports} ports", s.0));
            }
        }
        Ok(())
    }

    fn log_event(&mut self, ev: &Event) {
        self.events += 1;
        let mut line = String::with_capacity(48);
        let _ = write!(line, "{},{},", ev.time, ev.kind.as_str());
        let _ = match ev.payload {
            Payload::None => write!(line, "{{}}"),
            Payload::Flow { flow, .. } => write!(line, "{{\"flow\":{}}}", self.flows[flow as usize].spec.id.0),
            Payload::Circuit(c) => write!(line, "{{\"circuit\":{}}}", c.0),
            Payload::Rule(r) => write!(line, "{{\"rule\":{}}}", r.0),
        };
        line.push('\n');
        self.hasher.update(line.as_bytes());
        if self.cfg.record_event_log {
            line.pop();
            self.event_log.push(line);
        }
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        match (ev.kind, ev.payload) {
            (EventKind::FlowArrival, Payload::Flow { flow, .. }) => {
                self.log_event(&ev);
                let f = &mut self.flows[flow as usize];
                f.active = true;
                f.window_bytes = 0.0;
                f.synced = self.now;
                self.pos[flow as usize] = self.active.len() as u32;
                self.active.push(flow);
                self.dirty = true;
            }
            (EventKind::FlowCompletion, Payload::Flow { flow, gen }) => {
                let f = &self.flows[flow as usize];
                if !f.active || f.gen != gen {
                    return Ok(());
                }
                self.log_event(&ev);
                self.complete(flow);
            }
            (EventKind::DetectionFires, Payload::Flow { flow, gen }) => {
                let f = &self.flows[flow as usize];
                if !f.active || f.tagged || f.detect_gen != gen {
                    return Ok(());
                }
                self.log_event(&ev);
                self.tag(flow)?;
            }
            (EventKind::ObserverTick, _) => {
                self.log_event(&ev);
                self.observe();
                self.queue
                    .push(self.now + self.cfg.observer_period_us, EventKind::ObserverTick, Payload::None);
            }
            (EventKind::SchedulerDecision, _) => {
                self.log_event(&ev);
                self.decide()?;
                self.queue
                    .push(self.now + self.cfg.decision_period_us, EventKind::SchedulerDecision, Payload::None);
            }
            (EventKind::CircuitUp, Payload::Circuit(c)) => {
                self.log_event(&ev);
                self.circuit_up(c)?;
            }
            (EventKind::CircuitDown, Payload::Circuit(c)) => {
                self.log_event(&ev);
                self.circuit_down(c)?;
            }
            (EventKind::RuleInstalled, Payload::Rule(r)) => {
                self.log_event(&ev);
                self.rule_installed(r)?;
            }
            _ => unreachable!("malformed event {ev:?}"),
        }
        Ok(())
    }

    fn complete(&mut self, flow: u32) {
        let now = self.now;
        let f = &mut self.flows[flow as usize];
        f.sync(&mut self.ocs, now);
        f.bytes_sent = f.spec.size as f64;
        f.completion_time = Some(now);
        f.active = false;
        f.rate = 0.0;
        if let Some((_, s)) = f.rule.take() {
            self.ocs.delete_flow_rules(f.spec.id, s, now);
        }
        let p = self.pos[flow as usize] as usize;
        self.active.swap_remove(p);
        if p < self.active.len() {
            self.pos[self.active[p] as usize] = p as u32;
        }
        self.pos[flow as usize] = INACTIVE;
        self.remaining -= 1;
        self.dirty = true;
    }

    /// Marks a flow as an elephant. Repeated calls keep the first tag time.
    pub fn tag_flow(&mut self, id: FlowId, at: u64) -> Result<(), SimError> {
        let i = *self.index.get(&id).ok_or(SimError::UnknownFlow(id))?;
        if at > self.now {
            self.run_until(at)?;
        }
        if !self.flows[i as usize].active {
            return Ok(());
        }
        self.tag(i)?;
        if self.dirty {
            self.reallocate()?;
        }
        Ok(())
    }

    fn tag(&mut self, flow: u32) -> Result<(), SimError> {
        let f = &mut self.flows[flow as usize];
        if f.tagged {
            return Ok(());
        }
        f.sync(&mut self.ocs, self.now);
        f.tagged = true;
        f.tag_time = Some(self.now);
        f.window_bytes = f.bytes_sent;
        match self.cfg.rules {
            RuleMode::Cshare => self.reroute(flow),
            RuleMode::PerFlow => {
                self.request_flow_rule(flow);
                Ok(())
            }
        }
    }

    fn packet(&self, f: &FlowState, hop: usize) -> Packet {
        Packet {
            dscp: if f.tagged { self.cfg.dscp_e } else { 0 },
            dst_switch: f.dst_switch(),
            ingress: if hop == 0 {
                IngressClass::Lower
            } else {
                IngressClass::Upper
            },
            flow: f.spec.id,
        }
    }

    /// Walks the default route and takes the first matching circuit rule.
    fn resolve(&self, flow: u32) -> (Path, Option<CircuitId>) {
        let f = &self.flows[flow as usize];
        let route = &f.route;
        for hop in 0..route.len().saturating_sub(1) {
            let s = route[hop];
            let pkt = self.packet(f, hop);
            if let Some(rule) = match_packet(self.ocs.table(s), &pkt) {
                let mut links = Vec::with_capacity(hop + 3);
                links.push(self.topo.host_uplink(f.spec.src));
                for w in route[..=hop].windows(2) {
                    links.push(self.topo.packet_link(w[0], w[1]).expect("route uses packet links"));
                }
                debug_assert_eq!(rule.out_circuit, f.dst_switch());
                links.push(self.topo.circuit_link(s, rule.out_circuit));
                links.push(self.topo.host_downlink(f.spec.dst));
                return (Path(links), Some(rule.circuit));
            }
        }
        (f.default_path.clone(), None)
    }

    fn reroute(&mut self, flow: u32) -> Result<(), SimError> {
        let (path, circuit) = self.resolve(flow);
        self.set_path(flow, path, circuit)?;
        Ok(())
    }

    fn set_path(&mut self, flow: u32, path: Path, circuit: Option<CircuitId>) -> Result<bool, SimError> {
        let now = self.now;
        self.flows[flow as usize].sync(&mut self.ocs, now);
        let f = &self.flows[flow as usize];
        if !f.active || f.finished() || f.path == path {
            return Ok(false);
        }
        if let Some(c) = circuit {
            if !self.ocs.is_up(c) {
                return Err(SimError::PathRejected(f.spec.id));
            }
        }
        let pair = circuit.and_then(|c| self.ocs.circuit(c)).map(|c| (c.src, c.dst));
        let f = &mut self.flows[flow as usize];
        f.path = path;
        f.circuit = circuit;
        if let Some(p) = pair {
            if f.circuits_used.last() != Some(&p) {
                f.circuits_used.push(p);
            }
            f.first_circuit_time.get_or_insert(now);
        }
        self.dirty = true;
        Ok(true)
    }

    /// Moves a flow onto `new_path` at time `at`. Returns whether anything changed.
    pub fn apply_path_update(&mut self, id: FlowId, new_path: Path, at: u64) -> Result<bool, SimError> {
        let i = *self.index.get(&id).ok_or(SimError::UnknownFlow(id))?;
        if at > self.now {
            self.run_until(at)?;
        }
        let mut circuit = None;
        for &l in new_path.links() {
            if let Some((s, d)) = self.topo.circuit_endpoints(l) {
                match self.ocs.up_circuit(s, d) {
                    Some(c) => circuit = Some(c.id),
                    None => return Err(SimError::PathRejected(id)),
                }
            }
        }
        let changed = self.set_path(i, new_path, circuit)?;
        if self.dirty {
            self.reallocate()?;
        }
        Ok(changed)
    }

    /// Requests a per-flow rule at the first switch on the route whose up circuit
    /// toward the destination would match the flow.
    fn request_flow_rule(&mut self, flow: u32) {
        let f = &self.flows[flow as usize];
        if !f.active || !f.tagged || f.rule.is_some() || f.finished() {
            return;
        }
        let dst = f.dst_switch();
        let mut found = None;
        for hop in 0..f.route.len() - 1 {
            let s = f.route[hop];
            if let Some(c) = self.ocs.up_circuit(s, dst) {
                let rule = compile_rules(c, RuleMode::PerFlow, self.cfg.dscp_e, &[f.spec.id])[0];
                if rule.matcher.matches(&self.packet(f, hop)) {
                    found = Some(rule);
                    break;
                }
            }
        }
        let Some(rule) = found else { return };
        if let InstallRequest::Queued { id, effective_at } = self.ocs.request_install(rule, self.now) {
            self.flows[flow as usize].rule = Some((rule.circuit, rule.switch));
            self.queue.push(effective_at, EventKind::RuleInstalled, Payload::Rule(id));
        }
    }

    fn circuit_up(&mut self, id: CircuitId) -> Result<(), SimError> {
        let Some(c) = self.ocs.circuit_up(id, self.now).cloned() else {
            return Ok(());
        };
        self.max_up_circuits = self.max_up_circuits.max(self.ocs.up_circuits_from(c.src) as u32);
        match self.cfg.rules {
            RuleMode::Cshare => {
                let rule = compile_rules(&c, RuleMode::Cshare, self.cfg.dscp_e, &[])[0];
                if let InstallRequest::Queued { id, effective_at } = self.ocs.request_install(rule, self.now) {
                    self.queue.push(effective_at, EventKind::RuleInstalled, Payload::Rule(id));
                }
            }
            RuleMode::PerFlow => {
                let candidates: Vec<u32> = self
                    .active
                    .iter()
                    .copied()
                    .filter(|&i| {
                        let f = &self.flows[i as usize];
                        f.tagged && f.rule.is_none() && f.dst_switch() == c.dst && f.route.contains(&c.src)
                    })
                    .collect();
                for i in candidates {
                    self.request_flow_rule(i);
                }
            }
        }
        Ok(())
    }

    fn circuit_down(&mut self, id: CircuitId) -> Result<(), SimError> {
        if self.ocs.circuit_down(id, self.now).is_none() {
            return Ok(());
        }
        let affected: Vec<u32> = self
            .active
            .iter()
            .copied()
            .filter(|&i| {
                let f = &self.flows[i as usize];
                f.circuit == Some(id) || f.rule.is_some_and(|(c, _)| c == id)
            })
            .collect();
        for i in affected {
            let f = &mut self.flows[i as usize];
            if f.rule.is_some_and(|(c, _)| c == id) {
                f.rule = None;
            }
            self.reroute(i)?;
        }
        Ok(())
    }

    fn rule_installed(&mut self, id: PendingId) -> Result<(), SimError> {
        let Some(&rule) = self.ocs.pending(id) else {
            return Ok(());
        };
        let owner = match rule.origin {
            RuleOrigin::Cshare => None,
            RuleOrigin::PerFlow(fid) => self.index.get(&fid).copied(),
        };
        let keep = match owner {
            None => true,
            Some(i) => {
                let f = &self.flows[i as usize];
                f.active && f.rule == Some((rule.circuit, rule.switch))
            }
        };
        let landed = self.ocs.land(id, self.now, keep);
        if let Some(i) = owner {
            let f = &mut self.flows[i as usize];
            if landed.is_none() && f.rule == Some((rule.circuit, rule.switch)) {
                f.rule = None;
            }
        }
        let Some(rule) = landed else { return Ok(()) };
        self.max_cshare_rules = self.max_cshare_rules.max(self.ocs.cshare_rules(rule.switch) as u32);
        match owner {
            Some(i) => self.reroute(i)?,
            None => {
                let dst = rule.matcher.dst_subnet;
                let candidates: Vec<u32> = self
                    .active
                    .iter()
                    .copied()
                    .filter(|&i| {
                        let f = &self.flows[i as usize];
                        f.tagged && f.dst_switch() == dst && f.route[..f.route.len() - 1].contains(&rule.switch)
                    })
                    .collect();
                for i in candidates {
                    self.reroute(i)?;
                }
            }
        }
        Ok(())
    }

    fn observe(&mut self) {
        self.sync_all();
        let window = (self.now - self.last_tick).max(1) as f64;
        let flows = &self.flows;
        self.demand = observe_demand(self.active.iter().map(|&i| {
            let f = &flows[i as usize];
            FlowObservation {
                tagged: f.tagged,
                active: f.active,
                route: &f.route,
                mean_rate: (f.bytes_sent - f.window_bytes) * 8e6 / window,
            }
        }));
        for &i in &self.active {
            let f = &mut self.flows[i as usize];
            f.window_bytes = f.bytes_sent;
        }
        self.last_tick = self.now;
        if self.cfg.record_demand {
            for (&(s, d), e) in &self.demand {
                self.demand_log.push(DemandRow {
                    t_us: self.now,
                    transit_switch: s.0,
                    dst_switch: d.0,
                    rate_bps: e.rate,
                    flows: e.flows,
                });
            }
        }
    }

    fn decide(&mut self) -> Result<(), SimError> {
        let Some(mode) = self.cfg.circuits.mode() else {
            return Ok(());
        };
        let current: Vec<_> = self.ocs.circuits().cloned().collect();
        let plan = schedule_circuits(&self.demand, &current, &self.cfg.scheduler(mode), self.topo);
        if plan.is_empty() {
            return Ok(());
        }
        for e in self.ocs.apply_plan(&plan, self.now)? {
            match e {
                OcsEvent::Down { at, circuit } => self.queue.push(at, EventKind::CircuitDown, Payload::Circuit(circuit)),
                OcsEvent::Up { at, circuit } => self.queue.push(at, EventKind::CircuitUp, Payload::Circuit(circuit)),
            }
        }
        Ok(())
    }

    /// Schedules circuits directly, bypassing the observer and scheduler.
    pub fn force_plan(&mut self, plan: &crate::switch::CircuitPlan) -> Result<(), SimError> {
        for e in self.ocs.apply_plan(plan, self.now)? {
            match e {
                OcsEvent::Down { at, circuit } => self.queue.push(at, EventKind::CircuitDown, Payload::Circuit(circuit)),
                OcsEvent::Up { at, circuit } => self.queue.push(at, EventKind::CircuitUp, Payload::Circuit(circuit)),
            }
        }
        Ok(())
    }

    pub fn into_report(self) -> MetricsReport {
        let records: Vec<FlowRecord> = self
            .flows
            .iter()
            .map(|f| {
                let end = f.completion_time.unwrap_or(self.now);
                let fct = end.saturating_sub(f.spec.start).max(1);
                FlowRecord {
                    id: f.spec.id,
                    coflow: f.spec.coflow,
                    class: f.spec.class,
                    size: f.spec.size,
                    delivered: f.bytes_sent.round() as u64,
                    start_us: f.spec.start,
                    end_us: end,
                    fct_us: fct,
                    mean_rate_bps: f.spec.size as f64 * 8e6 / fct as f64,
                    tagged: f.tagged,
                    tag_time_us: f.tag_time,
                    first_circuit_us: f.first_circuit_time,
                    circuits_used: f.circuits_used.clone(),
                    bytes_on_circuit: f.bytes_on_circuit,
                }
            })
            .collect();
        let total_bytes = records.iter().map(|r| r.size).sum();
        let delivered_bytes = records.iter().map(|r| r.delivered).sum();
        let switches = self.topo.switch_count();
        MetricsReport {
            info: RunInfo {
                topology: String::new(),
                circuit_mode: self.cfg.circuits.as_str().into(),
                rule_mode: self.cfg.rules.as_str().into(),
                seed: self.cfg.seed,
            },
            coflows: coflow_records(&records),
            flows: records,
            footprint: footprint_buckets(self.ocs.rule_log(), switches, self.now),
            circuits: self.ocs.records().cloned().collect(),
            reconfigurations: self.ocs.reconfigurations(),
            overflows: self.ocs.overflows(),
            events: self.events,
            event_log_sha256: hex::encode(self.hasher.finalize()),
            sim_end_us: self.now,
            total_bytes,
            delivered_bytes,
            switches,
            max_cshare_rules: self.max_cshare_rules,
            max_up_circuits: self.max_up_circuits,
            peak_committed: self.ocs.peak_committed(),
            config: self.cfg,
        }
    }
}

/// Runs `trace` on `topo` to completion.
pub fn run_simulation(topo: &Topology, trace: &Trace, config: SimConfig) -> Result<MetricsReport, SimError> {
    Simulation::new(topo, trace, config)?.run()
}
