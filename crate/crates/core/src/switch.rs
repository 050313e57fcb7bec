//! Rerouting rules, OCS circuit state and rule-install timing.
//!
//! Ingress ports are stamped with a 2-bit metadata value at switch start-up
//! (upper tier `0b01`, lower tier `0b11`). A circuit rule matches the elephant
//! DSCP code point, the destination subnet and a masked metadata value: a
//! private circuit matches `0b1*` (lower tier only), a shared circuit matches
//! `0b*1` (both tiers). One such rule per circuit covers every elephant; the
//! per-flow baseline instead installs an exact-match rule per rerouted flow.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{SwitchId, Topology};
use crate::traffic::FlowId;

pub const UPPER_TIER_INGRESS: u8 = 0b01;
pub const LOWER_TIER_INGRESS: u8 = 0b11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitMode {
    Private,
    Shared,
}

impl CircuitMode {
    /// `(value, mask)` of the metadata match.
    pub fn metadata_match(self) -> (u8, u8) {
        match self {
            CircuitMode::Private => (0b10, 0b10),
            CircuitMode::Shared => (0b01, 0b01),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CircuitMode::Private => "private",
            CircuitMode::Shared => "shared",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMode {
    Cshare,
    PerFlow,
}

impl RuleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleMode::Cshare => "cshare",
            RuleMode::PerFlow => "per_flow",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngressClass {
    Upper,
    Lower,
}

impl IngressClass {
    pub fn metadata(self) -> u8 {
        match self {
            IngressClass::Upper => UPPER_TIER_INGRESS,
            IngressClass::Lower => LOWER_TIER_INGRESS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitState {
    Configuring,
    Up,
    TearingDown,
}

/// Unique id of one circuit instance (a re-established pair gets a new id).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircuitId(pub u64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub id: CircuitId,
    pub src: SwitchId,
    pub dst: SwitchId,
    pub mode: CircuitMode,
    pub state: CircuitState,
    pub requested_at: u64,
    pub up_since: Option<u64>,
}

impl Circuit {
    pub fn holds_ports(&self) -> bool {
        self.state != CircuitState::TearingDown
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleOrigin {
    Cshare,
    PerFlow(FlowId),
}

impl fmt::Display for RuleOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleOrigin::Cshare => f.write_str("cshare"),
            RuleOrigin::PerFlow(id) => write!(f, "per_flow:{}", id.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    /// `None` is a wildcard.
    pub dscp: Option<u8>,
    pub dst_subnet: SwitchId,
    pub meta_value: u8,
    pub meta_mask: u8,
    /// Exact flow match for per-flow rules.
    pub flow: Option<FlowId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OFRule {
    pub switch: SwitchId,
    pub matcher: RuleMatch,
    /// Output to the circuit toward this switch.
    pub out_circuit: SwitchId,
    pub circuit: CircuitId,
    pub installed_at: Option<u64>,
    pub origin: RuleOrigin,
}

/// Packet header fields a rule can look at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub dscp: u8,
    pub dst_switch: SwitchId,
    pub ingress: IngressClass,
    pub flow: FlowId,
}

/// Rules needed to steer elephants onto `circuit`.
pub fn compile_rules(circuit: &Circuit, rule_mode: RuleMode, dscp_e: u8, matched_flows: &[FlowId]) -> Vec<OFRule> {
    let (meta_value, meta_mask) = circuit.mode.metadata_match();
    let rule = |flow: Option<FlowId>| OFRule {
        switch: circuit.src,
        matcher: RuleMatch {
            dscp: Some(dscp_e),
            dst_subnet: circuit.dst,
            meta_value,
            meta_mask,
            flow,
        },
        out_circuit: circuit.dst,
        circuit: circuit.id,
        installed_at: None,
        origin: match flow {
            None => RuleOrigin::Cshare,
            Some(f) => RuleOrigin::PerFlow(f),
        },
    };
    match rule_mode {
        RuleMode::Cshare => vec![rule(None)],
        RuleMode::PerFlow => matched_flows.iter().map(|&f| rule(Some(f))).collect(),
    }
}

impl RuleMatch {
    pub fn matches(&self, pkt: &Packet) -> bool {
        let meta = pkt.ingress.metadata();
        self.dscp.is_none_or(|d| d == pkt.dscp)
            && self.dst_subnet == pkt.dst_switch
            && meta & self.meta_mask == self.meta_value
            && self.flow.is_none_or(|f| f == pkt.flow)
    }
}

/// First-match lookup. `None` means fall through to default forwarding.
pub fn match_packet<'r>(rules: impl IntoIterator<Item = &'r OFRule>, pkt: &Packet) -> Option<&'r OFRule> {
    rules.into_iter().find(|r| r.matcher.matches(pkt))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchTiming {
    pub reconfig_delay_us: u64,
    pub outbound_latency_us: u64,
    /// Rule installs per second per switch.
    pub setup_rate: f64,
    pub table_capacity: u32,
}

impl Default for SwitchTiming {
    fn default() -> Self {
        Self {
            reconfig_delay_us: 20_000,
            outbound_latency_us: 10_000,
            setup_rate: 40.0,
            table_capacity: 1700,
        }
    }
}

impl SwitchTiming {
    pub fn setup_interval_us(&self) -> u64 {
        (1e6 / self.setup_rate).round().max(1.0) as u64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CircuitPlan {
    pub add: Vec<(SwitchId, SwitchId)>,
    pub remove: Vec<(SwitchId, SwitchId)>,
    pub mode: Option<CircuitMode>,
}

impl CircuitPlan {
    pub fn is_empty(&self) -> bool {
        self.add.is_empty() && self.remove.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan adds and removes {0}->{1}")]
    AddRemoveOverlap(SwitchId, SwitchId),
    #[error("plan over-subscribes OCS ports of {0}")]
    PortConflict(SwitchId),
    #[error("circuit {0}->{1} is not a valid switch pair")]
    BadPair(SwitchId, SwitchId),
    #[error("plan has no circuit mode")]
    NoMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOp {
    Install,
    Delete,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleLogEntry {
    pub t_us: u64,
    pub switch: SwitchId,
    pub op: RuleOp,
    pub origin: RuleOrigin,
    pub dscp: Option<u8>,
    pub dst_switch: SwitchId,
    pub meta_value: u8,
    pub meta_mask: u8,
}

impl RuleLogEntry {
    fn new(t_us: u64, op: RuleOp, rule: &OFRule) -> Self {
        Self {
            t_us,
            switch: rule.switch,
            op,
            origin: rule.origin,
            dscp: rule.matcher.dscp,
            dst_switch: rule.matcher.dst_subnet,
            meta_value: rule.matcher.meta_value,
            meta_mask: rule.matcher.meta_mask,
        }
    }

    pub fn csv_header() -> &'static str {
        "t_us,switch,op,origin,dscp,dst_switch,meta_value,meta_mask"
    }

    pub fn csv_line(&self) -> String {
        let op = match self.op {
            RuleOp::Install => "install",
            RuleOp::Delete => "delete",
            RuleOp::Reject => "reject",
        };
        let dscp = self.dscp.map(|d| d.to_string()).unwrap_or_else(|| "*".into());
        format!(
            "{},{},{},{},{},{},{:#04b},{:#04b}",
            self.t_us, self.switch.0, op, self.origin, dscp, self.dst_switch.0, self.meta_value, self.meta_mask
        )
    }
}

/// Scheduled consequence of a circuit plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OcsEvent {
    Down { at: u64, circuit: CircuitId },
    Up { at: u64, circuit: CircuitId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PendingId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstallRequest {
    Queued { id: PendingId, effective_at: u64 },
    /// Table would exceed capacity; the flow stays on its packet path.
    Overflow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitRecord {
    pub id: CircuitId,
    pub src: SwitchId,
    pub dst: SwitchId,
    pub mode: Option<CircuitMode>,
    pub requested_us: u64,
    pub up_us: Option<u64>,
    pub down_us: Option<u64>,
    pub bytes_carried: f64,
}

/// Circuit set, per-switch rule tables and the install pipeline.
#[derive(Debug)]
pub struct OcsState {
    timing: SwitchTiming,
    ports: Vec<u32>,
    circuits: BTreeMap<CircuitId, Circuit>,
    next_circuit: u64,
    tables: Vec<Vec<OFRule>>,
    inflight: Vec<u32>,
    peak_committed: u32,
    next_slot: Vec<u64>,
    pending: BTreeMap<PendingId, OFRule>,
    next_pending: u64,
    log: Vec<RuleLogEntry>,
    overflows: u64,
    reconfigurations: u64,
    records: BTreeMap<CircuitId, CircuitRecord>,
}

impl OcsState {
    pub fn new(topo: &Topology, timing: SwitchTiming) -> Self {
        let n = topo.switch_count();
        Self {
            timing,
            ports: topo.switches().map(|s| topo.ocs_ports(s)).collect(),
            circuits: BTreeMap::new(),
            next_circuit: 0,
            tables: vec![Vec::new(); n],
            inflight: vec![0; n],
            peak_committed: 0,
            next_slot: vec![0; n],
            pending: BTreeMap::new(),
            next_pending: 0,
            log: Vec::new(),
            overflows: 0,
            reconfigurations: 0,
            records: BTreeMap::new(),
        }
    }

    pub fn timing(&self) -> &SwitchTiming {
        &self.timing
    }

    /// Circuits holding ports (configuring or up).
    pub fn circuits(&self) -> impl Iterator<Item = &Circuit> {
        self.circuits.values().filter(|c| c.holds_ports())
    }

    pub fn circuit(&self, id: CircuitId) -> Option<&Circuit> {
        self.circuits.get(&id)
    }

    pub fn is_up(&self, id: CircuitId) -> bool {
        self.circuits.get(&id).is_some_and(|c| c.state == CircuitState::Up)
    }

    /// The up circuit `src -> dst`, if any.
    pub fn up_circuit(&self, src: SwitchId, dst: SwitchId) -> Option<&Circuit> {
        self.circuits
            .values()
            .find(|c| c.src == src && c.dst == dst && c.state == CircuitState::Up)
    }

    pub fn table(&self, s: SwitchId) -> &[OFRule] {
        &self.tables[s.index()]
    }

    pub fn rule_log(&self) -> &[RuleLogEntry] {
        &self.log
    }

    pub fn overflows(&self) -> u64 {
        self.overflows
    }

    pub fn reconfigurations(&self) -> u64 {
        self.reconfigurations
    }

    pub fn records(&self) -> impl Iterator<Item = &CircuitRecord> {
        self.records.values()
    }

    pub fn add_circuit_bytes(&mut self, id: CircuitId, bytes: f64) {
        if let Some(r) = self.records.get_mut(&id) {
            r.bytes_carried += bytes;
        }
    }

    /// Validates and applies a plan: removed and colliding circuits go down
    /// now, added circuits come up after the reconfiguration delay.
    pub fn apply_plan(&mut self, plan: &CircuitPlan, now: u64) -> Result<Vec<OcsEvent>, PlanError> {
        let mode = plan.mode.ok_or(PlanError::NoMode)?;
        let n = self.ports.len();
        let mut tx = vec![0u32; n];
        let mut rx = vec![0u32; n];
        for &(s, d) in &plan.add {
            if s == d || s.index() >= n || d.index() >= n {
                return Err(PlanError::BadPair(s, d));
            }
            if plan.remove.contains(&(s, d)) {
                return Err(PlanError::AddRemoveOverlap(s, d));
            }
            tx[s.index()] += 1;
            rx[d.index()] += 1;
            if tx[s.index()] > self.ports[s.index()] {
                return Err(PlanError::PortConflict(s));
            }
            if rx[d.index()] > self.ports[d.index()] {
                return Err(PlanError::PortConflict(d));
            }
        }

        let mut events = Vec::new();
        let mut down: Vec<CircuitId> = self
            .circuits()
            .filter(|c| plan.remove.contains(&(c.src, c.dst)))
            .map(|c| c.id)
            .collect();
        // Collisions: surviving circuits whose ports the additions need.
        let mut survivors: Vec<&Circuit> = self.circuits().filter(|c| !down.contains(&c.id)).collect();
        survivors.retain(|c| !plan.add.contains(&(c.src, c.dst)));
        let mut used_tx = tx.clone();
        let mut used_rx = rx.clone();
        let mut colliding = Vec::new();
        for c in &survivors {
            let (s, d) = (c.src.index(), c.dst.index());
            if used_tx[s] + 1 > self.ports[s] || used_rx[d] + 1 > self.ports[d] {
                colliding.push(c.id);
            } else {
                used_tx[s] += 1;
                used_rx[d] += 1;
            }
        }
        down.extend(colliding);
        for id in down {
            if let Some(c) = self.circuits.get_mut(&id) {
                c.state = CircuitState::TearingDown;
                events.push(OcsEvent::Down { at: now, circuit: id });
            }
        }
        for &(s, d) in &plan.add {
            if self.circuits().any(|c| c.src == s && c.dst == d) {
                continue;
            }
            let id = CircuitId(self.next_circuit);
            self.next_circuit += 1;
            self.circuits.insert(
                id,
                Circuit {
                    id,
                    src: s,
                    dst: d,
                    mode,
                    state: CircuitState::Configuring,
                    requested_at: now,
                    up_since: None,
                },
            );
            self.records.insert(
                id,
                CircuitRecord {
                    id,
                    src: s,
                    dst: d,
                    mode: Some(mode),
                    requested_us: now,
                    up_us: None,
                    down_us: None,
                    bytes_carried: 0.0,
                },
            );
            self.reconfigurations += 1;
            events.push(OcsEvent::Up {
                at: now + self.timing.reconfig_delay_us,
                circuit: id,
            });
        }
        Ok(events)
    }

    pub fn circuit_up(&mut self, id: CircuitId, now: u64) -> Option<&Circuit> {
        let c = self.circuits.get_mut(&id)?;
        if c.state != CircuitState::Configuring {
            return None;
        }
        c.state = CircuitState::Up;
        c.up_since = Some(now);
        if let Some(r) = self.records.get_mut(&id) {
            r.up_us = Some(now);
        }
        Some(c)
    }

    /// Tears a circuit down and deletes every installed rule pointing at it.
    pub fn circuit_down(&mut self, id: CircuitId, now: u64) -> Option<Circuit> {
        let c = self.circuits.remove(&id)?;
        if let Some(r) = self.records.get_mut(&id) {
            r.down_us = Some(now);
        }
        let table = &mut self.tables[c.src.index()];
        let log = &mut self.log;
        table.retain(|r| {
            if r.circuit == id {
                log.push(RuleLogEntry::new(now, RuleOp::Delete, r));
                false
            } else {
                true
            }
        });
        Some(c)
    }

    /// Queues a rule behind the switch's setup-rate limiter, or rejects it when
    /// installed plus in-flight rules already fill the table.
    pub fn request_install(&mut self, rule: OFRule, now: u64) -> InstallRequest {
        let s = rule.switch.index();
        let committed = self.tables[s].len() as u64 + self.inflight[s] as u64;
        if committed >= self.timing.table_capacity as u64 {
            self.overflows += 1;
            self.log.push(RuleLogEntry::new(now, RuleOp::Reject, &rule));
            return InstallRequest::Overflow;
        }
        let slot = now.max(self.next_slot[s]);
        self.next_slot[s] = slot + self.timing.setup_interval_us();
        self.inflight[s] += 1;
        self.peak_committed = self.peak_committed.max(committed as u32 + 1);
        let id = PendingId(self.next_pending);
        self.next_pending += 1;
        self.pending.insert(id, rule);
        InstallRequest::Queued {
            id,
            effective_at: slot + self.timing.outbound_latency_us,
        }
    }

    pub fn pending(&self, id: PendingId) -> Option<&OFRule> {
        self.pending.get(&id)
    }

    /// A queued rule reaches the data plane. Rules whose circuit is gone, or
    /// that `keep` refuses, are deleted at the same instant.
    pub fn land(&mut self, id: PendingId, now: u64, keep: bool) -> Option<OFRule> {
        let mut rule = self.pending.remove(&id)?;
        let s = rule.switch.index();
        self.inflight[s] -= 1;
        rule.installed_at = Some(now);
        self.log.push(RuleLogEntry::new(now, RuleOp::Install, &rule));
        if keep && self.is_up(rule.circuit) {
            self.tables[s].push(rule);
            Some(rule)
        } else {
            self.log.push(RuleLogEntry::new(now, RuleOp::Delete, &rule));
            None
        }
    }

    /// Deletes the per-flow rule of `flow` wherever it is installed.
    pub fn delete_flow_rules(&mut self, flow: FlowId, switch: SwitchId, now: u64) -> bool {
        let table = &mut self.tables[switch.index()];
        let before = table.len();
        let log = &mut self.log;
        table.retain(|r| {
            if r.origin == RuleOrigin::PerFlow(flow) {
                log.push(RuleLogEntry::new(now, RuleOp::Delete, r));
                false
            } else {
                true
            }
        });
        table.len() != before
    }

    pub fn cshare_rules(&self, s: SwitchId) -> usize {
        self.tables[s.index()].iter().filter(|r| r.origin == RuleOrigin::Cshare).count()
    }

    /// Up circuits sourced at `s` whose circuit rule is installed.
    pub fn up_circuits_from(&self, s: SwitchId) -> usize {
        self.circuits
            .values()
            .filter(|c| c.src == s && c.state == CircuitState::Up)
            .count()
    }

    /// Checks the crossbar constraint over port-holding circuits.
    pub fn is_valid_matching(&self) -> bool {
        let n = self.ports.len();
        let mut tx = vec![0u32; n];
        let mut rx = vec![0u32; n];
        for c in self.circuits() {
            tx[c.src.index()] += 1;
            rx[c.dst.index()] += 1;
        }
        (0..n).all(|i| tx[i] <= self.ports[i] && rx[i] <= self.ports[i])
    }

    /// Largest installed-plus-queued rule count seen at any one switch.
    pub fn peak_committed(&self) -> u32 {
        self.peak_committed
    }

    pub fn rule_count(&self, s: SwitchId) -> usize {
        self.tables[s.index()].len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub per_switch_peak: Vec<u32>,
    pub per_switch_installs: Vec<u32>,
}

impl Footprint {
    pub fn total_installs(&self) -> u64 {
        self.per_switch_installs.iter().map(|&x| x as u64).sum()
    }

    pub fn max_peak(&self) -> u32 {
        self.per_switch_peak.iter().copied().max().unwrap_or(0)
    }
}

/// Per-switch peak concurrent rules and installs within `[t0, t1)`, replayed from the rule log.
pub fn footprint(log: &[RuleLogEntry], switches: usize, t0: u64, t1: u64) -> Footprint {
    let mut live = vec![0i64; switches];
    let mut fp = Footprint {
        per_switch_peak: vec![0; switches],
        per_switch_installs: vec![0; switches],
    };
    let mut started = false;
    for e in log {
        if e.t_us >= t1 {
            break;
        }
        if e.t_us >= t0 && !started {
            started = true;
            for (peak, &n) in fp.per_switch_peak.iter_mut().zip(&live) {
                *peak = n as u32;
            }
        }
        let s = e.switch.index();
        match e.op {
            RuleOp::Install => live[s] += 1,
            RuleOp::Delete => live[s] -= 1,
            RuleOp::Reject => {}
        }
        if e.t_us >= t0 {
            if e.op == RuleOp::Install {
                fp.per_switch_installs[s] += 1;
            }
            fp.per_switch_peak[s] = fp.per_switch_peak[s].max(live[s] as u32);
        }
    }
    if !started {
        for (peak, &n) in fp.per_switch_peak.iter_mut().zip(&live) {
            *peak = n as u32;
        }
    }
    fp
}
