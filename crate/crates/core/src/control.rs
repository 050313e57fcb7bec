//! Elephant detection, demand observation and circuit scheduling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::FlowState;
use crate::switch::{Circuit, CircuitMode, CircuitPlan, CircuitState};
use crate::topology::{SwitchId, Topology};
use crate::traffic::KB;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// bytes; `None` disables the byte threshold
    pub byte_threshold: Option<u64>,
    /// microseconds since flow start
    pub duration_threshold: Option<u64>,
    pub detection_latency_us: u64,
    /// When false no flow is ever tagged.
    pub enabled: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            byte_threshold: Some(128 * KB),
            duration_threshold: None,
            detection_latency_us: 1_000,
            enabled: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.byte_threshold == Some(0) {
            return Err("byte_threshold must be positive".into());
        }
        if self.duration_threshold == Some(0) {
            return Err("duration_threshold must be positive".into());
        }
        if self.enabled && self.byte_threshold.is_none() && self.duration_threshold.is_none() {
            return Err("detector needs a byte or duration threshold".into());
        }
        Ok(())
    }
}

fn div_ceil_f(x: f64) -> u64 {
    let c = x.ceil();
    if c < 0.0 {
        0
    } else {
        c as u64
    }
}

/// Earliest time the detector fires for `flow` under its current rate, or
/// `None` if the flow completes before either threshold is crossed.
pub fn detect_elephant(flow: &FlowState, cfg: &DetectorConfig, now: u64) -> Option<u64> {
    if !cfg.enabled || flow.tagged {
        return None;
    }
    let size = flow.spec.size as f64;
    let remaining = size - flow.bytes_sent;
    let completion = if flow.rate > 0.0 {
        Some(now as f64 + remaining * 8e6 / flow.rate)
    } else {
        None
    };
    let by_bytes = cfg.byte_threshold.and_then(|th| {
        let th = th as f64;
        if size <= th {
            None
        } else if flow.bytes_sent >= th {
            Some(now)
        } else if flow.rate > 0.0 {
            Some(now + div_ceil_f((th - flow.bytes_sent) * 8e6 / flow.rate))
        } else {
            None
        }
    });
    let by_age = cfg.duration_threshold.and_then(|d| {
        let t = (flow.spec.start + d).max(now);
        match completion {
            Some(c) if (t as f64) >= c => None,
            _ => Some(t),
        }
    });
    let crossing = match (by_bytes, by_age) {
        (Some(a), Some(b)) => a.min(b),
        (a, b) => a.or(b)?,
    };
    Some(crossing + cfg.detection_latency_us)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandEntry {
    /// bits/s summed over tagged flows crossing the transit switch
    pub rate: f64,
    pub flows: u32,
    /// Share of `rate` from flows whose source switch is the transit switch.
    pub origin_rate: f64,
    pub origin_flows: u32,
}

pub type DemandMatrix = BTreeMap<(SwitchId, SwitchId), DemandEntry>;

/// What the observer sees of one flow.
#[derive(Clone, Copy, Debug)]
pub struct FlowObservation<'a> {
    pub tagged: bool,
    pub active: bool,
    /// Default switch route, source first.
    pub route: &'a [SwitchId],
    /// bits/s over the window
    pub mean_rate: f64,
}

/// Demand of tagged, active flows per (transit switch, destination switch).
pub fn observe_demand<'a>(flows: impl IntoIterator<Item = FlowObservation<'a>>) -> DemandMatrix {
    let mut m = DemandMatrix::new();
    for f in flows {
        if !f.tagged || !f.active || f.route.len() < 2 {
            continue;
        }
        let dst = *f.route.last().unwrap();
        for (i, &s) in f.route[..f.route.len() - 1].iter().enumerate() {
            let e = m.entry((s, dst)).or_default();
            e.rate += f.mean_rate;
            e.flows += 1;
            if i == 0 {
                e.origin_rate += f.mean_rate;
                e.origin_flows += 1;
            }
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// bits/s
    pub th_configure: f64,
    /// bits/s
    pub th_remove: f64,
    pub decision_period_us: u64,
    pub mode: CircuitMode,
    /// Rank candidates by demand times packet hops bypassed instead of demand alone.
    #[serde(default)]
    pub hop_weighted: bool,
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.th_remove && self.th_remove < self.th_configure) {
            return Err(format!(
                "need 0 <= th_remove < th_configure, got {} and {}",
                self.th_remove, self.th_configure
            ));
        }
        if self.decision_period_us == 0 {
            return Err("decision period must be positive".into());
        }
        Ok(())
    }
}

/// Demand a circuit `(s, d)` could serve in `mode`.
pub fn servable(entry: &DemandEntry, mode: CircuitMode) -> f64 {
    match mode {
        CircuitMode::Private => entry.origin_rate,
        CircuitMode::Shared => entry.rate,
    }
}

/// Greedy matching with hysteresis: drop weak circuits, then add the heaviest
/// pairs whose OCS ports are free.
pub fn schedule_circuits(
    demand: &DemandMatrix,
    current: &[Circuit],
    cfg: &SchedulerConfig,
    topo: &Topology,
) -> CircuitPlan {
    let n = topo.switch_count();
    let weight = |s: SwitchId, d: SwitchId| demand.get(&(s, d)).map_or(0.0, |e| servable(e, cfg.mode));
    let mut tx = vec![0u32; n];
    let mut rx = vec![0u32; n];
    let mut plan = CircuitPlan {
        mode: Some(cfg.mode),
        ..Default::default()
    };
    for c in current.iter().filter(|c| c.holds_ports()) {
        if c.state == CircuitState::Up && weight(c.src, c.dst) < cfg.th_remove {
            plan.remove.push((c.src, c.dst));
        } else {
            tx[c.src.index()] += 1;
            rx[c.dst.index()] += 1;
        }
    }
    let mut candidates: Vec<((SwitchId, SwitchId), f64)> = demand
        .iter()
        .map(|(&k, e)| (k, servable(e, cfg.mode)))
        .filter(|&((s, d), w)| s != d && w >= cfg.th_configure)
        .map(|((s, d), w)| {
            let rank = if cfg.hop_weighted { w * topo.hops(s, d) as f64 } else { w };
            ((s, d), rank)
        })
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for ((s, d), _) in candidates {
        if current.iter().any(|c| c.holds_ports() && c.src == s && c.dst == d) {
            continue;
        }
        if tx[s.index()] < topo.ocs_ports(s) && rx[d.index()] < topo.ocs_ports(d) {
            tx[s.index()] += 1;
            rx[d.index()] += 1;
            plan.add.push((s, d));
        }
    }
    plan
}

/// Total servable demand of a set of pairs.
pub fn plan_weight(demand: &DemandMatrix, pairs: &[(SwitchId, SwitchId)], mode: CircuitMode) -> f64 {
    pairs
        .iter()
        .map(|p| demand.get(p).map_or(0.0, |e| servable(e, mode)))
        .sum()
}
