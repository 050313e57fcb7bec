//! Experiment configuration files and built-in presets.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::DetectorConfig;
use crate::engine::{CircuitSetting, SimConfig};
use crate::switch::{RuleMode, SwitchTiming};
use crate::topology::{LinkRates, Topology, TopologyError, TopologyKind};
use crate::traffic::{
    generate_uniform_trace, ingest_flow_records, read_trace_csv, CountBasis, IngestOptions, Trace, TraceError,
    TraceParams,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    /// Ring size.
    pub switches: u32,
    /// FBFly arity and dimension.
    pub k: u32,
    pub n: u32,
    pub hosts_per_switch: u32,
    pub packet_rate_bps: f64,
    pub circuit_rate_bps: f64,
    /// Defaults to the packet rate.
    pub host_rate_bps: Option<f64>,
    pub ocs_ports: u32,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            kind: TopologyKind::Ring,
            switches: 10,
            k: 3,
            n: 3,
            hosts_per_switch: 40,
            packet_rate_bps: 10e9,
            circuit_rate_bps: 100e9,
            host_rate_bps: None,
            ocs_ports: 1,
        }
    }
}

impl TopologySection {
    pub fn build(&self) -> Result<Topology, TopologyError> {
        let mut rates = LinkRates::new(self.packet_rate_bps, self.circuit_rate_bps);
        if let Some(h) = self.host_rate_bps {
            rates = rates.with_host(h);
        }
        let t = match self.kind {
            TopologyKind::Ring => Topology::ring(self.switches, self.hosts_per_switch, rates)?,
            TopologyKind::Fbfly => Topology::fbfly(self.k, self.n, self.hosts_per_switch, rates)?,
        };
        t.with_ocs_ports(self.ocs_ports)
    }

    /// Short label such as `ring10` or `fbfly3-3`.
    pub fn label(&self) -> String {
        match self.kind {
            TopologyKind::Ring => format!("ring{}", self.switches),
            TopologyKind::Fbfly => format!("fbfly{}-{}", self.k, self.n),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficSource {
    #[default]
    Generate,
    /// Trace CSV in the native schema.
    Trace,
    /// Address-keyed flow records to consolidate.
    Records,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub source: TrafficSource,
    pub path: Option<PathBuf>,
    pub params: TraceParams,
    pub ingest: IngestOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub detector: DetectorConfig,
    pub observer_period_us: u64,
    /// Establish threshold as a fraction of the packet-link rate.
    pub th_configure: f64,
    /// Teardown threshold as a fraction of the packet-link rate.
    pub th_remove: f64,
    /// Defaults to the observer period.
    pub decision_period_us: Option<u64>,
    /// Rank circuit candidates by demand times bypassed hops.
    pub hop_weighted: bool,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            observer_period_us: 100_000,
            th_configure: 0.3,
            th_remove: 0.1,
            decision_period_us: None,
            hop_weighted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwitchSection {
    pub reconfig_delay_us: u64,
    pub outbound_latency_us: u64,
    pub setup_rate: f64,
    pub table_capacity: u32,
    pub dscp_e: u8,
}

impl Default for SwitchSection {
    fn default() -> Self {
        let t = SwitchTiming::default();
        Self {
            reconfig_delay_us: t.reconfig_delay_us,
            outbound_latency_us: t.outbound_latency_us,
            setup_rate: t.setup_rate,
            table_capacity: t.table_capacity,
            dscp_e: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesSection {
    pub circuits: Vec<CircuitSetting>,
    pub rules: Vec<RuleMode>,
}

impl Default for ModesSection {
    fn default() -> Self {
        Self {
            circuits: vec![CircuitSetting::Private, CircuitSetting::Shared],
            rules: vec![RuleMode::Cshare],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub max_sim_time_us: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            out_dir: PathBuf::from("results"),
            max_sim_time_us: 3_600_000_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub topology: TopologySection,
    pub traffic: TrafficSection,
    pub control: ControlSection,
    pub switch: SwitchSection,
    pub modes: ModesSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: &FsPath) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative trace paths are resolved against the config file.
        if let (Some(p), Some(dir)) = (&cfg.traffic.path, path.parent()) {
            if p.is_relative() {
                cfg.traffic.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let t = &self.topology;
        if !(t.packet_rate_bps > 0.0 && t.circuit_rate_bps > 0.0) || t.host_rate_bps.is_some_and(|h| h <= 0.0) {
            return bad("link rates must be positive");
        }
        if t.ocs_ports == 0 {
            return bad("ocs_ports must be at least 1");
        }
        if self.traffic.source != TrafficSource::Generate && self.traffic.path.is_none() {
            return bad("traffic.path is required unless source = \"generate\"");
        }
        if self.traffic.source == TrafficSource::Generate {
            self.traffic.params.validate()?;
        }
        if self.modes.circuits.is_empty() || self.modes.rules.is_empty() {
            return bad("modes.circuits and modes.rules must be non-empty");
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds must be non-empty");
        }
        self.sim_config(CircuitSetting::Shared, RuleMode::Cshare, 0)
            .validate()
            .map_err(ConfigError::Invalid)
    }

    pub fn build_topology(&self) -> Result<Topology, ConfigError> {
        Ok(self.topology.build()?)
    }

    /// Trace for `seed`; file-backed traces ignore the seed.
    pub fn trace(&self, topo: &Topology, seed: u64) -> Result<Trace, ConfigError> {
        let open = |p: &PathBuf| {
            fs::File::open(p).map_err(|source| ConfigError::Read {
                path: p.clone(),
                source,
            })
        };
        Ok(match self.traffic.source {
            TrafficSource::Generate => generate_uniform_trace(topo, &self.traffic.params, seed)?,
            TrafficSource::Trace => read_trace_csv(open(self.traffic.path.as_ref().unwrap())?)?,
            TrafficSource::Records => {
                ingest_flow_records(open(self.traffic.path.as_ref().unwrap())?, topo, &self.traffic.ingest)?.0
            }
        })
    }

    pub fn sim_config(&self, circuits: CircuitSetting, rules: RuleMode, seed: u64) -> SimConfig {
        let c = &self.control;
        let s = &self.switch;
        let rate = self.topology.packet_rate_bps;
        SimConfig {
            detector: c.detector,
            observer_period_us: c.observer_period_us,
            th_configure_bps: c.th_configure * rate,
            th_remove_bps: c.th_remove * rate,
            decision_period_us: c.decision_period_us.unwrap_or(c.observer_period_us),
            hop_weighted: c.hop_weighted,
            circuits,
            rules,
            timing: SwitchTiming {
                reconfig_delay_us: s.reconfig_delay_us,
                outbound_latency_us: s.outbound_latency_us,
                setup_rate: s.setup_rate,
                table_capacity: s.table_capacity,
            },
            dscp_e: s.dscp_e,
            seed,
            max_sim_time_us: self.run.max_sim_time_us,
            ..SimConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
    }
}

pub const PRESETS: &[&str] = &[
    "ring10-sim",
    "ring12-sim",
    "ring14-sim",
    "ring16-sim",
    "fbfly333-sim",
    "fbfly443-sim",
    "fbfly553-sim",
    "fbfly663-sim",
    "fbfly333-emu-scale",
    "ring10-emu-scale",
    "ring10-intensive",
    "uniform-coflow",
    "uniform-intensive",
];

/// Transfers per switch in the simulation-scale presets.
pub const SIM_TRANSFERS_PER_SWITCH: usize = 300;

/// Traffic used by the simulation-scale presets: mice coflows and standalone
/// elephants, counted per transfer.
pub fn uniform_coflow_params(switches: usize) -> TraceParams {
    TraceParams {
        n_flows: SIM_TRANSFERS_PER_SWITCH * switches,
        count_basis: CountBasis::Transfers,
        load: 0.5,
        ..TraceParams::default()
    }
}

/// Per-flow counted trace: many short elephants.
pub fn uniform_intensive_params(n_flows: usize) -> TraceParams {
    TraceParams {
        n_flows,
        count_basis: CountBasis::Flows,
        load: 0.6,
        ..TraceParams::default()
    }
}

fn sim_scale(kind: TopologyKind, switches: u32, k: u32, n: u32) -> ExperimentConfig {
    let topology = TopologySection {
        kind,
        switches,
        k,
        n,
        ..TopologySection::default()
    };
    let count = match kind {
        TopologyKind::Ring => switches as usize,
        TopologyKind::Fbfly => (k as usize).pow(n - 1),
    };
    ExperimentConfig {
        name: String::new(),
        topology,
        traffic: TrafficSection {
            params: uniform_coflow_params(count),
            ..Default::default()
        },
        control: ControlSection {
            th_configure: 0.2,
            th_remove: 0.1,
            hop_weighted: true,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn emu_scale(kind: TopologyKind, switches: u32) -> ExperimentConfig {
    let mut cfg = sim_scale(kind, switches, 3, 3);
    cfg.topology.packet_rate_bps = 10e6;
    cfg.topology.circuit_rate_bps = 100e6;
    cfg.topology.hosts_per_switch = 4;
    cfg.traffic.params = TraceParams {
        n_flows: 200,
        count_basis: CountBasis::Transfers,
        load: 0.3,
        ..TraceParams::default()
    };
    cfg
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let mut cfg = match name {
        "ring10-sim" | "uniform-coflow" => sim_scale(TopologyKind::Ring, 10, 0, 0),
        "ring12-sim" => sim_scale(TopologyKind::Ring, 12, 0, 0),
        "ring14-sim" => sim_scale(TopologyKind::Ring, 14, 0, 0),
        "ring16-sim" => sim_scale(TopologyKind::Ring, 16, 0, 0),
        "fbfly333-sim" => sim_scale(TopologyKind::Fbfly, 0, 3, 3),
        "fbfly443-sim" => sim_scale(TopologyKind::Fbfly, 0, 4, 3),
        "fbfly553-sim" => sim_scale(TopologyKind::Fbfly, 0, 5, 3),
        "fbfly663-sim" => sim_scale(TopologyKind::Fbfly, 0, 6, 3),
        "fbfly333-emu-scale" => emu_scale(TopologyKind::Fbfly, 0),
        "ring10-emu-scale" => emu_scale(TopologyKind::Ring, 10),
        "ring10-intensive" | "uniform-intensive" => {
            let mut c = sim_scale(TopologyKind::Ring, 10, 0, 0);
            c.traffic.params = uniform_intensive_params(400_000);
            c.control = ControlSection {
                th_configure: 0.02,
                th_remove: 0.01,
                ..Default::default()
            };
            c.modes.circuits = vec![CircuitSetting::Shared];
            c.modes.rules = vec![RuleMode::Cshare, RuleMode::PerFlow];
            c
        }
        _ => return None,
    };
    cfg.name = name.to_string();
    Some(cfg)
}
