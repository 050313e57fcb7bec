//! Flow-level simulation of data-center upper tiers that offload elephant
//! flows onto optical circuits, either private to one switch pair or shared by
//! every flow transiting the circuit's source switch.

pub mod config;
pub mod control;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod switch;
pub mod topology;
pub mod traffic;

pub use config::{ConfigError, ExperimentConfig};
pub use control::{DemandEntry, DemandMatrix, DetectorConfig, SchedulerConfig};
pub use engine::{run_simulation, CircuitSetting, FlowState, SimConfig, SimError, Simulation};
pub use metrics::{MetricsReport, ResultRow};
pub use switch::{Circuit, CircuitMode, CircuitPlan, OFRule, RuleMode, SwitchTiming};
pub use topology::{HostId, LinkId, LinkRates, Path, SwitchId, Topology, TopologyKind};
pub use traffic::{FlowClass, FlowId, FlowSpec, Trace, TraceParams};
