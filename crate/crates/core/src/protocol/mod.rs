//! The asynchronous crash-tolerant learning protocol: belief updates,
//! adversary configuration, the event-driven engine and execution traces.

mod belief;
mod config;
mod engine;
mod trace;

pub use belief::{logsumexp, normalize_log, partial_update, update_belief, BeliefVector};
pub use config::{
    DEFAULT_HORIZON,
    AdversaryConfig, AdversarySchedule, ConfigFile, CrashEvent, CrashPhase, CrashPhaseName, CrashSpec,
    DelayMode, DelayPolicy, SimulationConfig, Source,
};
pub use engine::{converged, run_execution};
pub use trace::{meta_path, AgentStep, ExecutionTrace, IterationStep, TraceMeta, TraceRecord};
