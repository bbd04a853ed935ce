//! Deterministic discrete-event simulator for flowlets over onion paths.

pub mod config;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod sim;
pub mod stats;
pub mod workload;

pub use config::SimConfig;
pub use engine::{CryptoEngine, PacketEngine, SymbolicEngine};
pub use error::SimError;
pub use sim::{run_config, run_simulation, run_workload, FlowletOutcome, NodeMetrics, ObserverTrace, RunMetrics, SimOutput};
pub use workload::Workload;
