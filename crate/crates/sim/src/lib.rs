//! Trace-driven model of a near-storage search accelerator: NAND cores
//! behind H-tree buses, a bank of search queues, a shared sorter and a
//! shared PQ module.

pub mod config;
pub mod engine;
pub mod faults;
pub mod sweep;
pub mod traffic;

pub use config::{EnergyTable, SimConfig};
pub use engine::{simulate, Breakdown, SimReport, CSV_HEADER};
pub use faults::{inject_errors, Corrupted, ErrorModel, FlipCounts};
pub use sweep::{hot_node_sweep, queue_sweep, HotPoint};
pub use traffic::{traffic_breakdown, Traffic};
