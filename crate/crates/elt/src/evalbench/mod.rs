//! Quality and efficiency evaluation: enumerable-distribution metrics,
//! elasticity curves across loop counts, Pareto sweeps, throughput timing.

pub mod elasticity;
pub mod pareto;
pub mod throughput;
pub mod tv;
pub mod workqueue;

pub use elasticity::{elasticity_curve, held_out_loss, ElasticityPoint};
pub use pareto::{
    mark_pareto, pareto_sweep, write_csv as write_sweep_csv, SweepEntry, SweepResult, SweepRow,
    SweepSpec, SWEEP_SPEC_VERSION,
};
pub use throughput::{throughput_measure, ThroughputMeasurement};
pub use tv::{tv_distance, tv_from_counts};
pub use workqueue::{parallel_map, worker_cap};
