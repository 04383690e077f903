//! Scenario-driven experiments: the built-in baseline, delay and partition
//! scenarios, a load generator, the virtual-time runner, and latency
//! summaries.

mod loadgen;
mod runner;
mod scenario;
mod summary;

pub use loadgen::{LatencySample, LoadGenerator, SampleStatus};
pub use runner::{replicas, run_virtual, BenchError, BenchNode, ConvergenceSample, RunOutput};
pub use scenario::{
    builtin, builtin_scenarios, replica_address, Backend, OpKind, OpWeight, Scenario, ScenarioError, TimeMode,
    Topology, Workload, CLIENT_NODE,
};
pub use summary::{percentile_nearest_rank, summarize, BucketSummary, Summary, BUCKET_MS};
