//! Partition planning and pipeline simulation for layered-model inference
//! on heterogeneous networked devices.
//!
//! Given a profiled model (per-layer execution times per device, activation
//! and memory sizes) and a cluster description (device memory budgets and a
//! pairwise bandwidth matrix), this crate
//!
//! * plans a per-layer device assignment minimizing single-request latency
//!   ([`planner::latency`]),
//! * plans contiguous pipeline stages minimizing the bottleneck stage time,
//!   i.e. maximizing steady-state throughput ([`planner::throughput`]),
//! * checks both planners against exhaustive brute-force solvers on small
//!   instances ([`oracle`]), and
//! * replays a plan through a discrete-event simulation of prefill +
//!   autoregressive generation with micro-batching ([`sim`]).
//!
//! Planner variants are exposed behind the [`planner::PartitionStrategy`]
//! trait and selected by name from a registry; the simulator's pipeline
//! execution policies work the same way via [`sim::schedule`].

pub mod model;
pub mod oracle;
pub mod plandoc;
pub mod planner;
pub mod profile;
pub mod sim;
