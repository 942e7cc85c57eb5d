//! Placement planners behind a common strategy interface.
//!
//! Every planner variant implements [`PartitionStrategy`] and is registered
//! by name in [`StrategyRegistry`], so callers (the CLI in particular) pick
//! one at runtime:
//!
//! * `latency` — per-layer assignment minimizing single-request latency,
//!   with greedy path-memory accounting (a heuristic once budgets bind).
//! * `latency-exact` — same objective with memory ignored; provably optimal
//!   and meant for slack-memory instances and oracle comparisons.
//! * `throughput` — contiguous stages over distinct devices minimizing the
//!   bottleneck stage time; exact under memory constraints.

use std::collections::BTreeMap;

use crate::model::{ClusterProfile, CostError, ModelProfile, Plan};

pub mod latency;
pub mod throughput;

pub use latency::{
    backtrack_latency, fill_latency_dp, plan_min_latency, LatencyDpState, LatencyMode,
};
pub use throughput::{
    backtrack_throughput, fill_throughput_dp, plan_max_throughput, ThroughputDpState,
};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("cluster has {0} devices; the subset planner supports at most 20")]
    TooManyDevices(usize),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// A placement algorithm selectable by name.
pub trait PartitionStrategy {
    fn name(&self) -> &'static str;
    /// One-line description for listings.
    fn describe(&self) -> &'static str;
    fn plan(&self, model: &ModelProfile, cluster: &ClusterProfile) -> Result<Plan, PlanError>;
}

/// Latency planner as a registry entry.
pub struct LatencyDp {
    pub mode: LatencyMode,
}

impl PartitionStrategy for LatencyDp {
    fn name(&self) -> &'static str {
        match self.mode {
            LatencyMode::Greedy => "latency",
            LatencyMode::ExactUnconstrained => "latency-exact",
        }
    }

    fn describe(&self) -> &'static str {
        match self.mode {
            LatencyMode::Greedy => {
                "minimize single-request latency (greedy per-path memory accounting)"
            }
            LatencyMode::ExactUnconstrained => {
                "minimize single-request latency ignoring memory budgets (exact)"
            }
        }
    }

    fn plan(&self, model: &ModelProfile, cluster: &ClusterProfile) -> Result<Plan, PlanError> {
        plan_min_latency(model, cluster, self.mode).map(Plan::Latency)
    }
}

/// Throughput planner as a registry entry.
pub struct ThroughputDp;

impl PartitionStrategy for ThroughputDp {
    fn name(&self) -> &'static str {
        "throughput"
    }

    fn describe(&self) -> &'static str {
        "minimize the bottleneck stage time of a pipelined deployment"
    }

    fn plan(&self, model: &ModelProfile, cluster: &ClusterProfile) -> Result<Plan, PlanError> {
        plan_max_throughput(model, cluster).map(Plan::Throughput)
    }
}

/// Name-keyed collection of the built-in planners.
pub struct StrategyRegistry {
    entries: BTreeMap<&'static str, Box<dyn PartitionStrategy>>,
}

impl StrategyRegistry {
    pub fn builtin() -> Self {
        let mut registry = Self {
            entries: BTreeMap::new(),
        };
        registry.register(Box::new(LatencyDp {
            mode: LatencyMode::Greedy,
        }));
        registry.register(Box::new(LatencyDp {
            mode: LatencyMode::ExactUnconstrained,
        }));
        registry.register(Box::new(ThroughputDp));
        registry
    }

    pub fn register(&mut self, strategy: Box<dyn PartitionStrategy>) {
        self.entries.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Option<&dyn PartitionStrategy> {
        self.entries.get(name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_builtin_strategies() {
        let registry = StrategyRegistry::builtin();
        let names: Vec<_> = registry.names().collect();
        assert_eq!(names, vec!["latency", "latency-exact", "throughput"]);
        assert!(registry.get("throughput").is_some());
        assert!(registry.get("bogus").is_none());
    }
}
