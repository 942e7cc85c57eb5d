//! Single-request latency planner.
//!
//! Fills a layer x device table where cell (i, j) holds the minimal time to
//! run layers 0..=i with layer i on device j, including every boundary
//! transfer and, on the last layer, the token return to the source device.
//! Layer 0 is pinned to device 0.
//!
//! Memory handling depends on the mode. In [`LatencyMode::Greedy`] each cell
//! carries the remaining-memory vector of its chosen predecessor path and a
//! transition is admissible only when the layer still fits on that path;
//! this is a greedy account (the cell keeps only its time-optimal path), so
//! with binding budgets the planner is a heuristic whose gap the oracle
//! measures. In [`LatencyMode::ExactUnconstrained`] budgets are ignored and
//! the result is globally optimal; use it when memory is known to be slack.

use crate::model::{
    comm_time_ms, plan_total_latency_ms, ClusterProfile, DeviceId, LatencyPlan, ModelProfile,
};

use super::PlanError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyMode {
    /// Enforce memory budgets greedily along each DP path.
    Greedy,
    /// Ignore memory budgets; exact optimum for slack-memory instances.
    ExactUnconstrained,
}

/// Filled dynamic-programming table, exposed for inspection and tests.
#[derive(Debug, Clone)]
pub struct LatencyDpState {
    /// `dp[i][j]`: minimal total time for layers 0..=i with layer i on
    /// device j; `f64::INFINITY` marks unreachable cells.
    pub dp: Vec<Vec<f64>>,
    /// `choice[i][j]`: device hosting layer i-1 on the best path into (i, j).
    pub choice: Vec<Vec<Option<DeviceId>>>,
    /// Remaining per-device memory along the best path into (i, j);
    /// `None` for unreachable cells or in unconstrained mode.
    pub remaining_mem: Vec<Vec<Option<Vec<u64>>>>,
}

/// Fill the table. Ties between predecessors prefer the lower device id.
pub fn fill_latency_dp(
    model: &ModelProfile,
    cluster: &ClusterProfile,
    mode: LatencyMode,
) -> Result<LatencyDpState, PlanError> {
    let n = model.layer_count();
    let m = cluster.device_count();
    let track_memory = mode == LatencyMode::Greedy;

    let mut state = LatencyDpState {
        dp: vec![vec![f64::INFINITY; m]; n],
        choice: vec![vec![None; m]; n],
        remaining_mem: vec![vec![None; m]; n],
    };

    // Privacy pin: layer 0 runs on device 0 or nowhere.
    let layer0 = &model.layers[0];
    let first = layer0
        .effective_ms(0)
        .map_err(|_| PlanError::Infeasible("layer 0 has no profiled time on device 0".into()))?;
    if track_memory {
        let budgets = cluster.budgets();
        if budgets[0] < layer0.memory_bytes {
            return Err(PlanError::Infeasible(
                "layer 0 does not fit the source device's memory budget".into(),
            ));
        }
        let mut remaining = budgets;
        remaining[0] -= layer0.memory_bytes;
        state.remaining_mem[0][0] = Some(remaining);
    }
    state.dp[0][0] = first;

    for i in 1..n {
        let layer = &model.layers[i];
        let last = i == n - 1;
        for j in 0..m {
            let Ok(compute) = layer.effective_ms(j) else {
                continue;
            };
            let return_ms = if last {
                match comm_time_ms(model.token_return_bytes, j, cluster.source_device, cluster) {
                    Ok(ms) => ms,
                    Err(_) => continue,
                }
            } else {
                0.0
            };
            for k in 0..m {
                let prev = state.dp[i - 1][k];
                if !prev.is_finite() {
                    continue;
                }
                if track_memory {
                    let remaining = state.remaining_mem[i - 1][k].as_ref().expect("finite cell");
                    if remaining[j] < layer.memory_bytes {
                        continue;
                    }
                }
                let Ok(comm) = comm_time_ms(model.layers[i - 1].activation_bytes, k, j, cluster)
                else {
                    continue;
                };
                let total = prev + compute + comm + return_ms;
                if total < state.dp[i][j] {
                    state.dp[i][j] = total;
                    state.choice[i][j] = Some(k);
                    if track_memory {
                        let mut remaining =
                            state.remaining_mem[i - 1][k].clone().expect("finite cell");
                        remaining[j] -= layer.memory_bytes;
                        state.remaining_mem[i][j] = Some(remaining);
                    }
                }
            }
        }
    }
    Ok(state)
}

/// Follow the back-pointers from the cheapest last-layer cell (ties: lowest
/// device id) to the per-layer assignment.
pub fn backtrack_latency(state: &LatencyDpState) -> Result<Vec<DeviceId>, PlanError> {
    let n = state.dp.len();
    let last_row = &state.dp[n - 1];
    let mut best: Option<DeviceId> = None;
    for (j, &value) in last_row.iter().enumerate() {
        if value.is_finite() && best.is_none_or(|b| value < last_row[b]) {
            best = Some(j);
        }
    }
    let mut device =
        best.ok_or_else(|| PlanError::Infeasible("no memory-feasible assignment".into()))?;
    let mut assignment = vec![0usize; n];
    assignment[n - 1] = device;
    for i in (1..n).rev() {
        device = state.choice[i][device].expect("finite cell has a predecessor");
        assignment[i - 1] = device;
    }
    Ok(assignment)
}

/// Plan a per-layer assignment minimizing total single-request latency.
pub fn plan_min_latency(
    model: &ModelProfile,
    cluster: &ClusterProfile,
    mode: LatencyMode,
) -> Result<LatencyPlan, PlanError> {
    let state = fill_latency_dp(model, cluster, mode)?;
    let assignment = backtrack_latency(&state)?;
    let predicted_latency_ms = plan_total_latency_ms(&assignment, model, cluster)?;
    Ok(LatencyPlan {
        assignment,
        predicted_latency_ms,
    })
}
