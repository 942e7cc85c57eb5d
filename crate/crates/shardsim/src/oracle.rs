//! Exhaustive brute-force solvers establishing ground truth for both
//! planners on small instances.
//!
//! These deliberately reuse only the core cost primitives (`comm_time_ms`,
//! `plan_total_latency_ms`, `segment_memory_bytes`, `plan_bottleneck_ms`)
//! and none of the dynamic-programming code, so they stay an independent
//! check on it. Instance-size guards return [`OracleError::TooLarge`]
//! instead of running unbounded.

use crate::model::{
    plan_bottleneck_ms, plan_total_latency_ms, segment_memory_bytes, ClusterProfile, DeviceId,
    ModelProfile, Stage,
};

/// Largest number of candidate plans either solver will enumerate.
pub const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("no feasible plan")]
    Infeasible,
}

/// Enumerate every per-layer assignment with layer 0 pinned to the source
/// device, filter by exact per-device memory feasibility, and return the
/// cheapest (ties: lexicographically smallest assignment).
pub fn brute_force_latency(
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Result<(f64, Vec<DeviceId>), OracleError> {
    let n = model.layer_count();
    let m = cluster.device_count();
    let candidates = (m as f64).powi(n as i32);
    if candidates > ENUMERATION_LIMIT {
        return Err(OracleError::TooLarge(format!(
            "{m}^{n} assignments exceed the {ENUMERATION_LIMIT:e} limit"
        )));
    }

    let budgets: Vec<u64> = cluster.budgets();
    let mut assignment = vec![0usize; n];
    let mut best: Option<(f64, Vec<DeviceId>)> = None;
    loop {
        if memory_feasible(&assignment, model, &budgets) {
            if let Ok(value) = plan_total_latency_ms(&assignment, model, cluster) {
                if best.as_ref().is_none_or(|(b, _)| value < *b) {
                    best = Some((value, assignment.clone()));
                }
            }
        }
        // Odometer over layers 1..N (layer 0 stays on the source device);
        // ascending order makes the first optimum the lexicographic minimum.
        let mut pos = n;
        loop {
            if pos == 1 {
                return best.ok_or(OracleError::Infeasible);
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < m {
                break;
            }
            assignment[pos] = 0;
        }
    }
}

fn memory_feasible(assignment: &[DeviceId], model: &ModelProfile, budgets: &[u64]) -> bool {
    let mut used = vec![0u64; budgets.len()];
    for (layer, &dev) in model.layers.iter().zip(assignment) {
        used[dev] += layer.memory_bytes;
        if used[dev] > budgets[dev] {
            return false;
        }
    }
    true
}

/// Enumerate every contiguous partition of the layers into at most M stages
/// crossed with every injective device sequence starting at the source
/// device, filter by per-stage memory, and return the plan with the smallest
/// bottleneck. Ties prefer fewer stages, then the lexicographically smallest
/// device sequence, then the lexicographically smallest stage boundaries.
pub fn brute_force_throughput(
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Result<(f64, Vec<Stage>), OracleError> {
    let n = model.layer_count();
    let m = cluster.device_count();
    let max_stages = n.min(m);
    let mut candidates = 0.0f64;
    for s in 1..=max_stages {
        candidates += choose(n - 1, s - 1) * permutations(m - 1, s - 1);
    }
    if candidates > ENUMERATION_LIMIT {
        return Err(OracleError::TooLarge(format!(
            "{candidates:.0} staged plans exceed the {ENUMERATION_LIMIT:e} limit"
        )));
    }

    let mut best: Option<(f64, Vec<Stage>)> = None;
    for s in 1..=max_stages {
        let mut devices = vec![0usize];
        let mut used = vec![false; m];
        used[0] = true;
        each_device_seq(s, m, &mut devices, &mut used, &mut |seq| {
            let mut bounds = Vec::with_capacity(s + 1);
            each_partition(n, s, &mut bounds, &mut |bounds| {
                let stages: Vec<Stage> = bounds
                    .windows(2)
                    .zip(seq)
                    .map(|(w, &device)| Stage {
                        layer_lo: w[0],
                        layer_hi: w[1],
                        device,
                    })
                    .collect();
                if !stage_memory_feasible(&stages, model, cluster) {
                    return;
                }
                if let Ok(value) = plan_bottleneck_ms(&stages, model, cluster) {
                    if best.as_ref().is_none_or(|(b, _)| value < *b) {
                        best = Some((value, stages));
                    }
                }
            });
        });
    }
    best.ok_or(OracleError::Infeasible)
}

fn stage_memory_feasible(stages: &[Stage], model: &ModelProfile, cluster: &ClusterProfile) -> bool {
    stages.iter().all(|stage| {
        segment_memory_bytes(model, stage.layer_lo, stage.layer_hi)
            .map(|req| req <= cluster.devices[stage.device].memory_budget_bytes)
            .unwrap_or(false)
    })
}

/// Visit injective device sequences of length `stages` (position 0 already
/// holds the source device) in lexicographic order.
fn each_device_seq(
    stages: usize,
    device_count: usize,
    seq: &mut Vec<DeviceId>,
    used: &mut [bool],
    visit: &mut impl FnMut(&[DeviceId]),
) {
    if seq.len() == stages {
        visit(seq);
        return;
    }
    for dev in 1..device_count {
        if !used[dev] {
            used[dev] = true;
            seq.push(dev);
            each_device_seq(stages, device_count, seq, used, visit);
            seq.pop();
            used[dev] = false;
        }
    }
}

/// Visit boundary vectors `0 = b0 < b1 < … < bs = n` in lexicographic order.
fn each_partition(
    n: usize,
    stages: usize,
    bounds: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if bounds.is_empty() {
        bounds.push(0);
    }
    if bounds.len() == stages {
        bounds.push(n);
        visit(bounds);
        bounds.pop();
        return;
    }
    let lo = *bounds.last().unwrap() + 1;
    let remaining = stages - bounds.len();
    for cut in lo..=(n - remaining) {
        bounds.push(cut);
        each_partition(n, stages, bounds, visit);
        bounds.pop();
    }
}

fn choose(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out *= (n - i) as f64 / (i + 1) as f64;
    }
    out
}

fn permutations(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out *= (n - i) as f64;
    }
    out
}
