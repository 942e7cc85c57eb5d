//! Bottleneck-minimizing pipeline planner.
//!
//! State g(m, S, j) is the smallest achievable bottleneck for the first `m`
//! layers split into contiguous stages over exactly the device set `S`
//! (a bitmask that always contains the source device), with `j` hosting the
//! last stage. A stage's cost is max(stage compute, incoming activation
//! transfer); transitions append one stage on an unused device, so every
//! device hosts at most one stage. Masks are visited in increasing numeric
//! order; a transition only reads states with strictly fewer devices, which
//! is also what would make a popcount-parallel fill safe. Complexity is
//! O(N^2 * 2^M * M^2); device counts above 20 are rejected up front.
//!
//! Unlike the latency planner, segments are contiguous and devices are used
//! once, so the memory accounting is exact and the result provably optimal.

use std::collections::{BTreeMap, HashMap};

use crate::model::{
    comm_time_ms, plan_bottleneck_ms, ClusterProfile, DeviceId, ModelProfile, Stage, ThroughputPlan,
};

use super::PlanError;

/// Most devices the bitmask state can hold.
pub const MAX_DEVICES: usize = 20;

type StateKey = (usize, u32, DeviceId);

/// Filled dynamic-programming state, exposed for inspection and tests.
#[derive(Debug, Clone)]
pub struct ThroughputDpState {
    /// (layers covered, device set, last device) -> bottleneck ms.
    pub g: BTreeMap<StateKey, f64>,
    /// Predecessor record: previous layer count and previous last device.
    /// Absent for base states (a single stage from layer 0 on the source).
    pub choice: BTreeMap<StateKey, (usize, DeviceId)>,
    pub layer_count: usize,
    pub device_count: usize,
}

/// Fill the state space bottom-up over device subsets.
pub fn fill_throughput_dp(
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Result<ThroughputDpState, PlanError> {
    let n = model.layer_count();
    let m = cluster.device_count();
    if m > MAX_DEVICES {
        return Err(PlanError::TooManyDevices(m));
    }
    let budgets = cluster.budgets();
    let mut state = ThroughputDpState {
        g: BTreeMap::new(),
        choice: BTreeMap::new(),
        layer_count: n,
        device_count: m,
    };

    // Base: one stage [0, i) on the source device.
    let mut compute = 0.0f64;
    let mut memory = 0u64;
    for end in 1..=n {
        let layer = &model.layers[end - 1];
        let Ok(t) = layer.effective_ms(0) else { break };
        compute += t;
        memory += layer.memory_bytes;
        if memory > budgets[0] {
            break;
        }
        state.g.insert((end, 1, 0), compute);
    }
    if state.g.is_empty() {
        return Err(PlanError::Infeasible(
            "layer 0 does not fit on the source device".into(),
        ));
    }

    for mask in 1u32..(1 << m) {
        if mask & 1 == 0 {
            continue;
        }
        for k in 0..m {
            if mask & (1 << k) == 0 {
                continue;
            }
            for covered in 1..n {
                let Some(&prev) = state.g.get(&(covered, mask, k)) else {
                    continue;
                };
                for (j, &budget) in budgets.iter().enumerate() {
                    if mask & (1 << j) != 0 {
                        continue;
                    }
                    let Ok(comm) =
                        comm_time_ms(model.layers[covered - 1].activation_bytes, k, j, cluster)
                    else {
                        continue;
                    };
                    let new_mask = mask | (1 << j);
                    let mut compute = 0.0f64;
                    let mut memory = 0u64;
                    for end in covered + 1..=n {
                        let layer = &model.layers[end - 1];
                        let Ok(t) = layer.effective_ms(j) else { break };
                        compute += t;
                        memory += layer.memory_bytes;
                        if memory > budget {
                            break;
                        }
                        let value = prev.max(comm).max(compute);
                        let key = (end, new_mask, j);
                        if state.g.get(&key).is_none_or(|&cur| value < cur) {
                            state.g.insert(key, value);
                            state.choice.insert(key, (covered, k));
                        }
                    }
                }
            }
        }
    }
    Ok(state)
}

/// The optimal bottleneck value: the cheapest full-coverage state.
pub fn optimal_bottleneck(state: &ThroughputDpState) -> Option<f64> {
    let n = state.layer_count;
    let mut best = f64::INFINITY;
    for (&(covered, _, _), &value) in &state.g {
        if covered == n && value < best {
            best = value;
        }
    }
    best.is_finite().then_some(best)
}

/// Follow raw predecessor records from the cheapest full-coverage state.
/// First-found tie-breaks; mainly for diagnostics — [`backtrack_throughput`]
/// is the canonical, deterministic reconstruction.
pub fn choice_path(state: &ThroughputDpState) -> Option<Vec<Stage>> {
    let n = state.layer_count;
    let mut best: Option<(f64, StateKey)> = None;
    for (&key, &value) in &state.g {
        if key.0 == n && best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, key));
        }
    }
    let (_, mut key) = best?;
    let mut stages = Vec::new();
    loop {
        let (covered, mask, device) = key;
        match state.choice.get(&key) {
            Some(&(prev_covered, prev_device)) => {
                stages.push(Stage {
                    layer_lo: prev_covered,
                    layer_hi: covered,
                    device,
                });
                key = (prev_covered, mask & !(1 << device), prev_device);
            }
            None => {
                stages.push(Stage {
                    layer_lo: 0,
                    layer_hi: covered,
                    device,
                });
                break;
            }
        }
    }
    stages.reverse();
    Some(stages)
}

/// Reconstruct the optimal plan deterministically: among all plans whose
/// every stage cost is within the optimal bottleneck, pick the one with the
/// fewest stages, then the lexicographically smallest device sequence, then
/// the lexicographically smallest stage boundaries.
pub fn backtrack_throughput(
    state: &ThroughputDpState,
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Result<Vec<Stage>, PlanError> {
    let bottleneck = optimal_bottleneck(state)
        .ok_or_else(|| PlanError::Infeasible("no memory-feasible stage partition".into()))?;
    let mut search = PlanSearch::new(model, cluster, bottleneck);
    let n = state.layer_count;
    let m = state.device_count;

    // Smallest stage count achieving the bottleneck.
    let max_stages = n.min(m);
    let mut stage_count = None;
    'outer: for count in 1..=max_stages {
        for end in search.valid_ends(0, None, 0) {
            if search.can_complete(end, 1, 0, count - 1) {
                stage_count = Some(count);
                break 'outer;
            }
        }
    }
    let stage_count =
        stage_count.ok_or_else(|| PlanError::Infeasible("optimal value unreachable".into()))?;

    // Lexicographically smallest device sequence: at each position take the
    // smallest device that still admits a completion, tracking every
    // boundary the prefix could have stopped at.
    let mut devices: Vec<DeviceId> = vec![0];
    let mut mask = 1u32;
    let mut frontier: Vec<usize> = search
        .valid_ends(0, None, 0)
        .into_iter()
        .filter(|&end| search.can_complete(end, 1, 0, stage_count - 1))
        .collect();
    for step in 1..stage_count {
        let left_after = stage_count - step - 1;
        let prev = *devices.last().expect("nonempty");
        let mut advanced = false;
        for j in 0..m {
            if mask & (1 << j) != 0 {
                continue;
            }
            let mut next: Vec<usize> = Vec::new();
            for &from in &frontier {
                for end in search.valid_ends(from, Some(prev), j) {
                    if search.can_complete(end, mask | (1 << j), j, left_after)
                        && !next.contains(&end)
                    {
                        next.push(end);
                    }
                }
            }
            if !next.is_empty() {
                next.sort_unstable();
                devices.push(j);
                mask |= 1 << j;
                frontier = next;
                advanced = true;
                break;
            }
        }
        if !advanced {
            return Err(PlanError::Infeasible("optimal value unreachable".into()));
        }
    }

    // Smallest boundaries for the fixed device sequence.
    let mut bounds = vec![0usize];
    for step in 0..stage_count {
        let from = *bounds.last().expect("nonempty");
        let prev = if step == 0 {
            None
        } else {
            Some(devices[step - 1])
        };
        let next = search
            .valid_ends(from, prev, devices[step])
            .into_iter()
            .find(|&end| search.chain_ok(end, step + 1, &devices))
            .ok_or_else(|| PlanError::Infeasible("optimal value unreachable".into()))?;
        bounds.push(next);
    }

    Ok(bounds
        .windows(2)
        .zip(&devices)
        .map(|(w, &device)| Stage {
            layer_lo: w[0],
            layer_hi: w[1],
            device,
        })
        .collect())
}

/// Plan contiguous stages over distinct devices minimizing the bottleneck
/// stage time.
pub fn plan_max_throughput(
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Result<ThroughputPlan, PlanError> {
    let state = fill_throughput_dp(model, cluster)?;
    let stages = backtrack_throughput(&state, model, cluster)?;
    let predicted_stage_time_ms = plan_bottleneck_ms(&stages, model, cluster)?;
    debug_assert_eq!(Some(predicted_stage_time_ms), optimal_bottleneck(&state));
    Ok(ThroughputPlan {
        stages,
        predicted_stage_time_ms,
    })
}

/// Shared context for the reconstruction: a stage is admissible when it
/// fits its device and neither its compute nor its incoming transfer
/// exceeds the target bottleneck.
struct PlanSearch<'a> {
    model: &'a ModelProfile,
    cluster: &'a ClusterProfile,
    budgets: Vec<u64>,
    bottleneck: f64,
    complete_memo: HashMap<(usize, u32, DeviceId, usize), bool>,
}

impl<'a> PlanSearch<'a> {
    fn new(model: &'a ModelProfile, cluster: &'a ClusterProfile, bottleneck: f64) -> Self {
        Self {
            model,
            cluster,
            budgets: cluster.budgets(),
            bottleneck,
            complete_memo: HashMap::new(),
        }
    }

    /// Admissible stage ends for a stage starting at `from` on `device`,
    /// following `prev` (None for the first stage), in ascending order.
    fn valid_ends(&self, from: usize, prev: Option<DeviceId>, device: DeviceId) -> Vec<usize> {
        let n = self.model.layer_count();
        if let Some(k) = prev {
            let payload = self.model.layers[from - 1].activation_bytes;
            match comm_time_ms(payload, k, device, self.cluster) {
                Ok(comm) if comm <= self.bottleneck => {}
                _ => return Vec::new(),
            }
        }
        let mut out = Vec::new();
        let mut compute = 0.0f64;
        let mut memory = 0u64;
        for end in from + 1..=n {
            let layer = &self.model.layers[end - 1];
            let Ok(t) = layer.effective_ms(device) else {
                break;
            };
            compute += t;
            memory += layer.memory_bytes;
            if memory > self.budgets[device] || compute > self.bottleneck {
                break;
            }
            out.push(end);
        }
        out
    }

    /// Whether layers `[covered, N)` can be split into exactly `left` more
    /// admissible stages over devices outside `mask`.
    fn can_complete(&mut self, covered: usize, mask: u32, last: DeviceId, left: usize) -> bool {
        let n = self.model.layer_count();
        if covered == n {
            return left == 0;
        }
        if left == 0 {
            return false;
        }
        let key = (covered, mask, last, left);
        if let Some(&hit) = self.complete_memo.get(&key) {
            return hit;
        }
        let mut ok = false;
        'outer: for j in 0..self.cluster.device_count() {
            if mask & (1 << j) != 0 {
                continue;
            }
            for end in self.valid_ends(covered, Some(last), j) {
                if self.can_complete(end, mask | (1 << j), j, left - 1) {
                    ok = true;
                    break 'outer;
                }
            }
        }
        self.complete_memo.insert(key, ok);
        ok
    }

    /// Whether `covered` can reach N with the fixed device tail
    /// `devices[step..]`.
    fn chain_ok(&mut self, covered: usize, step: usize, devices: &[DeviceId]) -> bool {
        let n = self.model.layer_count();
        if step == devices.len() {
            return covered == n;
        }
        let prev = devices[step - 1];
        self.valid_ends(covered, Some(prev), devices[step])
            .into_iter()
            .any(|end| self.chain_ok(end, step + 1, devices))
    }
}
