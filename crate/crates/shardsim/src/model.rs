//! Core domain types and the cost/constraint primitives shared by the
//! planners, the brute-force oracles, and the pipeline simulator.
//!
//! Conventions: times are f64 milliseconds, sizes are bytes, bandwidth is
//! bytes per second in memory (the profile file stores bits per second).
//! Device and layer ids are dense indices; the source device holding the
//! input tokens is always index 0 after profile normalization.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub type DeviceId = usize;
pub type LayerId = usize;

/// Per-phase execution times of one layer on one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerTime {
    pub prefill_ms: f64,
    pub decode_ms: f64,
}

impl LayerTime {
    /// Single planning-time cost of a layer: the prefill/decode average.
    pub fn effective_ms(&self) -> f64 {
        (self.prefill_ms + self.decode_ms) / 2.0
    }
}

/// Profiled trace of one model layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerProfile {
    pub index: LayerId,
    /// Execution times keyed by device id. A device with no entry cannot
    /// host this layer.
    pub compute_time: BTreeMap<DeviceId, LayerTime>,
    /// Activation (layer output) size per request per token.
    pub activation_bytes: u64,
    /// Resident weight + workspace memory needed to host the layer.
    pub memory_bytes: u64,
    /// KV-cache growth per prompt/generated token per request.
    pub kv_bytes_per_token: u64,
}

impl LayerProfile {
    pub fn supports(&self, device: DeviceId) -> bool {
        self.compute_time.contains_key(&device)
    }

    pub fn time_on(&self, device: DeviceId) -> Result<LayerTime, CostError> {
        self.compute_time
            .get(&device)
            .copied()
            .ok_or(CostError::UnsupportedLayer {
                layer: self.index,
                device,
            })
    }

    /// Planning-time cost of this layer on `device` (prefill/decode average).
    pub fn effective_ms(&self, device: DeviceId) -> Result<f64, CostError> {
        Ok(self.time_on(device)?.effective_ms())
    }
}

/// One compute device in the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub index: DeviceId,
    pub memory_budget_bytes: u64,
    pub label: String,
}

/// The networked device pool.
///
/// `bandwidth_bytes_per_sec[k][j]` is the k→j link; zero means the link is
/// unusable and planners must never route over it. The diagonal is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProfile {
    pub devices: Vec<DeviceProfile>,
    pub bandwidth_bytes_per_sec: Vec<Vec<f64>>,
    /// Holder of the input tokens; 0 after normalization.
    pub source_device: DeviceId,
}

impl ClusterProfile {
    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn budgets(&self) -> Vec<u64> {
        self.devices.iter().map(|d| d.memory_budget_bytes).collect()
    }

    /// Whether the directed k→j link can carry data (always true for k == j).
    pub fn link_usable(&self, from: DeviceId, to: DeviceId) -> bool {
        from == to || self.bandwidth_bytes_per_sec[from][to] > 0.0
    }
}

/// The profiled model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub layers: Vec<LayerProfile>,
    /// Payload of the generated token sent back to the source each iteration.
    pub token_return_bytes: u64,
    /// Default input sequence length for simulation.
    pub prompt_len: u64,
    /// Default number of tokens to generate.
    pub gen_len: u64,
}

impl ModelProfile {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn total_memory_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.memory_bytes).sum()
    }
}

/// Per-layer device assignment minimizing single-request latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyPlan {
    /// `assignment[i]` is the device hosting layer i.
    pub assignment: Vec<DeviceId>,
    pub predicted_latency_ms: f64,
}

/// One contiguous pipeline stage: layers `[layer_lo, layer_hi)` on `device`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub layer_lo: LayerId,
    pub layer_hi: LayerId,
    pub device: DeviceId,
}

/// Ordered contiguous stages minimizing the bottleneck stage time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPlan {
    pub stages: Vec<Stage>,
    pub predicted_stage_time_ms: f64,
}

/// Either planner output; the simulator and the CLI accept both.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    Latency(LatencyPlan),
    Throughput(ThroughputPlan),
}

/// Errors from the cost primitives.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("no usable link from device {from} to device {to}")]
    UnusableLink { from: DeviceId, to: DeviceId },
    #[error("layer {layer} has no profiled time on device {device}")]
    UnsupportedLayer { layer: LayerId, device: DeviceId },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid layer range [{lo}, {hi})")]
    InvalidRange { lo: usize, hi: usize },
}

/// A named constraint violation found by [`validate_plan`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Layer 0 / stage 0 is not on the source device.
    Privacy { device: DeviceId },
    /// Memory assigned to a device exceeds its budget.
    Memory {
        device: DeviceId,
        required_bytes: u64,
        budget_bytes: u64,
    },
    /// Stages do not partition `[0, N)` contiguously and in order.
    NonContiguous { stage: usize },
    /// A device hosts more than one stage.
    DuplicateDevice { device: DeviceId },
    /// Assignment length does not match the layer count.
    BadLength { expected: usize, got: usize },
    /// Reference to a device id outside the cluster.
    BadDevice { device: DeviceId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Privacy { device } => write!(
                f,
                "privacy: first layer placed on device {device}, must stay on source device 0"
            ),
            Violation::Memory {
                device,
                required_bytes,
                budget_bytes,
            } => write!(
                f,
                "memory: device {device} needs {required_bytes} bytes but has budget {budget_bytes}"
            ),
            Violation::NonContiguous { stage } => {
                write!(
                    f,
                    "contiguity: stage {stage} does not continue the previous stage"
                )
            }
            Violation::DuplicateDevice { device } => {
                write!(f, "device reuse: device {device} hosts more than one stage")
            }
            Violation::BadLength { expected, got } => {
                write!(
                    f,
                    "assignment length {got} does not match layer count {expected}"
                )
            }
            Violation::BadDevice { device } => {
                write!(f, "unknown device id {device}")
            }
        }
    }
}

/// Time to move `payload_bytes` over the k→j link, in milliseconds.
///
/// Exactly zero when `from == to`; an unusable (zero-bandwidth) link is an
/// error rather than an infinite time.
pub fn comm_time_ms(
    payload_bytes: u64,
    from: DeviceId,
    to: DeviceId,
    cluster: &ClusterProfile,
) -> Result<f64, CostError> {
    if from == to {
        return Ok(0.0);
    }
    let bw = cluster.bandwidth_bytes_per_sec[from][to];
    if bw <= 0.0 || !bw.is_finite() {
        return Err(CostError::UnusableLink { from, to });
    }
    Ok(payload_bytes as f64 / bw * 1000.0)
}

/// Total single-request latency of a per-layer assignment: all effective
/// layer times, plus every boundary activation transfer, plus the return of
/// the generated token to the source device.
pub fn plan_total_latency_ms(
    assignment: &[DeviceId],
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Result<f64, CostError> {
    let n = model.layer_count();
    if assignment.len() != n {
        return Err(CostError::InvalidPlan(format!(
            "assignment has {} entries for {} layers",
            assignment.len(),
            n
        )));
    }
    let m = cluster.device_count();
    if let Some(&bad) = assignment.iter().find(|&&d| d >= m) {
        return Err(CostError::InvalidPlan(format!("unknown device id {bad}")));
    }
    let mut total = 0.0;
    for (layer, &dev) in model.layers.iter().zip(assignment) {
        total += layer.effective_ms(dev)?;
    }
    for i in 1..n {
        total += comm_time_ms(
            model.layers[i - 1].activation_bytes,
            assignment[i - 1],
            assignment[i],
            cluster,
        )?;
    }
    total += comm_time_ms(
        model.token_return_bytes,
        assignment[n - 1],
        cluster.source_device,
        cluster,
    )?;
    Ok(total)
}

/// Sum of resident memory over layers `[layer_lo, layer_hi)`.
pub fn segment_memory_bytes(
    model: &ModelProfile,
    layer_lo: LayerId,
    layer_hi: LayerId,
) -> Result<u64, CostError> {
    if layer_lo >= layer_hi || layer_hi > model.layer_count() {
        return Err(CostError::InvalidRange {
            lo: layer_lo,
            hi: layer_hi,
        });
    }
    Ok(model.layers[layer_lo..layer_hi]
        .iter()
        .map(|l| l.memory_bytes)
        .sum())
}

/// Sum of effective layer times over `[layer_lo, layer_hi)` on one device.
pub fn segment_compute_ms(
    model: &ModelProfile,
    layer_lo: LayerId,
    layer_hi: LayerId,
    device: DeviceId,
) -> Result<f64, CostError> {
    if layer_lo >= layer_hi || layer_hi > model.layer_count() {
        return Err(CostError::InvalidRange {
            lo: layer_lo,
            hi: layer_hi,
        });
    }
    let mut total = 0.0;
    for layer in &model.layers[layer_lo..layer_hi] {
        total += layer.effective_ms(device)?;
    }
    Ok(total)
}

/// Bottleneck of a staged plan: the maximum over stages of
/// max(stage compute time, incoming-activation transfer time).
pub fn plan_bottleneck_ms(
    stages: &[Stage],
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Result<f64, CostError> {
    if stages.is_empty() {
        return Err(CostError::InvalidPlan("plan has no stages".into()));
    }
    let mut worst = 0.0f64;
    for (s, stage) in stages.iter().enumerate() {
        let compute = segment_compute_ms(model, stage.layer_lo, stage.layer_hi, stage.device)?;
        let comm_in = if s == 0 {
            0.0
        } else {
            comm_time_ms(
                model.layers[stage.layer_lo - 1].activation_bytes,
                stages[s - 1].device,
                stage.device,
                cluster,
            )?
        };
        worst = worst.max(compute.max(comm_in));
    }
    Ok(worst)
}

/// Check a plan against the placement constraints: privacy (first layer on
/// the source device), per-device memory budgets, and for staged plans
/// contiguity plus one-stage-per-device. Violations are returned, not raised.
pub fn validate_plan(
    plan: &Plan,
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Vec<Violation> {
    match plan {
        Plan::Latency(p) => validate_latency_plan(&p.assignment, model, cluster),
        Plan::Throughput(p) => validate_throughput_plan(&p.stages, model, cluster),
    }
}

pub fn validate_latency_plan(
    assignment: &[DeviceId],
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.layer_count();
    let m = cluster.device_count();
    if assignment.len() != n {
        out.push(Violation::BadLength {
            expected: n,
            got: assignment.len(),
        });
        return out;
    }
    for &dev in assignment {
        if dev >= m {
            out.push(Violation::BadDevice { device: dev });
            return out;
        }
    }
    if assignment[0] != cluster.source_device {
        out.push(Violation::Privacy {
            device: assignment[0],
        });
    }
    let mut used = vec![0u64; m];
    for (layer, &dev) in model.layers.iter().zip(assignment) {
        used[dev] += layer.memory_bytes;
    }
    for (dev, (&required, device)) in used.iter().zip(&cluster.devices).enumerate() {
        if required > device.memory_budget_bytes {
            out.push(Violation::Memory {
                device: dev,
                required_bytes: required,
                budget_bytes: device.memory_budget_bytes,
            });
        }
    }
    out
}

pub fn validate_throughput_plan(
    stages: &[Stage],
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.layer_count();
    let m = cluster.device_count();
    if stages.is_empty() {
        out.push(Violation::NonContiguous { stage: 0 });
        return out;
    }
    for stage in stages {
        if stage.device >= m {
            out.push(Violation::BadDevice {
                device: stage.device,
            });
            return out;
        }
    }
    let mut expect_lo = 0;
    for (s, stage) in stages.iter().enumerate() {
        if stage.layer_lo != expect_lo || stage.layer_lo >= stage.layer_hi || stage.layer_hi > n {
            out.push(Violation::NonContiguous { stage: s });
            return out;
        }
        expect_lo = stage.layer_hi;
    }
    if expect_lo != n {
        out.push(Violation::NonContiguous {
            stage: stages.len() - 1,
        });
        return out;
    }
    let mut seen = vec![false; m];
    for stage in stages {
        if seen[stage.device] {
            out.push(Violation::DuplicateDevice {
                device: stage.device,
            });
        }
        seen[stage.device] = true;
    }
    if stages[0].device != cluster.source_device {
        out.push(Violation::Privacy {
            device: stages[0].device,
        });
    }
    for stage in stages {
        // Ranges were checked above.
        let required = segment_memory_bytes(model, stage.layer_lo, stage.layer_hi).unwrap_or(0);
        let budget = cluster.devices[stage.device].memory_budget_bytes;
        if required > budget {
            out.push(Violation::Memory {
                device: stage.device,
                required_bytes: required,
                budget_bytes: budget,
            });
        }
    }
    out
}
