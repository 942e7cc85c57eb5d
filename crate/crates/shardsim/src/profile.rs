//! Profile documents: loading, saving, and synthesizing the run-time traces
//! the planners and the simulator consume.
//!
//! The on-disk format is a single JSON object with `schema_version "1"`,
//! top-level keys `schema_version`, `metadata`, `cluster`, `model`. Times
//! are milliseconds and sizes bytes, exactly as in memory; bandwidth is
//! stored in bits per second (`bandwidth_bps_matrix`, matching how link
//! speeds are usually quoted) and converted to bytes per second on load.
//! Unknown keys are rejected. On load the source device is re-indexed to 0.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{
    ClusterProfile, DeviceId, DeviceProfile, LayerProfile, LayerTime, ModelProfile,
};

pub const SCHEMA_VERSION: &str = "1";

/// A complete, normalized profile: model traces + cluster description.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileDocument {
    pub model: ModelProfile,
    pub cluster: ClusterProfile,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("consistency: {0}")]
    Consistency(String),
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDocument {
    schema_version: String,
    metadata: BTreeMap<String, String>,
    cluster: FileCluster,
    model: ModelProfile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCluster {
    devices: Vec<DeviceProfile>,
    /// Bits per second; converted to bytes per second in memory.
    bandwidth_bps_matrix: Vec<Vec<f64>>,
    source_device: usize,
}

/// Load, validate, and normalize a profile document.
pub fn load_profile(path: impl AsRef<Path>) -> Result<ProfileDocument, ProfileError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ProfileError::Parse(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_str()) {
        Some(SCHEMA_VERSION) => {}
        Some(other) => {
            return Err(ProfileError::Schema(format!(
                "unknown schema_version {other:?}"
            )))
        }
        None => return Err(ProfileError::Schema("missing schema_version".into())),
    }
    let file: FileDocument =
        serde_json::from_value(value).map_err(|e| ProfileError::Schema(e.to_string()))?;
    let bandwidth_bytes_per_sec = file
        .cluster
        .bandwidth_bps_matrix
        .iter()
        .map(|row| row.iter().map(|bits| bits / 8.0).collect())
        .collect();
    let mut doc = ProfileDocument {
        model: file.model,
        cluster: ClusterProfile {
            devices: file.cluster.devices,
            bandwidth_bytes_per_sec,
            source_device: file.cluster.source_device,
        },
        metadata: file.metadata,
    };
    validate_document(&doc)?;
    normalize(&mut doc);
    Ok(doc)
}

/// Write a document; `load_profile` of the result round-trips field for field.
pub fn save_profile(doc: &ProfileDocument, path: impl AsRef<Path>) -> Result<(), ProfileError> {
    validate_document(doc)?;
    let file = FileDocument {
        schema_version: SCHEMA_VERSION.to_string(),
        metadata: doc.metadata.clone(),
        cluster: FileCluster {
            devices: doc.cluster.devices.clone(),
            bandwidth_bps_matrix: doc
                .cluster
                .bandwidth_bytes_per_sec
                .iter()
                .map(|row| row.iter().map(|bytes| bytes * 8.0).collect())
                .collect(),
            source_device: doc.cluster.source_device,
        },
        model: doc.model.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("profile serialization");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn validate_document(doc: &ProfileDocument) -> Result<(), ProfileError> {
    let m = doc.cluster.device_count();
    let n = doc.model.layer_count();
    let fail = |msg: String| Err(ProfileError::Consistency(msg));
    if m == 0 {
        return fail("cluster has no devices".into());
    }
    if n == 0 {
        return fail("model has no layers".into());
    }
    for (pos, dev) in doc.cluster.devices.iter().enumerate() {
        if dev.index != pos {
            return fail(format!("device at position {pos} has index {}", dev.index));
        }
        if dev.memory_budget_bytes == 0 {
            return fail(format!("device {pos} has zero memory budget"));
        }
    }
    if doc.cluster.source_device >= m {
        return fail(format!(
            "source_device {} out of range",
            doc.cluster.source_device
        ));
    }
    if doc.cluster.bandwidth_bytes_per_sec.len() != m {
        return fail("bandwidth matrix row count != device count".into());
    }
    for (k, row) in doc.cluster.bandwidth_bytes_per_sec.iter().enumerate() {
        if row.len() != m {
            return fail(format!(
                "bandwidth matrix row {k} has {} entries",
                row.len()
            ));
        }
        for (j, &bw) in row.iter().enumerate() {
            if !bw.is_finite() || bw < 0.0 {
                return fail(format!(
                    "bandwidth[{k}][{j}] = {bw} is not a finite non-negative value"
                ));
            }
        }
    }
    for (pos, layer) in doc.model.layers.iter().enumerate() {
        if layer.index != pos {
            return fail(format!("layer at position {pos} has index {}", layer.index));
        }
        if layer.memory_bytes == 0 {
            return fail(format!("layer {pos} has zero memory_bytes"));
        }
        for (&dev, time) in &layer.compute_time {
            if dev >= m {
                return fail(format!("layer {pos} references unknown device {dev}"));
            }
            for t in [time.prefill_ms, time.decode_ms] {
                if !t.is_finite() || t < 0.0 {
                    return fail(format!(
                        "layer {pos} has a negative or non-finite time on device {dev}"
                    ));
                }
            }
        }
    }
    if doc.model.prompt_len == 0 || doc.model.gen_len == 0 {
        return fail("prompt_len and gen_len must be at least 1".into());
    }
    Ok(())
}

/// Re-index the source device to 0 by swapping it with device 0 everywhere.
fn normalize(doc: &mut ProfileDocument) {
    let s = doc.cluster.source_device;
    if s == 0 {
        return;
    }
    doc.cluster.devices.swap(0, s);
    for (pos, dev) in doc.cluster.devices.iter_mut().enumerate() {
        dev.index = pos;
    }
    doc.cluster.bandwidth_bytes_per_sec.swap(0, s);
    for row in &mut doc.cluster.bandwidth_bytes_per_sec {
        row.swap(0, s);
    }
    for layer in &mut doc.model.layers {
        let remapped: BTreeMap<DeviceId, LayerTime> = layer
            .compute_time
            .iter()
            .map(|(&dev, &t)| {
                let dev = if dev == 0 {
                    s
                } else if dev == s {
                    0
                } else {
                    dev
                };
                (dev, t)
            })
            .collect();
        layer.compute_time = remapped;
    }
    doc.cluster.source_device = 0;
}

/// One device to synthesize: a label, a relative speed (layer times scale
/// inversely with it), and a memory budget.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub label: String,
    pub speed: f64,
    pub memory_bytes: u64,
}

impl DeviceSpec {
    pub fn new(label: impl Into<String>, speed: f64, memory_bytes: u64) -> Self {
        Self {
            label: label.into(),
            speed,
            memory_bytes,
        }
    }
}

/// Link speeds for synthesis, in bits per second (file units).
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthSpec {
    UniformBitsPerSec(f64),
    MatrixBitsPerSec(Vec<Vec<f64>>),
}

/// Parameters for [`synthesize_profile`]. Defaults model a mid-size decoder
/// stack: 4 ms decode steps at speed 1, prefill 10x decode, 16 KiB
/// activations, 32 KiB KV growth per token per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpec {
    pub layers: usize,
    pub devices: Vec<DeviceSpec>,
    pub bandwidth: BandwidthSpec,
    pub seed: u64,
    pub prefill_factor: f64,
    pub base_decode_ms: f64,
    pub layer_memory_bytes: u64,
    pub activation_bytes: u64,
    pub kv_bytes_per_token: u64,
    pub token_return_bytes: u64,
    pub prompt_len: u64,
    pub gen_len: u64,
    /// Apply seeded ±10% per-layer time noise; the same multiplier is used
    /// on every device so relative device speeds stay exact.
    pub jitter: bool,
}

impl SynthesisSpec {
    pub fn new(
        layers: usize,
        devices: Vec<DeviceSpec>,
        bandwidth: BandwidthSpec,
        seed: u64,
    ) -> Self {
        Self {
            layers,
            devices,
            bandwidth,
            seed,
            prefill_factor: 10.0,
            base_decode_ms: 4.0,
            layer_memory_bytes: 875_000_000,
            activation_bytes: 16_384,
            kv_bytes_per_token: 32_768,
            token_return_bytes: 64,
            prompt_len: 32,
            gen_len: 96,
            jitter: true,
        }
    }
}

// SplitMix64: tiny deterministic generator, stable across platforms.
struct SplitMix64(u64);

impl SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Build a deterministic synthetic profile: per-layer decode times scale
/// inversely with each device's speed, prefill times are
/// `prefill_factor x decode`, and an optional seeded ±10% per-layer jitter
/// breaks ties between otherwise identical layers.
pub fn synthesize_profile(spec: &SynthesisSpec) -> Result<ProfileDocument, ProfileError> {
    if spec.layers == 0 {
        return Err(ProfileError::InvalidSpec(
            "layer count must be at least 1".into(),
        ));
    }
    if spec.devices.is_empty() {
        return Err(ProfileError::InvalidSpec(
            "at least one device required".into(),
        ));
    }
    for (i, dev) in spec.devices.iter().enumerate() {
        if dev.speed <= 0.0 || !dev.speed.is_finite() {
            return Err(ProfileError::InvalidSpec(format!(
                "device {i} speed must be positive"
            )));
        }
        if dev.memory_bytes == 0 {
            return Err(ProfileError::InvalidSpec(format!(
                "device {i} memory must be positive"
            )));
        }
    }
    if spec.prefill_factor <= 0.0
        || !spec.prefill_factor.is_finite()
        || spec.base_decode_ms <= 0.0
        || !spec.base_decode_ms.is_finite()
    {
        return Err(ProfileError::InvalidSpec(
            "prefill_factor and base_decode_ms must be positive".into(),
        ));
    }
    if spec.layer_memory_bytes == 0 {
        return Err(ProfileError::InvalidSpec(
            "layer_memory_bytes must be positive".into(),
        ));
    }
    if spec.prompt_len == 0 || spec.gen_len == 0 {
        return Err(ProfileError::InvalidSpec(
            "prompt_len and gen_len must be at least 1".into(),
        ));
    }
    let m = spec.devices.len();
    let bandwidth_bits: Vec<Vec<f64>> = match &spec.bandwidth {
        BandwidthSpec::UniformBitsPerSec(bits) => {
            if *bits <= 0.0 || !bits.is_finite() {
                return Err(ProfileError::InvalidSpec(
                    "bandwidth must be positive".into(),
                ));
            }
            (0..m)
                .map(|k| (0..m).map(|j| if k == j { 0.0 } else { *bits }).collect())
                .collect()
        }
        BandwidthSpec::MatrixBitsPerSec(matrix) => {
            if matrix.len() != m || matrix.iter().any(|row| row.len() != m) {
                return Err(ProfileError::InvalidSpec(
                    "bandwidth matrix must be MxM".into(),
                ));
            }
            for row in matrix {
                for &bits in row {
                    if !bits.is_finite() || bits < 0.0 {
                        return Err(ProfileError::InvalidSpec(
                            "bandwidth entries must be finite and non-negative".into(),
                        ));
                    }
                }
            }
            matrix.clone()
        }
    };

    let mut rng = SplitMix64(spec.seed);
    let layers = (0..spec.layers)
        .map(|i| {
            let jitter = if spec.jitter {
                0.9 + 0.2 * rng.next_unit()
            } else {
                1.0
            };
            let compute_time = spec
                .devices
                .iter()
                .enumerate()
                .map(|(d, dev)| {
                    let decode_ms = spec.base_decode_ms * jitter / dev.speed;
                    (
                        d,
                        LayerTime {
                            prefill_ms: spec.prefill_factor * decode_ms,
                            decode_ms,
                        },
                    )
                })
                .collect();
            LayerProfile {
                index: i,
                compute_time,
                activation_bytes: spec.activation_bytes,
                memory_bytes: spec.layer_memory_bytes,
                kv_bytes_per_token: spec.kv_bytes_per_token,
            }
        })
        .collect();

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "synthetic-v1".to_string());
    metadata.insert("seed".to_string(), spec.seed.to_string());
    metadata.insert("jitter".to_string(), spec.jitter.to_string());

    let doc = ProfileDocument {
        model: ModelProfile {
            layers,
            token_return_bytes: spec.token_return_bytes,
            prompt_len: spec.prompt_len,
            gen_len: spec.gen_len,
        },
        cluster: ClusterProfile {
            devices: spec
                .devices
                .iter()
                .enumerate()
                .map(|(d, dev)| DeviceProfile {
                    index: d,
                    memory_budget_bytes: dev.memory_bytes,
                    label: dev.label.clone(),
                })
                .collect(),
            bandwidth_bytes_per_sec: bandwidth_bits
                .iter()
                .map(|row| row.iter().map(|bits| bits / 8.0).collect())
                .collect(),
            source_device: 0,
        },
        metadata,
    };
    validate_document(&doc).map_err(|e| ProfileError::InvalidSpec(e.to_string()))?;
    Ok(doc)
}
