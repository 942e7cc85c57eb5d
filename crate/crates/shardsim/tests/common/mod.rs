//! Shared helpers for integration tests: a deterministic RNG and random
//! instance generators.

use std::collections::BTreeMap;

use shardsim::model::{ClusterProfile, DeviceProfile, LayerProfile, LayerTime, ModelProfile};

pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

pub struct InstanceOptions {
    /// Budgets far above the total model size when true; tight otherwise.
    pub slack_memory: bool,
    /// Probability that a non-source device lacks a layer's profile entry.
    pub drop_entry_p: f64,
    /// Probability that a non-essential directed link is down.
    pub dead_link_p: f64,
}

impl Default for InstanceOptions {
    fn default() -> Self {
        Self {
            slack_memory: true,
            drop_entry_p: 0.1,
            dead_link_p: 0.1,
        }
    }
}

/// Random profile with `n` layers over `m` devices. The source device always
/// supports every layer, so slack-memory instances are always feasible.
pub fn random_instance(
    rng: &mut Rng,
    n: usize,
    m: usize,
    options: &InstanceOptions,
) -> (ModelProfile, ClusterProfile) {
    let layer_memory: Vec<u64> = (0..n)
        .map(|_| rng.range(50, 400) as u64 * 1_000_000)
        .collect();
    let total: u64 = layer_memory.iter().sum();

    let layers = (0..n)
        .map(|i| {
            let mut compute_time = BTreeMap::new();
            for d in 0..m {
                if d != 0 && rng.chance(options.drop_entry_p) {
                    continue;
                }
                let decode = rng.range_f64(0.5, 10.0);
                let prefill = decode * rng.range_f64(1.0, 12.0);
                compute_time.insert(
                    d,
                    LayerTime {
                        prefill_ms: prefill,
                        decode_ms: decode,
                    },
                );
            }
            LayerProfile {
                index: i,
                compute_time,
                activation_bytes: rng.range(1_000, 5_000_000) as u64,
                memory_bytes: layer_memory[i],
                kv_bytes_per_token: rng.range(0, 50_000) as u64,
            }
        })
        .collect();

    let devices = (0..m)
        .map(|d| {
            let memory_budget_bytes = if options.slack_memory {
                total * 10
            } else {
                // Tight: each device holds roughly a third to all of the
                // model; layer 0 always fits the source device.
                let budget = (total as f64 * rng.range_f64(0.3, 1.1)) as u64;
                if d == 0 {
                    budget.max(layer_memory[0])
                } else {
                    budget
                }
            };
            DeviceProfile {
                index: d,
                memory_budget_bytes,
                label: format!("d{d}"),
            }
        })
        .collect();

    let bandwidth_bytes_per_sec = (0..m)
        .map(|k| {
            (0..m)
                .map(|j| {
                    if k == j || rng.chance(options.dead_link_p) {
                        0.0
                    } else {
                        rng.range_f64(1e5, 1e8)
                    }
                })
                .collect()
        })
        .collect();

    let model = ModelProfile {
        layers,
        token_return_bytes: rng.range(0, 4096) as u64,
        prompt_len: rng.range(1, 64) as u64,
        gen_len: rng.range(1, 32) as u64,
    };
    let cluster = ClusterProfile {
        devices,
        bandwidth_bytes_per_sec,
        source_device: 0,
    };
    (model, cluster)
}

#[allow(dead_code)] // not every test binary uses every helper
pub fn assert_close(actual: f64, expected: f64, rel: f64) {
    let scale = expected.abs().max(actual.abs()).max(1e-12);
    assert!(
        (actual - expected).abs() <= rel * scale,
        "expected {expected}, got {actual} (rel {rel})"
    );
}
