//! Plan documents: the JSON files the CLI writes after planning and the
//! simulator reads back, with the per-transition cost breakdown used by
//! the plan table output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{
    comm_time_ms, plan_bottleneck_ms, plan_total_latency_ms, segment_compute_ms,
    segment_memory_bytes, ClusterProfile, CostError, LatencyPlan, ModelProfile, Plan, Stage,
    ThroughputPlan,
};
use crate::profile::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCostRow {
    pub layer: usize,
    pub device: usize,
    pub compute_ms: f64,
    /// Transfer of the previous layer's activation onto this layer's device.
    pub comm_in_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRow {
    pub layer_lo: usize,
    pub layer_hi: usize,
    pub device: usize,
    pub compute_ms: f64,
    pub comm_in_ms: f64,
    pub memory_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlanDocument {
    Latency {
        schema_version: String,
        mode: String,
        assignment: Vec<usize>,
        predicted_latency_ms: f64,
        per_layer: Vec<LayerCostRow>,
        token_return_ms: f64,
    },
    Throughput {
        schema_version: String,
        stages: Vec<StageRow>,
        predicted_stage_time_ms: f64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum PlanDocError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

impl PlanDocument {
    /// Annotate a plan with its per-transition costs.
    pub fn from_plan(
        plan: &Plan,
        model: &ModelProfile,
        cluster: &ClusterProfile,
        mode: &str,
    ) -> Result<Self, PlanDocError> {
        match plan {
            Plan::Latency(p) => {
                let n = model.layer_count();
                let mut per_layer = Vec::with_capacity(n);
                for (i, &device) in p.assignment.iter().enumerate() {
                    let compute_ms = model.layers[i].effective_ms(device)?;
                    let comm_in_ms = if i == 0 {
                        0.0
                    } else {
                        comm_time_ms(
                            model.layers[i - 1].activation_bytes,
                            p.assignment[i - 1],
                            device,
                            cluster,
                        )?
                    };
                    per_layer.push(LayerCostRow {
                        layer: i,
                        device,
                        compute_ms,
                        comm_in_ms,
                    });
                }
                let token_return_ms = comm_time_ms(
                    model.token_return_bytes,
                    p.assignment[n - 1],
                    cluster.source_device,
                    cluster,
                )?;
                Ok(PlanDocument::Latency {
                    schema_version: SCHEMA_VERSION.to_string(),
                    mode: mode.to_string(),
                    assignment: p.assignment.clone(),
                    predicted_latency_ms: p.predicted_latency_ms,
                    per_layer,
                    token_return_ms,
                })
            }
            Plan::Throughput(p) => {
                let mut rows = Vec::with_capacity(p.stages.len());
                for (s, stage) in p.stages.iter().enumerate() {
                    let compute_ms =
                        segment_compute_ms(model, stage.layer_lo, stage.layer_hi, stage.device)?;
                    let comm_in_ms = if s == 0 {
                        0.0
                    } else {
                        comm_time_ms(
                            model.layers[stage.layer_lo - 1].activation_bytes,
                            p.stages[s - 1].device,
                            stage.device,
                            cluster,
                        )?
                    };
                    let memory_bytes = segment_memory_bytes(model, stage.layer_lo, stage.layer_hi)?;
                    rows.push(StageRow {
                        layer_lo: stage.layer_lo,
                        layer_hi: stage.layer_hi,
                        device: stage.device,
                        compute_ms,
                        comm_in_ms,
                        memory_bytes,
                    });
                }
                Ok(PlanDocument::Throughput {
                    schema_version: SCHEMA_VERSION.to_string(),
                    stages: rows,
                    predicted_stage_time_ms: p.predicted_stage_time_ms,
                })
            }
        }
    }

    pub fn to_plan(&self) -> Plan {
        match self {
            PlanDocument::Latency {
                assignment,
                predicted_latency_ms,
                ..
            } => Plan::Latency(LatencyPlan {
                assignment: assignment.clone(),
                predicted_latency_ms: *predicted_latency_ms,
            }),
            PlanDocument::Throughput {
                stages,
                predicted_stage_time_ms,
                ..
            } => Plan::Throughput(ThroughputPlan {
                stages: stages
                    .iter()
                    .map(|r| Stage {
                        layer_lo: r.layer_lo,
                        layer_hi: r.layer_hi,
                        device: r.device,
                    })
                    .collect(),
                predicted_stage_time_ms: *predicted_stage_time_ms,
            }),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PlanDocError> {
        let mut text = serde_json::to_string_pretty(self).expect("plan serialization");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanDocError> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| PlanDocError::Parse(e.to_string()))?;
        serde_json::from_value(value).map_err(|e| PlanDocError::Schema(e.to_string()))
    }

    /// Stable content digest (FNV-1a over the serialized document), used to
    /// tag exported timelines with the plan they came from.
    pub fn content_hash(&self) -> String {
        fnv1a_hex(&serde_json::to_string(self).expect("plan serialization"))
    }
}

pub(crate) fn fnv1a_hex(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Recompute the predicted metric of a plan from the profile; used by the
/// validate command to cross-check stored plan files.
pub fn recompute_metric(
    plan: &Plan,
    model: &ModelProfile,
    cluster: &ClusterProfile,
) -> Result<f64, CostError> {
    match plan {
        Plan::Latency(p) => plan_total_latency_ms(&p.assignment, model, cluster),
        Plan::Throughput(p) => plan_bottleneck_ms(&p.stages, model, cluster),
    }
}
