//! Frozen expectations for the f1 fixture. Every number asserted here was
//! worked out by hand from the profile (see the fixture's metadata) before
//! the planners and simulator ran against it.

use shardsim::model::{
    plan_bottleneck_ms, plan_total_latency_ms, segment_memory_bytes, validate_latency_plan,
    validate_throughput_plan, Plan, Stage, ThroughputPlan,
};
use shardsim::oracle::{brute_force_latency, brute_force_throughput};
use shardsim::planner::{plan_max_throughput, plan_min_latency, LatencyMode};
use shardsim::profile::{load_profile, ProfileDocument};
use shardsim::sim::{simulate, SimConfig};

fn fixture() -> ProfileDocument {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/f1.profile.json"
    );
    load_profile(path).expect("fixture loads")
}

#[test]
fn fixture_shape_and_units() {
    let doc = fixture();
    assert_eq!(doc.model.layer_count(), 4);
    assert_eq!(doc.cluster.device_count(), 3);
    // 80 Mbit/s in the file is 10 MB/s in memory.
    assert_eq!(doc.cluster.bandwidth_bytes_per_sec[0][1], 10_000_000.0);
    assert_eq!(
        segment_memory_bytes(&doc.model, 0, 4).unwrap(),
        5_000_000_000
    );
}

#[test]
fn hand_summed_assignment_cost() {
    let doc = fixture();
    let total = plan_total_latency_ms(&[0, 1, 1, 2], &doc.model, &doc.cluster).unwrap();
    assert_eq!(total, 620.0);
}

#[test]
fn latency_oracle_matches_hand_derivation() {
    let doc = fixture();
    let (value, assignment) = brute_force_latency(&doc.model, &doc.cluster).unwrap();
    assert_eq!(value, 122.0);
    assert_eq!(assignment, vec![0, 0, 1, 1]);
}

#[test]
fn latency_dp_agrees_with_oracle() {
    let doc = fixture();
    let plan = plan_min_latency(&doc.model, &doc.cluster, LatencyMode::Greedy).unwrap();
    assert_eq!(plan.predicted_latency_ms, 122.0);
    assert_eq!(plan.assignment, vec![0, 0, 1, 1]);
    assert!(validate_latency_plan(&plan.assignment, &doc.model, &doc.cluster).is_empty());
}

#[test]
fn unconstrained_mode_ignores_the_binding_budget() {
    // All four layers on the source device would be fastest (28 ms) but
    // exceed its 4 GB budget; only the unconstrained mode may choose it.
    let doc = fixture();
    let plan = plan_min_latency(&doc.model, &doc.cluster, LatencyMode::ExactUnconstrained).unwrap();
    assert_eq!(plan.assignment, vec![0, 0, 0, 0]);
    assert_eq!(plan.predicted_latency_ms, 28.0);
}

#[test]
fn throughput_oracle_matches_hand_derivation() {
    let doc = fixture();
    let (value, stages) = brute_force_throughput(&doc.model, &doc.cluster).unwrap();
    assert_eq!(value, 100.0);
    assert_eq!(
        stages,
        vec![
            Stage {
                layer_lo: 0,
                layer_hi: 2,
                device: 0
            },
            Stage {
                layer_lo: 2,
                layer_hi: 4,
                device: 1
            },
        ]
    );
}

#[test]
fn throughput_dp_agrees_with_oracle() {
    let doc = fixture();
    let plan = plan_max_throughput(&doc.model, &doc.cluster).unwrap();
    assert_eq!(plan.predicted_stage_time_ms, 100.0);
    assert_eq!(
        plan.stages,
        vec![
            Stage {
                layer_lo: 0,
                layer_hi: 2,
                device: 0
            },
            Stage {
                layer_lo: 2,
                layer_hi: 4,
                device: 1
            },
        ]
    );
    assert!(validate_throughput_plan(&plan.stages, &doc.model, &doc.cluster).is_empty());
    let recomputed = plan_bottleneck_ms(&plan.stages, &doc.model, &doc.cluster).unwrap();
    assert_eq!(recomputed, plan.predicted_stage_time_ms);
}

/// Two micro-batches through the optimal two-stage plan, both policies.
/// Stage times: prefill 21 / 10.5 ms, decode 7 / 3.5 ms; the boundary
/// transfer is 800 ms for prefill and 100 ms for decode; the token return
/// takes 1 ms. Walking the schedule by hand (the stage-0 device runs both
/// prefills back to back, the link serializes every transfer, and each
/// micro-batch waits for its own token — or for all tokens under the
/// barrier policy) gives makespans of 2225.5 ms and 2267 ms.
#[test]
fn two_stage_pipeline_matches_hand_schedule() {
    let doc = fixture();
    let plan = Plan::Throughput(ThroughputPlan {
        stages: vec![
            Stage {
                layer_lo: 0,
                layer_hi: 2,
                device: 0,
            },
            Stage {
                layer_lo: 2,
                layer_hi: 4,
                device: 1,
            },
        ],
        predicted_stage_time_ms: 100.0,
    });
    let mut config = SimConfig {
        micro_batches: 2,
        batch_per_micro: 1,
        prompt_len: None,
        gen_len: None,
        strategy: "no_bubbles".into(),
    };
    let no_bubbles = simulate(&plan, &doc.model, &doc.cluster, &config).unwrap();
    assert_eq!(no_bubbles.makespan_ms, 2225.5);
    assert_eq!(no_bubbles.tokens_total, 8);
    assert_eq!(no_bubbles.device_busy_ms[0], 84.0);
    assert_eq!(no_bubbles.device_busy_ms[1], 42.0);
    assert_eq!(no_bubbles.avg_token_latency_ms, 2225.5 / 8.0);

    config.strategy = "bubbles".into();
    let bubbles = simulate(&plan, &doc.model, &doc.cluster, &config).unwrap();
    assert_eq!(bubbles.makespan_ms, 2267.0);
    assert!(no_bubbles.makespan_ms < bubbles.makespan_ms);
    assert!(no_bubbles.throughput_tps > bubbles.throughput_tps);
    // Busy time is schedule-independent.
    assert_eq!(bubbles.device_busy_ms, no_bubbles.device_busy_ms);
}
