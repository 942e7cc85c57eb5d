//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers (run with `--nocapture` to see them). Criterion 10
//! (CLI byte-determinism) lives in the CLI crate's acceptance suite.

mod common;

use common::{random_instance, InstanceOptions, Rng};
use shardsim::model::{
    validate_latency_plan, validate_throughput_plan, ClusterProfile, DeviceProfile, LayerProfile,
    LayerTime, ModelProfile, Plan, Stage, ThroughputPlan,
};
use shardsim::oracle::{brute_force_latency, brute_force_throughput};
use shardsim::planner::{plan_max_throughput, plan_min_latency, LatencyMode, PlanError};
use shardsim::profile::{synthesize_profile, BandwidthSpec, DeviceSpec, SynthesisSpec};
use shardsim::sim::{max_feasible_batch, simulate, SimConfig};

const REL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL * a.abs().max(b.abs()).max(1e-12)
}

/// Criterion 1: latency planner == oracle on 500 slack-memory instances.
#[test]
fn c1_latency_dp_oracle_equivalence() {
    let mut rng = Rng::new(0x0001);
    let options = InstanceOptions {
        slack_memory: true,
        ..Default::default()
    };
    for case in 0..500 {
        let n = rng.range(1, 8);
        let m = rng.range(1, 4);
        let (model, cluster) = random_instance(&mut rng, n, m, &options);
        let (oracle_value, _) = brute_force_latency(&model, &cluster).unwrap();
        for mode in [LatencyMode::Greedy, LatencyMode::ExactUnconstrained] {
            let plan = plan_min_latency(&model, &cluster, mode).unwrap();
            assert!(
                close(plan.predicted_latency_ms, oracle_value),
                "case {case} ({mode:?}): dp {} vs oracle {oracle_value}",
                plan.predicted_latency_ms
            );
        }
    }
    println!("PASS criterion 1: latency DP == oracle on 500 slack-memory instances (rel 1e-9)");
}

/// Criterion 2: throughput planner == oracle on 500 instances, memory
/// binding in at least half.
#[test]
fn c2_throughput_dp_oracle_equivalence() {
    let mut rng = Rng::new(0x0002);
    let mut active = 0usize;
    let mut feasible = 0usize;
    for case in 0..500 {
        let tight = case % 5 != 0; // four fifths tight, one fifth slack
        let (n, m) = if tight {
            (rng.range(3, 10), rng.range(2, 4))
        } else {
            (rng.range(1, 10), rng.range(1, 4))
        };
        let options = InstanceOptions {
            slack_memory: !tight,
            ..Default::default()
        };
        let (mut model, mut cluster) = random_instance(&mut rng, n, m, &options);
        if tight {
            // Shrink budgets until they bind: each device holds only part
            // of the model (but layer 0 still fits the source device).
            let total = model.total_memory_bytes();
            for (d, dev) in cluster.devices.iter_mut().enumerate() {
                let budget = (total as f64 * rng.range_f64(0.25, 0.7)) as u64;
                dev.memory_budget_bytes = if d == 0 {
                    budget.max(model.layers[0].memory_bytes)
                } else {
                    budget
                };
            }
            model.token_return_bytes = rng.range(0, 4096) as u64;
        }

        // Memory counts as active when lifting every budget changes the
        // outcome (value or feasibility).
        let mut roomy = cluster.clone();
        for dev in &mut roomy.devices {
            dev.memory_budget_bytes = model.total_memory_bytes() * 10;
        }
        let unconstrained = brute_force_throughput(&model, &roomy).map(|(v, _)| v);
        let constrained = brute_force_throughput(&model, &cluster);
        match (&constrained, &unconstrained) {
            (Ok((a, _)), Ok(b)) if close(*a, *b) => {}
            _ => active += 1,
        }

        match (plan_max_throughput(&model, &cluster), constrained) {
            (Ok(plan), Ok((oracle_value, _))) => {
                feasible += 1;
                assert!(
                    close(plan.predicted_stage_time_ms, oracle_value),
                    "case {case}: dp {} vs oracle {oracle_value}",
                    plan.predicted_stage_time_ms
                );
            }
            (Err(PlanError::Infeasible(_)), Err(_)) => {}
            (p, o) => panic!(
                "case {case}: feasibility disagreement (planner ok={}, oracle ok={})",
                p.is_ok(),
                o.is_ok()
            ),
        }
    }
    assert!(
        active >= 250,
        "memory active in only {active}/500 instances"
    );
    println!(
        "PASS criterion 2: throughput DP == oracle on 500 instances \
         ({feasible} feasible, memory active in {active})"
    );
}

/// Criterion 3: with binding memory the latency planner stays feasible and
/// never beats the oracle; the mean gap is reported, not thresholded.
#[test]
fn c3_constrained_latency_heuristic() {
    let mut rng = Rng::new(0x0003);
    let options = InstanceOptions {
        slack_memory: false,
        ..Default::default()
    };
    let mut gaps = Vec::new();
    let mut planner_misses = 0usize;
    let mut both_infeasible = 0usize;
    for case in 0..300 {
        let n = rng.range(2, 8);
        let m = rng.range(2, 4);
        let (model, cluster) = random_instance(&mut rng, n, m, &options);
        let oracle = brute_force_latency(&model, &cluster);
        match plan_min_latency(&model, &cluster, LatencyMode::Greedy) {
            Ok(plan) => {
                assert!(
                    validate_latency_plan(&plan.assignment, &model, &cluster).is_empty(),
                    "case {case}: infeasible plan returned"
                );
                let (oracle_value, _) = oracle.expect("planner feasible implies oracle feasible");
                assert!(
                    plan.predicted_latency_ms >= oracle_value - REL * oracle_value,
                    "case {case}: dp {} beat oracle {oracle_value}",
                    plan.predicted_latency_ms
                );
                gaps.push((plan.predicted_latency_ms - oracle_value) / oracle_value);
            }
            Err(_) => {
                if oracle.is_ok() {
                    planner_misses += 1;
                } else {
                    both_infeasible += 1;
                }
            }
        }
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
    println!(
        "PASS criterion 3: constrained latency heuristic feasible and bounded on {} plans; \
         mean gap {:.6} (max {:.6}), planner missed {planner_misses} feasible instances, \
         {both_infeasible} infeasible for both",
        gaps.len(),
        mean_gap,
        gaps.iter().cloned().fold(0.0, f64::max),
    );
}

/// Criterion 4: every plan from either planner starts on device 0.
#[test]
fn c4_privacy_constraint() {
    let mut rng = Rng::new(0x0004);
    let mut latency_plans = 0usize;
    let mut staged_plans = 0usize;
    for case in 0..400 {
        let n = rng.range(1, 8);
        let m = rng.range(1, 4);
        let options = InstanceOptions {
            slack_memory: case % 2 == 0,
            ..Default::default()
        };
        let (model, cluster) = random_instance(&mut rng, n, m, &options);
        if let Ok(plan) = plan_min_latency(&model, &cluster, LatencyMode::Greedy) {
            assert_eq!(
                plan.assignment[0], 0,
                "case {case}: latency plan leaks layer 0"
            );
            latency_plans += 1;
        }
        if let Ok(plan) = plan_max_throughput(&model, &cluster) {
            assert_eq!(plan.stages[0].device, 0, "case {case}: stage 0 leaks");
            assert_eq!(plan.stages[0].layer_lo, 0);
            staged_plans += 1;
        }
    }
    println!(
        "PASS criterion 4: layer/stage 0 on device 0 in 100% of \
         {latency_plans} latency + {staged_plans} staged plans"
    );
}

/// Criterion 5: the no-bubbles schedule never loses, and with G >= 4 over a
/// real pipeline it strictly wins at least 90% of the time.
#[test]
fn c5_no_bubbles_dominance() {
    let mut rng = Rng::new(0x0005);
    let options = InstanceOptions {
        slack_memory: true,
        drop_entry_p: 0.0,
        dead_link_p: 0.0,
    };
    let mut runs = 0usize;
    let mut eligible = 0usize;
    let mut strict = 0usize;
    while runs < 200 {
        let n = rng.range(2, 8);
        let m = rng.range(2, 4);
        let (mut model, cluster) = random_instance(&mut rng, n, m, &options);
        model.gen_len = rng.range(2, 10) as u64;
        model.prompt_len = rng.range(1, 16) as u64;
        let Ok(plan) = plan_max_throughput(&model, &cluster) else {
            continue;
        };
        let stages = plan.stages.len();
        let plan = Plan::Throughput(plan);
        let config = SimConfig {
            micro_batches: rng.range(1, 6),
            batch_per_micro: rng.range(1, 3) as u64,
            prompt_len: None,
            gen_len: None,
            strategy: "no_bubbles".into(),
        };
        let nb = simulate(&plan, &model, &cluster, &config).unwrap();
        let bb = simulate(
            &plan,
            &model,
            &cluster,
            &SimConfig {
                strategy: "bubbles".into(),
                ..config.clone()
            },
        )
        .unwrap();
        assert!(
            nb.makespan_ms <= bb.makespan_ms * (1.0 + REL),
            "no_bubbles lost: {} vs {}",
            nb.makespan_ms,
            bb.makespan_ms
        );
        runs += 1;
        if config.micro_batches >= 4 && stages >= 2 {
            eligible += 1;
            if nb.makespan_ms < bb.makespan_ms * (1.0 - 1e-12) {
                strict += 1;
            }
        }
    }
    assert!(
        eligible >= 30,
        "only {eligible} eligible configurations sampled"
    );
    let ratio = strict as f64 / eligible as f64;
    assert!(ratio >= 0.9, "strict wins only {strict}/{eligible}");
    println!(
        "PASS criterion 5: no_bubbles <= bubbles in 200/200 runs; \
         strict in {strict}/{eligible} (>= 90%) of G>=4 multi-stage runs"
    );
}

/// Criterion 6: simulated steady-state throughput of a two-stage zero-comm
/// pipeline approaches one batch per bottleneck interval.
#[test]
fn c6_steady_state_consistency() {
    for (a, b) in [(3.0f64, 5.0f64), (5.0, 3.0), (2.0, 2.0), (1.0, 7.5)] {
        let layers = vec![
            LayerProfile {
                index: 0,
                compute_time: [
                    (
                        0,
                        LayerTime {
                            prefill_ms: a,
                            decode_ms: a,
                        },
                    ),
                    (
                        1,
                        LayerTime {
                            prefill_ms: 1e9,
                            decode_ms: 1e9,
                        },
                    ),
                ]
                .into(),
                activation_bytes: 0,
                memory_bytes: 1,
                kv_bytes_per_token: 0,
            },
            LayerProfile {
                index: 1,
                compute_time: [
                    (
                        0,
                        LayerTime {
                            prefill_ms: 1e9,
                            decode_ms: 1e9,
                        },
                    ),
                    (
                        1,
                        LayerTime {
                            prefill_ms: b,
                            decode_ms: b,
                        },
                    ),
                ]
                .into(),
                activation_bytes: 0,
                memory_bytes: 1,
                kv_bytes_per_token: 0,
            },
        ];
        let model = ModelProfile {
            layers,
            token_return_bytes: 0,
            prompt_len: 4,
            gen_len: 64,
        };
        let cluster = ClusterProfile {
            devices: (0..2)
                .map(|i| DeviceProfile {
                    index: i,
                    memory_budget_bytes: 1 << 30,
                    label: format!("d{i}"),
                })
                .collect(),
            bandwidth_bytes_per_sec: vec![vec![0.0, 1e9], vec![1e9, 0.0]],
            source_device: 0,
        };
        let plan = Plan::Throughput(ThroughputPlan {
            stages: vec![
                Stage {
                    layer_lo: 0,
                    layer_hi: 1,
                    device: 0,
                },
                Stage {
                    layer_lo: 1,
                    layer_hi: 2,
                    device: 1,
                },
            ],
            predicted_stage_time_ms: a.max(b),
        });
        let config = SimConfig {
            micro_batches: 8,
            batch_per_micro: 1,
            prompt_len: None,
            gen_len: Some(64),
            strategy: "no_bubbles".into(),
        };
        let result = simulate(&plan, &model, &cluster, &config).unwrap();
        let ideal = 1000.0 / a.max(b);
        let deviation = (result.throughput_tps - ideal).abs() / ideal;
        assert!(
            deviation <= 0.05,
            "(a={a}, b={b}): {} tps vs ideal {ideal} ({:.2}% off)",
            result.throughput_tps,
            deviation * 100.0
        );
    }
    println!("PASS criterion 6: 2-stage steady-state throughput within 5% of the bottleneck rate");
}

/// Criterion 7: the 1→50 Mbps sweep on a source+cloud pair is non-increasing,
/// all-local at 1 Mbps, and saturates (early deltas dwarf late ones).
#[test]
fn c7_bandwidth_sweep_trend() {
    let mbps = [1.0, 5.0, 10.0, 25.0, 50.0];
    let mut latencies = Vec::new();
    let mut first_plan = None;
    for bw in mbps {
        let mut spec = SynthesisSpec::new(
            32,
            vec![
                DeviceSpec::new("edge", 1.0, 64_000_000_000),
                DeviceSpec::new("cloud", 16.0, 64_000_000_000),
            ],
            BandwidthSpec::UniformBitsPerSec(bw * 1e6),
            7,
        );
        // Whole-prompt activations: at 1 Mbps a single hop costs ~4 s,
        // far above the ~0.7 s the fast device could save.
        spec.activation_bytes = 524_288;
        let doc = synthesize_profile(&spec).unwrap();
        let plan = plan_min_latency(&doc.model, &doc.cluster, LatencyMode::Greedy).unwrap();
        if first_plan.is_none() {
            first_plan = Some(plan.assignment.clone());
        }
        latencies.push(plan.predicted_latency_ms);
    }
    for pair in latencies.windows(2) {
        assert!(
            pair[1] <= pair[0] * (1.0 + REL),
            "latency increased with bandwidth: {pair:?}"
        );
    }
    let local = first_plan.unwrap();
    assert!(
        local.iter().all(|&d| d == 0),
        "1 Mbps plan is not all-local: {local:?}"
    );
    let early = latencies[0] - latencies[2]; // 1 -> 10 Mbps
    let late = latencies[3] - latencies[4]; // 25 -> 50 Mbps
    assert!(
        early > late,
        "no saturation: delta(1->10) = {early:.3} vs delta(25->50) = {late:.3}"
    );
    println!(
        "PASS criterion 7: sweep latencies {:?} ms non-increasing, all-local at 1 Mbps, \
         delta(1->10)={early:.3} >> delta(25->50)={late:.3}",
        latencies
            .iter()
            .map(|v| (v * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
}

/// Criterion 8: a 28 GB model is out of memory on a 16 GB device, fits a
/// 32 GB device, and pipelines across {32, 16, 24} GB.
#[test]
fn c8_memory_feasibility_realism() {
    let layer_bytes = 875_000_000u64; // 32 layers x 875 MB = 28 GB
    let single = |budget: u64| -> SynthesisSpec {
        let mut spec = SynthesisSpec::new(
            32,
            vec![DeviceSpec::new("only", 1.0, budget)],
            BandwidthSpec::UniformBitsPerSec(1e9),
            1,
        );
        spec.layer_memory_bytes = layer_bytes;
        spec
    };
    let doc32 = synthesize_profile(&single(32_000_000_000)).unwrap();
    assert!(plan_min_latency(&doc32.model, &doc32.cluster, LatencyMode::Greedy).is_ok());

    let doc16 = synthesize_profile(&single(16_000_000_000)).unwrap();
    assert!(matches!(
        plan_min_latency(&doc16.model, &doc16.cluster, LatencyMode::Greedy),
        Err(PlanError::Infeasible(_))
    ));
    assert!(matches!(
        plan_max_throughput(&doc16.model, &doc16.cluster),
        Err(PlanError::Infeasible(_))
    ));

    let mut multi = SynthesisSpec::new(
        32,
        vec![
            DeviceSpec::new("agx", 1.0, 32_000_000_000),
            DeviceSpec::new("nx", 0.6, 16_000_000_000),
            DeviceSpec::new("srv", 10.0, 24_000_000_000),
        ],
        BandwidthSpec::UniformBitsPerSec(1e9),
        1,
    );
    multi.layer_memory_bytes = layer_bytes;
    let doc = synthesize_profile(&multi).unwrap();
    let plan = plan_max_throughput(&doc.model, &doc.cluster).unwrap();
    assert!(validate_throughput_plan(&plan.stages, &doc.model, &doc.cluster).is_empty());
    assert!(plan.stages.len() >= 2);
    println!(
        "PASS criterion 8: 28 GB model infeasible on 16 GB, feasible on 32 GB, \
         pipelined over 3 devices as {} stages",
        plan.stages.len()
    );
}

/// Criterion 9: spreading layers over more devices never shrinks — and on a
/// constructed instance strictly grows — the feasible batch.
#[test]
fn c9_batch_monotonicity() {
    let layers: Vec<LayerProfile> = (0..8)
        .map(|i| LayerProfile {
            index: i,
            compute_time: (0..4)
                .map(|d| {
                    (
                        d,
                        LayerTime {
                            prefill_ms: 1.0,
                            decode_ms: 1.0,
                        },
                    )
                })
                .collect(),
            activation_bytes: 1000,
            memory_bytes: 500_000_000,
            kv_bytes_per_token: 100_000,
        })
        .collect();
    let model = ModelProfile {
        layers,
        token_return_bytes: 64,
        prompt_len: 6,
        gen_len: 4,
    };
    let cluster = ClusterProfile {
        devices: (0..4)
            .map(|i| DeviceProfile {
                index: i,
                memory_budget_bytes: 2_500_000_000,
                label: format!("d{i}"),
            })
            .collect(),
        bandwidth_bytes_per_sec: (0..4)
            .map(|k| (0..4).map(|j| if k == j { 0.0 } else { 1e8 }).collect())
            .collect(),
        source_device: 0,
    };
    let stages = |cuts: &[(usize, usize, usize)]| {
        Plan::Throughput(ThroughputPlan {
            stages: cuts
                .iter()
                .map(|&(lo, hi, d)| Stage {
                    layer_lo: lo,
                    layer_hi: hi,
                    device: d,
                })
                .collect(),
            predicted_stage_time_ms: 0.0,
        })
    };
    let two = stages(&[(0, 4, 0), (4, 8, 1)]);
    let four = stages(&[(0, 2, 0), (2, 4, 1), (4, 6, 2), (6, 8, 3)]);
    let b2 = max_feasible_batch(&two, &model, &cluster, 6, 4);
    let b4 = max_feasible_batch(&four, &model, &cluster, 6, 4);
    assert!(b4 > b2, "spreading did not help: {b4} <= {b2}");

    // Budget growth is monotone too.
    let mut roomier = cluster.clone();
    for dev in &mut roomier.devices {
        dev.memory_budget_bytes *= 2;
    }
    assert!(max_feasible_batch(&two, &model, &roomier, 6, 4) >= b2);
    println!("PASS criterion 9: feasible batch grows from {b2} (2 devices) to {b4} (4 devices)");
}
