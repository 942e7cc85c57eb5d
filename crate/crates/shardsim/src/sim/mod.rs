//! Discrete-event replay of a plan through prefill + autoregressive
//! generation with micro-batching.
//!
//! Task model, per (stage, micro-batch, iteration): a compute task whose
//! duration is the stage's summed prefill times (iteration 0) or decode
//! times (later iterations); an inter-stage transfer carrying the boundary
//! activation (scaled by the per-micro-batch request count, and by the
//! prompt length for the prefill iteration); and after the last stage a
//! token return to the source. Devices run one compute task at a time and
//! pick the waiting task with the smallest (iteration, micro-batch).
//! Transfers occupy directed links, not devices, so a device may compute
//! while sending; each link carries one transfer at a time. Iteration t of
//! a micro-batch can only start at stage 0 once its token for iteration
//! t-1 is back at the source — and under the `bubbles` policy once *every*
//! micro-batch's token is back.
//!
//! The generated-token count equals `gen_len`: prefill emits token 1, so
//! there are `gen_len - 1` decode iterations.

pub mod schedule;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use crate::model::{
    comm_time_ms, validate_plan, ClusterProfile, CostError, DeviceId, ModelProfile, Plan, Stage,
};
use crate::plandoc::fnv1a_hex;

/// Batch bound reported for models with no KV growth at all.
pub const BATCH_CAP: u64 = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of micro-batches G.
    pub micro_batches: usize,
    /// Requests per micro-batch b.
    pub batch_per_micro: u64,
    /// Override of the profile's prompt length.
    pub prompt_len: Option<u64>,
    /// Override of the profile's generation length.
    pub gen_len: Option<u64>,
    /// Execution policy name; see [`schedule`].
    pub strategy: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            micro_batches: 1,
            batch_per_micro: 1,
            prompt_len: None,
            gen_len: None,
            strategy: "no_bubbles".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prefill,
    Decode,
    Comm,
    Return,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
            Phase::Comm => "comm",
            Phase::Return => "return",
        }
    }
}

/// One scheduled interval. Compute events carry the executing device;
/// transfer events carry the sending device. Zero-length transfers
/// (same-device hops) are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEvent {
    pub device: DeviceId,
    pub micro_batch: usize,
    pub iteration: usize,
    pub phase: Phase,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Completion time of the last token return.
    pub makespan_ms: f64,
    /// G x b x gen_len.
    pub tokens_total: u64,
    pub throughput_tps: f64,
    /// Mean interval between generated tokens at the source
    /// (makespan / tokens_total).
    pub avg_token_latency_ms: f64,
    /// Summed compute time per device.
    pub device_busy_ms: Vec<f64>,
    pub timeline: Vec<TimelineEvent>,
    /// Content hash of the simulated plan, echoed in timeline exports.
    pub plan_digest: String,
    pub config: SimConfig,
}

/// Pre-allocated memory per device for a plan: resident weights plus KV
/// cache for every in-flight request over the full sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct KvAccount {
    pub per_device_bytes: Vec<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(
        "KV pre-allocation needs {required_bytes} bytes on device {device} (budget {budget_bytes})"
    )]
    KvOverflow {
        device: DeviceId,
        required_bytes: u64,
        budget_bytes: u64,
    },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Per-layer hosting device of either plan kind.
fn layer_devices(plan: &Plan, layer_count: usize) -> Result<Vec<DeviceId>, SimError> {
    match plan {
        Plan::Latency(p) => {
            if p.assignment.len() != layer_count {
                return Err(SimError::InvalidPlan("assignment length mismatch".into()));
            }
            Ok(p.assignment.clone())
        }
        Plan::Throughput(p) => {
            let mut out = Vec::with_capacity(layer_count);
            for stage in &p.stages {
                for _ in stage.layer_lo..stage.layer_hi {
                    out.push(stage.device);
                }
            }
            if out.len() != layer_count {
                return Err(SimError::InvalidPlan(
                    "stages do not cover the model".into(),
                ));
            }
            Ok(out)
        }
    }
}

/// Weights + KV pre-allocation per device for `total_batch` in-flight
/// requests over `prompt_len + gen_len` tokens.
pub fn kv_account(
    plan: &Plan,
    model: &ModelProfile,
    cluster: &ClusterProfile,
    total_batch: u64,
    prompt_len: u64,
    gen_len: u64,
) -> Result<KvAccount, SimError> {
    let devices = layer_devices(plan, model.layer_count())?;
    let mut per_device_bytes = vec![0u64; cluster.device_count()];
    let tokens = prompt_len + gen_len;
    for (layer, &dev) in model.layers.iter().zip(&devices) {
        per_device_bytes[dev] +=
            layer.memory_bytes + total_batch * tokens * layer.kv_bytes_per_token;
    }
    Ok(KvAccount { per_device_bytes })
}

/// Largest total in-flight batch whose weights + KV pre-allocation fit every
/// hosting device, capped at [`BATCH_CAP`] for models without KV growth.
/// Returns 0 when even a single request does not fit.
pub fn max_feasible_batch(
    plan: &Plan,
    model: &ModelProfile,
    cluster: &ClusterProfile,
    prompt_len: u64,
    gen_len: u64,
) -> u64 {
    let Ok(devices) = layer_devices(plan, model.layer_count()) else {
        return 0;
    };
    let m = cluster.device_count();
    let mut weights = vec![0u64; m];
    let mut kv_rate = vec![0u64; m];
    for (layer, &dev) in model.layers.iter().zip(&devices) {
        if dev >= m {
            return 0;
        }
        weights[dev] += layer.memory_bytes;
        kv_rate[dev] += layer.kv_bytes_per_token;
    }
    let tokens = prompt_len + gen_len;
    let mut best = BATCH_CAP;
    for dev in 0..m {
        let budget = cluster.devices[dev].memory_budget_bytes;
        if weights[dev] > budget {
            return 0;
        }
        let per_request = kv_rate[dev] * tokens;
        if let Some(bound) = (budget - weights[dev]).checked_div(per_request) {
            best = best.min(bound);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskKind {
    Compute,
    Comm,
    Return,
}

struct Task {
    kind: TaskKind,
    stage: usize,
    micro_batch: usize,
    iteration: usize,
    duration: f64,
    resource: Option<usize>,
    deps_remaining: usize,
    deps: Vec<usize>,
    dependents: Vec<usize>,
    ready_at: f64,
    start: f64,
    end: f64,
}

struct ResourceState {
    free_at: f64,
    waiting: Vec<usize>,
}

struct QueuedEvent {
    time: f64,
    iteration: usize,
    micro_batch: usize,
    stage: usize,
    kind_order: u8,
    task: usize,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.iteration.cmp(&other.iteration))
            .then(self.micro_batch.cmp(&other.micro_batch))
            .then(self.stage.cmp(&other.stage))
            .then(self.kind_order.cmp(&other.kind_order))
            .then(self.task.cmp(&other.task))
    }
}

/// Replay `plan` under `config` and report timing, throughput, and
/// per-device utilization.
pub fn simulate(
    plan: &Plan,
    model: &ModelProfile,
    cluster: &ClusterProfile,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    let policy = schedule::by_name(&config.strategy)
        .ok_or_else(|| SimError::UnknownStrategy(config.strategy.clone()))?;
    if config.micro_batches == 0 || config.batch_per_micro == 0 {
        return Err(SimError::InvalidConfig(
            "micro_batches and batch_per_micro must be at least 1".into(),
        ));
    }
    let prompt_len = config.prompt_len.unwrap_or(model.prompt_len);
    let gen_len = config.gen_len.unwrap_or(model.gen_len);
    if prompt_len == 0 || gen_len == 0 {
        return Err(SimError::InvalidConfig(
            "prompt_len and gen_len must be at least 1".into(),
        ));
    }

    let violations = validate_plan(plan, model, cluster);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(SimError::InvalidPlan(text.join("; ")));
    }

    let micro_batches = config.micro_batches;
    let batch = config.batch_per_micro;
    let stages = stages_of_plan(plan, micro_batches)?;
    let stage_count = stages.len();
    let device_count = cluster.device_count();

    // KV pre-allocation must fit before anything runs.
    let account = kv_account(
        plan,
        model,
        cluster,
        micro_batches as u64 * batch,
        prompt_len,
        gen_len,
    )?;
    for (dev, &required) in account.per_device_bytes.iter().enumerate() {
        let budget = cluster.devices[dev].memory_budget_bytes;
        if required > budget {
            return Err(SimError::KvOverflow {
                device: dev,
                required_bytes: required,
                budget_bytes: budget,
            });
        }
    }

    // Per-stage durations and transfer times.
    let mut prefill_ms = vec![0.0f64; stage_count];
    let mut decode_ms = vec![0.0f64; stage_count];
    for (s, stage) in stages.iter().enumerate() {
        for layer in &model.layers[stage.layer_lo..stage.layer_hi] {
            let t = layer.time_on(stage.device)?;
            prefill_ms[s] += t.prefill_ms;
            decode_ms[s] += t.decode_ms;
        }
    }
    let mut comm_prefill = vec![0.0f64; stage_count.saturating_sub(1)];
    let mut comm_decode = vec![0.0f64; stage_count.saturating_sub(1)];
    for s in 0..stage_count.saturating_sub(1) {
        let payload = model.layers[stages[s].layer_hi - 1].activation_bytes * batch;
        comm_decode[s] = comm_time_ms(payload, stages[s].device, stages[s + 1].device, cluster)?;
        comm_prefill[s] = comm_time_ms(
            payload * prompt_len,
            stages[s].device,
            stages[s + 1].device,
            cluster,
        )?;
    }
    let last_device = stages[stage_count - 1].device;
    let return_ms = comm_time_ms(
        model.token_return_bytes * batch,
        last_device,
        cluster.source_device,
        cluster,
    )?;

    // Resources: one per device, one per directed link actually used.
    let mut resources: Vec<ResourceState> = (0..device_count)
        .map(|_| ResourceState {
            free_at: 0.0,
            waiting: Vec::new(),
        })
        .collect();
    let mut link_ids: HashMap<(DeviceId, DeviceId), usize> = HashMap::new();
    let mut link_resource = |from: DeviceId, to: DeviceId, resources: &mut Vec<ResourceState>| {
        if from == to {
            return None;
        }
        Some(*link_ids.entry((from, to)).or_insert_with(|| {
            resources.push(ResourceState {
                free_at: 0.0,
                waiting: Vec::new(),
            });
            resources.len() - 1
        }))
    };

    // Task graph. Ids: compute, then comm, then return, each laid out by
    // (iteration, micro_batch, stage).
    let iters = gen_len as usize;
    let compute_id = |s: usize, mb: usize, it: usize| (it * micro_batches + mb) * stage_count + s;
    let comm_base = stage_count * micro_batches * iters;
    let comm_id = |s: usize, mb: usize, it: usize| {
        comm_base + (it * micro_batches + mb) * (stage_count - 1) + s
    };
    let return_base = comm_base + stage_count.saturating_sub(1) * micro_batches * iters;
    let return_id = |mb: usize, it: usize| return_base + it * micro_batches + mb;
    let task_count = return_base + micro_batches * iters;

    let mut tasks: Vec<Task> = Vec::with_capacity(task_count);
    for id in 0..task_count {
        let (kind, s, mb, it) = if id < comm_base {
            let s = id % stage_count;
            let rest = id / stage_count;
            (
                TaskKind::Compute,
                s,
                rest % micro_batches,
                rest / micro_batches,
            )
        } else if id < return_base {
            let rel = id - comm_base;
            let s = rel % (stage_count - 1);
            let rest = rel / (stage_count - 1);
            (
                TaskKind::Comm,
                s,
                rest % micro_batches,
                rest / micro_batches,
            )
        } else {
            let rel = id - return_base;
            (
                TaskKind::Return,
                stage_count - 1,
                rel % micro_batches,
                rel / micro_batches,
            )
        };
        let (duration, resource) = match kind {
            TaskKind::Compute => {
                let d = if it == 0 { prefill_ms[s] } else { decode_ms[s] };
                (d, Some(stages[s].device))
            }
            TaskKind::Comm => {
                let d = if it == 0 {
                    comm_prefill[s]
                } else {
                    comm_decode[s]
                };
                (
                    d,
                    link_resource(stages[s].device, stages[s + 1].device, &mut resources),
                )
            }
            TaskKind::Return => (
                return_ms,
                link_resource(last_device, cluster.source_device, &mut resources),
            ),
        };
        tasks.push(Task {
            kind,
            stage: s,
            micro_batch: mb,
            iteration: it,
            duration,
            resource,
            deps_remaining: 0,
            deps: Vec::new(),
            dependents: Vec::new(),
            ready_at: 0.0,
            start: 0.0,
            end: 0.0,
        });
    }

    let add_dep = |tasks: &mut Vec<Task>, from: usize, to: usize| {
        tasks[from].dependents.push(to);
        tasks[to].deps.push(from);
        tasks[to].deps_remaining += 1;
    };
    for it in 0..iters {
        for mb in 0..micro_batches {
            for s in 0..stage_count {
                let c = compute_id(s, mb, it);
                if s + 1 < stage_count {
                    add_dep(&mut tasks, c, comm_id(s, mb, it));
                    add_dep(&mut tasks, comm_id(s, mb, it), compute_id(s + 1, mb, it));
                } else {
                    add_dep(&mut tasks, c, return_id(mb, it));
                }
            }
            if it > 0 {
                for gate_mb in policy.stage_zero_gate(mb, micro_batches) {
                    add_dep(
                        &mut tasks,
                        return_id(gate_mb, it - 1),
                        compute_id(0, mb, it),
                    );
                }
            }
        }
    }

    // Event loop.
    let mut events: BinaryHeap<Reverse<QueuedEvent>> = BinaryHeap::new();
    let push_event = |events: &mut BinaryHeap<Reverse<QueuedEvent>>, tasks: &[Task], id: usize| {
        let t = &tasks[id];
        events.push(Reverse(QueuedEvent {
            time: t.end,
            iteration: t.iteration,
            micro_batch: t.micro_batch,
            stage: t.stage,
            kind_order: match t.kind {
                TaskKind::Compute => 0,
                TaskKind::Comm => 1,
                TaskKind::Return => 2,
            },
            task: id,
        }));
    };
    fn try_dispatch(
        resources: &mut [ResourceState],
        tasks: &mut [Task],
        events: &mut BinaryHeap<Reverse<QueuedEvent>>,
        rid: usize,
        now: f64,
    ) {
        let slot = &mut resources[rid];
        if slot.free_at > now || slot.waiting.is_empty() {
            return;
        }
        let mut best = 0;
        for (pos, &tid) in slot.waiting.iter().enumerate().skip(1) {
            let t = &tasks[tid];
            let b = &tasks[slot.waiting[best]];
            if (t.iteration, t.micro_batch, t.stage) < (b.iteration, b.micro_batch, b.stage) {
                best = pos;
            }
        }
        let tid = slot.waiting.swap_remove(best);
        let task = &mut tasks[tid];
        task.start = now;
        task.end = now + task.duration;
        slot.free_at = task.end;
        let (iteration, micro_batch, stage, kind) =
            (task.iteration, task.micro_batch, task.stage, task.kind);
        events.push(Reverse(QueuedEvent {
            time: task.end,
            iteration,
            micro_batch,
            stage,
            kind_order: match kind {
                TaskKind::Compute => 0,
                TaskKind::Comm => 1,
                TaskKind::Return => 2,
            },
            task: tid,
        }));
    }

    for id in 0..task_count {
        if tasks[id].deps_remaining == 0 {
            match tasks[id].resource {
                Some(rid) => resources[rid].waiting.push(id),
                None => {
                    tasks[id].start = 0.0;
                    tasks[id].end = tasks[id].duration;
                    push_event(&mut events, &tasks, id);
                }
            }
        }
    }
    for rid in 0..resources.len() {
        try_dispatch(&mut resources, &mut tasks, &mut events, rid, 0.0);
    }

    let mut completed = 0usize;
    while let Some(Reverse(event)) = events.pop() {
        let now = event.time;
        let finished = event.task;
        completed += 1;
        if let Some(rid) = tasks[finished].resource {
            try_dispatch(&mut resources, &mut tasks, &mut events, rid, now);
        }
        let dependents = tasks[finished].dependents.clone();
        for dep in dependents {
            tasks[dep].deps_remaining -= 1;
            tasks[dep].ready_at = tasks[dep].ready_at.max(now);
            if tasks[dep].deps_remaining == 0 {
                match tasks[dep].resource {
                    Some(rid) => {
                        resources[rid].waiting.push(dep);
                        try_dispatch(&mut resources, &mut tasks, &mut events, rid, now);
                    }
                    None => {
                        tasks[dep].start = tasks[dep].ready_at;
                        tasks[dep].end = tasks[dep].start + tasks[dep].duration;
                        push_event(&mut events, &tasks, dep);
                    }
                }
            }
        }
    }
    debug_assert_eq!(completed, task_count, "tasks left unscheduled");
    for task in &tasks {
        for &dep in &task.deps {
            debug_assert!(
                task.start >= tasks[dep].end,
                "causality: task starts before a dependency ends"
            );
        }
    }

    let mut makespan_ms = 0.0f64;
    let mut device_busy_ms = vec![0.0f64; device_count];
    let mut timeline = Vec::new();
    for task in &tasks {
        makespan_ms = makespan_ms.max(task.end);
        let device = stages[task.stage].device;
        let phase = match task.kind {
            TaskKind::Compute => {
                device_busy_ms[device] += task.duration;
                if task.iteration == 0 {
                    Phase::Prefill
                } else {
                    Phase::Decode
                }
            }
            TaskKind::Comm => Phase::Comm,
            TaskKind::Return => Phase::Return,
        };
        if task.kind != TaskKind::Compute && task.duration == 0.0 {
            continue;
        }
        timeline.push(TimelineEvent {
            device,
            micro_batch: task.micro_batch,
            iteration: task.iteration,
            phase,
            start_ms: task.start,
            end_ms: task.end,
        });
    }
    timeline.sort_by(|a, b| {
        a.start_ms
            .total_cmp(&b.start_ms)
            .then(a.end_ms.total_cmp(&b.end_ms))
            .then(a.iteration.cmp(&b.iteration))
            .then(a.micro_batch.cmp(&b.micro_batch))
            .then(a.device.cmp(&b.device))
    });

    let tokens_total = micro_batches as u64 * batch * gen_len;
    let throughput_tps = tokens_total as f64 / makespan_ms * 1000.0;
    let avg_token_latency_ms = makespan_ms / tokens_total as f64;
    let plan_digest = digest_plan(plan);

    Ok(SimResult {
        makespan_ms,
        tokens_total,
        throughput_tps,
        avg_token_latency_ms,
        device_busy_ms,
        timeline,
        plan_digest,
        config: config.clone(),
    })
}

fn digest_plan(plan: &Plan) -> String {
    let text = match plan {
        Plan::Latency(p) => format!("latency:{}", serde_json::to_string(p).expect("plan json")),
        Plan::Throughput(p) => {
            format!(
                "throughput:{}",
                serde_json::to_string(p).expect("plan json")
            )
        }
    };
    fnv1a_hex(&text)
}

/// Stages to pipeline over. Staged plans are taken as-is; per-layer plans
/// are cut at device changes, and may revisit a device only when a single
/// micro-batch makes the replay purely sequential.
fn stages_of_plan(plan: &Plan, micro_batches: usize) -> Result<Vec<Stage>, SimError> {
    match plan {
        Plan::Throughput(p) => Ok(p.stages.clone()),
        Plan::Latency(p) => {
            let mut stages: Vec<Stage> = Vec::new();
            for (i, &dev) in p.assignment.iter().enumerate() {
                match stages.last_mut() {
                    Some(stage) if stage.device == dev => stage.layer_hi = i + 1,
                    _ => stages.push(Stage {
                        layer_lo: i,
                        layer_hi: i + 1,
                        device: dev,
                    }),
                }
            }
            let max_dev = stages.iter().map(|s| s.device).max().unwrap_or(0);
            let mut seen = vec![false; max_dev + 1];
            let mut revisits = false;
            for stage in &stages {
                if seen[stage.device] {
                    revisits = true;
                }
                seen[stage.device] = true;
            }
            if revisits && micro_batches > 1 {
                return Err(SimError::InvalidPlan(
                    "assignment revisits a device; pipelining needs one stage per device".into(),
                ));
            }
            Ok(stages)
        }
    }
}

/// Write the timeline as delimiter-separated text: a header line carrying
/// the plan hash and config, then one event per line.
pub fn export_timeline(result: &SimResult, path: impl AsRef<Path>) -> Result<(), SimError> {
    let mut out = String::new();
    out.push_str(&format!(
        "# plan={} strategy={} micro_batches={} batch={} prompt_len={} gen_len={}\n",
        result.plan_digest,
        result.config.strategy,
        result.config.micro_batches,
        result.config.batch_per_micro,
        result
            .config
            .prompt_len
            .map_or("default".into(), |v| v.to_string()),
        result
            .config
            .gen_len
            .map_or("default".into(), |v| v.to_string()),
    ));
    for event in &result.timeline {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\n",
            event.device,
            event.micro_batch,
            event.iteration,
            event.phase.as_str(),
            event.start_ms,
            event.end_ms,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
