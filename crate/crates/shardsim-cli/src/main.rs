//! Command-line front end: generate synthetic profiles, plan placements,
//! validate plans and planners, simulate pipelines, and sweep a link's
//! bandwidth.
//!
//! Exit codes: 0 success, 2 input or usage problems, 3 infeasible plans or
//! memory overflows, 4 oracle instance too large.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shardsim::model::{validate_plan, ClusterProfile, DeviceId, Plan};
use shardsim::oracle::{brute_force_latency, brute_force_throughput, OracleError};
use shardsim::plandoc::{recompute_metric, PlanDocError, PlanDocument};
use shardsim::planner::{PlanError, StrategyRegistry};
use shardsim::profile::{
    load_profile, save_profile, synthesize_profile, BandwidthSpec, DeviceSpec, ProfileDocument,
    ProfileError, SynthesisSpec,
};
use shardsim::sim::{export_timeline, simulate, SimConfig, SimError};

#[derive(Parser)]
#[command(
    name = "shardsim",
    version,
    about = "Plan and simulate partitioned model inference across networked devices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic profile for a parameterized device mix.
    GenProfile(GenProfileArgs),
    /// Plan a placement for one objective and print its cost table.
    Plan(PlanArgs),
    /// Check a plan against the constraints, or both planners against the
    /// brute-force oracles.
    Validate(ValidateArgs),
    /// Replay a plan through the pipeline simulator.
    Simulate(SimulateArgs),
    /// Re-plan and re-simulate while varying one link's bandwidth.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenProfileArgs {
    /// Layer count.
    #[arg(long)]
    layers: usize,
    /// Comma-separated device classes: slow, fast, agx-orin, orin-nx,
    /// rtx3090, cloud, or label:speed:mem_gb.
    #[arg(long)]
    devices: String,
    /// Uniform link speed, e.g. 50Mbps.
    #[arg(long)]
    bandwidth: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prefill time as a multiple of decode time.
    #[arg(long, default_value_t = 10.0)]
    prefill_factor: f64,
    #[arg(long, default_value_t = 4.0)]
    base_decode_ms: f64,
    #[arg(long, default_value_t = 875_000_000)]
    layer_memory_bytes: u64,
    #[arg(long, default_value_t = 16_384)]
    activation_bytes: u64,
    #[arg(long, default_value_t = 32_768)]
    kv_bytes_per_token: u64,
    #[arg(long, default_value_t = 64)]
    token_return_bytes: u64,
    #[arg(long, default_value_t = 32)]
    prompt_len: u64,
    #[arg(long, default_value_t = 96)]
    gen_len: u64,
    /// Disable the seeded ±10% per-layer jitter.
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    profile: PathBuf,
    /// latency or throughput.
    #[arg(long)]
    objective: String,
    /// Latency planner mode: greedy or exact-unconstrained.
    #[arg(long, default_value = "greedy")]
    mode: String,
    /// Write the plan document here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    profile: PathBuf,
    /// Plan document to check.
    #[arg(long, conflicts_with = "oracle")]
    plan: Option<PathBuf>,
    /// Compare both planners against the exhaustive oracles instead.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value_t = 1)]
    micro_batches: usize,
    /// Requests per micro-batch.
    #[arg(long, default_value_t = 1)]
    batch: u64,
    /// bubbles or no_bubbles.
    #[arg(long, default_value = "no_bubbles")]
    strategy: String,
    #[arg(long)]
    prompt_len: Option<u64>,
    #[arg(long)]
    gen_len: Option<u64>,
    /// Write the event timeline here.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    profile: PathBuf,
    /// Link to vary, as from:to — device labels, indices, or "source".
    #[arg(long)]
    link: String,
    /// Comma-separated bandwidths; a bare number borrows the unit of the
    /// next suffixed value (1,5,10,25,50Mbps).
    #[arg(long)]
    values: String,
    /// latency or throughput.
    #[arg(long)]
    objective: String,
    #[arg(long, default_value_t = 4)]
    micro_batches: usize,
    #[arg(long, default_value_t = 1)]
    batch: u64,
    #[arg(long, default_value = "no_bubbles")]
    strategy: String,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
    fn infeasible(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
    fn too_large(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<ProfileError> for Failure {
    fn from(e: ProfileError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<PlanDocError> for Failure {
    fn from(e: PlanDocError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Infeasible(_) | PlanError::Cost(_) => Failure::infeasible(e.to_string()),
            PlanError::TooManyDevices(_) => Failure::usage(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::KvOverflow { .. } | SimError::InvalidPlan(_) | SimError::Cost(_) => {
                Failure::infeasible(e.to_string())
            }
            _ => Failure::usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenProfile(args) => cmd_gen_profile(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn device_class(token: &str) -> Result<DeviceSpec, Failure> {
    const GB: u64 = 1_000_000_000;
    let spec = match token {
        "slow" => DeviceSpec::new("slow", 1.0, 16 * GB),
        "fast" => DeviceSpec::new("fast", 8.0, 24 * GB),
        "agx-orin" => DeviceSpec::new("agx-orin", 1.77, 32 * GB),
        "orin-nx" => DeviceSpec::new("orin-nx", 1.0, 16 * GB),
        "rtx3090" => DeviceSpec::new("rtx3090", 19.15, 24 * GB),
        "cloud" => DeviceSpec::new("cloud", 19.15, 48 * GB),
        custom => {
            let parts: Vec<&str> = custom.split(':').collect();
            if parts.len() != 3 {
                return Err(Failure::usage(format!(
                    "unknown device class {custom:?} (expected a class name or label:speed:mem_gb)"
                )));
            }
            let speed: f64 = parts[1]
                .parse()
                .map_err(|_| Failure::usage(format!("bad speed in {custom:?}")))?;
            let mem_gb: f64 = parts[2]
                .parse()
                .map_err(|_| Failure::usage(format!("bad memory in {custom:?}")))?;
            DeviceSpec::new(parts[0], speed, (mem_gb * GB as f64) as u64)
        }
    };
    Ok(spec)
}

/// "50Mbps" / "1.5Gbps" / "250Kbps" / "1000000bps" -> bits per second.
fn parse_bandwidth(token: &str) -> Result<f64, Failure> {
    let lower = token.trim().to_ascii_lowercase();
    let (digits, scale) = if let Some(rest) = lower.strip_suffix("gbps") {
        (rest, 1e9)
    } else if let Some(rest) = lower.strip_suffix("mbps") {
        (rest, 1e6)
    } else if let Some(rest) = lower.strip_suffix("kbps") {
        (rest, 1e3)
    } else if let Some(rest) = lower.strip_suffix("bps") {
        (rest, 1.0)
    } else {
        return Err(Failure::usage(format!(
            "bandwidth {token:?} needs a bps/Kbps/Mbps/Gbps suffix"
        )));
    };
    let value: f64 = digits
        .parse()
        .map_err(|_| Failure::usage(format!("bad bandwidth {token:?}")))?;
    if value <= 0.0 || !value.is_finite() {
        return Err(Failure::usage(format!(
            "bandwidth {token:?} must be positive"
        )));
    }
    Ok(value * scale)
}

fn fmt_num(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value:.6}")
    }
}

fn cmd_gen_profile(args: GenProfileArgs) -> Result<(), Failure> {
    let devices = args
        .devices
        .split(',')
        .filter(|t| !t.is_empty())
        .map(device_class)
        .collect::<Result<Vec<_>, _>>()?;
    let bits = parse_bandwidth(&args.bandwidth)?;
    let mut spec = SynthesisSpec::new(
        args.layers,
        devices,
        BandwidthSpec::UniformBitsPerSec(bits),
        args.seed,
    );
    spec.prefill_factor = args.prefill_factor;
    spec.base_decode_ms = args.base_decode_ms;
    spec.layer_memory_bytes = args.layer_memory_bytes;
    spec.activation_bytes = args.activation_bytes;
    spec.kv_bytes_per_token = args.kv_bytes_per_token;
    spec.token_return_bytes = args.token_return_bytes;
    spec.prompt_len = args.prompt_len;
    spec.gen_len = args.gen_len;
    spec.jitter = !args.uniform;
    let doc = synthesize_profile(&spec)?;
    save_profile(&doc, &args.out)?;
    println!(
        "wrote {} layers x {} devices, total model {} bytes -> {}",
        doc.model.layer_count(),
        doc.cluster.device_count(),
        doc.model.total_memory_bytes(),
        args.out.display()
    );
    Ok(())
}

fn plan_with(
    doc: &ProfileDocument,
    objective: &str,
    mode: &str,
) -> Result<(Plan, String), Failure> {
    let registry = StrategyRegistry::builtin();
    let name = match (objective, mode) {
        ("latency", "greedy") => "latency".to_string(),
        ("latency", "exact-unconstrained") => "latency-exact".to_string(),
        ("latency", other) => {
            return Err(Failure::usage(format!(
                "unknown latency mode {other:?} (greedy or exact-unconstrained)"
            )))
        }
        ("throughput", _) => "throughput".to_string(),
        (other, _) => {
            return Err(Failure::usage(format!(
                "unknown objective {other:?} (latency or throughput)"
            )))
        }
    };
    let strategy = registry.get(&name).expect("builtin strategy");
    let plan = strategy.plan(&doc.model, &doc.cluster)?;
    Ok((plan, name))
}

fn cmd_plan(args: PlanArgs) -> Result<(), Failure> {
    let doc = load_profile(&args.profile)?;
    let (plan, strategy_name) = plan_with(&doc, &args.objective, &args.mode)?;
    let plan_doc = PlanDocument::from_plan(&plan, &doc.model, &doc.cluster, &args.mode)
        .map_err(|e| Failure::infeasible(e.to_string()))?;
    print_plan(&plan_doc, &strategy_name);
    if let Some(out) = &args.out {
        plan_doc.save(out)?;
        println!("wrote plan -> {}", out.display());
    }
    Ok(())
}

fn print_plan(doc: &PlanDocument, strategy_name: &str) {
    match doc {
        PlanDocument::Latency {
            assignment,
            predicted_latency_ms,
            per_layer,
            token_return_ms,
            ..
        } => {
            println!("strategy: {strategy_name}");
            println!("predicted_latency_ms: {predicted_latency_ms:.6}");
            println!("assignment: {assignment:?}");
            println!("layer\tdevice\tcompute_ms\tcomm_in_ms");
            for row in per_layer {
                println!(
                    "{}\t{}\t{:.6}\t{:.6}",
                    row.layer, row.device, row.compute_ms, row.comm_in_ms
                );
            }
            println!("token_return_ms: {token_return_ms:.6}");
        }
        PlanDocument::Throughput {
            stages,
            predicted_stage_time_ms,
            ..
        } => {
            println!("strategy: {strategy_name}");
            println!("predicted_stage_time_ms: {predicted_stage_time_ms:.6}");
            println!("stage\tlayers\tdevice\tcompute_ms\tcomm_in_ms\tmemory_bytes");
            for (s, row) in stages.iter().enumerate() {
                println!(
                    "{}\t[{}, {})\t{}\t{:.6}\t{:.6}\t{}",
                    s,
                    row.layer_lo,
                    row.layer_hi,
                    row.device,
                    row.compute_ms,
                    row.comm_in_ms,
                    row.memory_bytes
                );
            }
        }
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let doc = load_profile(&args.profile)?;
    if args.oracle {
        return validate_against_oracles(&doc);
    }
    let Some(plan_path) = &args.plan else {
        return Err(Failure::usage("pass --plan FILE or --oracle"));
    };
    let plan = PlanDocument::load(plan_path)?.to_plan();
    let violations = validate_plan(&plan, &doc.model, &doc.cluster);
    if violations.is_empty() {
        match recompute_metric(&plan, &doc.model, &doc.cluster) {
            Ok(metric) => println!("plan ok; recomputed metric {metric:.6} ms"),
            Err(e) => return Err(Failure::infeasible(format!("plan does not evaluate: {e}"))),
        }
        Ok(())
    } else {
        for violation in &violations {
            println!("violation: {violation}");
        }
        Err(Failure::infeasible(format!(
            "{} violation(s)",
            violations.len()
        )))
    }
}

fn validate_against_oracles(doc: &ProfileDocument) -> Result<(), Failure> {
    println!("objective\tdp_ms\toracle_ms\tgap");
    let mut skipped = 0usize;

    match brute_force_latency(&doc.model, &doc.cluster) {
        Ok((oracle_value, _)) => {
            let dp = plan_with(doc, "latency", "greedy")?.0;
            let Plan::Latency(dp) = dp else {
                unreachable!()
            };
            let gap = (dp.predicted_latency_ms - oracle_value) / oracle_value;
            println!(
                "latency\t{:.6}\t{:.6}\t{:.6}",
                dp.predicted_latency_ms, oracle_value, gap
            );
        }
        Err(OracleError::TooLarge(why)) => {
            println!("latency\tskipped: {why}");
            skipped += 1;
        }
        Err(OracleError::Infeasible) => {
            return Err(Failure::infeasible("no feasible assignment exists"))
        }
    }

    match brute_force_throughput(&doc.model, &doc.cluster) {
        Ok((oracle_value, _)) => {
            let dp = plan_with(doc, "throughput", "")?.0;
            let Plan::Throughput(dp) = dp else {
                unreachable!()
            };
            let gap = (dp.predicted_stage_time_ms - oracle_value) / oracle_value;
            println!(
                "throughput\t{:.6}\t{:.6}\t{:.6}",
                dp.predicted_stage_time_ms, oracle_value, gap
            );
        }
        Err(OracleError::TooLarge(why)) => {
            println!("throughput\tskipped: {why}");
            skipped += 1;
        }
        Err(OracleError::Infeasible) => {
            return Err(Failure::infeasible("no feasible stage partition exists"))
        }
    }

    if skipped == 2 {
        return Err(Failure::too_large(
            "both oracles exceed the enumeration limit",
        ));
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let doc = load_profile(&args.profile)?;
    let plan = PlanDocument::load(&args.plan)?.to_plan();
    let config = SimConfig {
        micro_batches: args.micro_batches,
        batch_per_micro: args.batch,
        prompt_len: args.prompt_len,
        gen_len: args.gen_len,
        strategy: args.strategy.clone(),
    };
    let result = simulate(&plan, &doc.model, &doc.cluster, &config)?;
    println!("strategy: {}", args.strategy);
    println!("makespan_ms: {:.6}", result.makespan_ms);
    println!("tokens_total: {}", result.tokens_total);
    println!("throughput_tps: {:.6}", result.throughput_tps);
    println!("avg_token_latency_ms: {:.6}", result.avg_token_latency_ms);
    println!("device\tbusy_ms\tutilization");
    for (dev, busy) in result.device_busy_ms.iter().enumerate() {
        println!("{}\t{:.6}\t{:.6}", dev, busy, busy / result.makespan_ms);
    }
    if let Some(path) = &args.export {
        export_timeline(&result, path)?;
        println!("wrote timeline -> {}", path.display());
    }
    Ok(())
}

fn resolve_device(token: &str, cluster: &ClusterProfile) -> Result<DeviceId, Failure> {
    if token == "source" {
        return Ok(cluster.source_device);
    }
    if let Ok(index) = token.parse::<usize>() {
        if index < cluster.device_count() {
            return Ok(index);
        }
        return Err(Failure::usage(format!("device index {index} out of range")));
    }
    let matches: Vec<DeviceId> = cluster
        .devices
        .iter()
        .filter(|d| d.label == token)
        .map(|d| d.index)
        .collect();
    match matches.as_slice() {
        [device] => Ok(*device),
        [] => Err(Failure::usage(format!("no device labeled {token:?}"))),
        _ => Err(Failure::usage(format!(
            "label {token:?} is ambiguous; use a device index"
        ))),
    }
}

/// Parse "1,5,10,25,50Mbps": each value may carry a unit; bare numbers use
/// the unit of the next suffixed value to the right.
fn parse_values(text: &str) -> Result<Vec<f64>, Failure> {
    let tokens: Vec<&str> = text.split(',').filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(Failure::usage("--values is empty"));
    }
    let mut scales = vec![None; tokens.len()];
    for (i, token) in tokens.iter().enumerate() {
        let lower = token.trim().to_ascii_lowercase();
        scales[i] = if lower.ends_with("gbps") {
            Some(1e9)
        } else if lower.ends_with("mbps") {
            Some(1e6)
        } else if lower.ends_with("kbps") {
            Some(1e3)
        } else if lower.ends_with("bps") {
            Some(1.0)
        } else {
            None
        };
    }
    // Propagate units leftward onto bare numbers.
    let mut next_scale = None;
    let mut resolved = vec![0.0; tokens.len()];
    for i in (0..tokens.len()).rev() {
        match scales[i] {
            Some(scale) => {
                next_scale = Some(scale);
                resolved[i] = parse_bandwidth(tokens[i])?;
            }
            None => {
                let scale = next_scale.ok_or_else(|| {
                    Failure::usage(format!("value {:?} has no unit to inherit", tokens[i]))
                })?;
                let value: f64 = tokens[i]
                    .trim()
                    .parse()
                    .map_err(|_| Failure::usage(format!("bad value {:?}", tokens[i])))?;
                if value <= 0.0 || !value.is_finite() {
                    return Err(Failure::usage(format!(
                        "value {:?} must be positive",
                        tokens[i]
                    )));
                }
                resolved[i] = value * scale;
            }
        }
    }
    Ok(resolved)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let doc = load_profile(&args.profile)?;
    let (from_token, to_token) = args
        .link
        .split_once(':')
        .ok_or_else(|| Failure::usage("--link must look like from:to"))?;
    let from = resolve_device(from_token, &doc.cluster)?;
    let to = resolve_device(to_token, &doc.cluster)?;
    if from == to {
        return Err(Failure::usage("--link endpoints must differ"));
    }
    let values = parse_values(&args.values)?;
    if args.objective != "latency" && args.objective != "throughput" {
        return Err(Failure::usage(format!(
            "unknown objective {:?} (latency or throughput)",
            args.objective
        )));
    }

    let mut table = String::new();
    let (predicted_col, simulated_col) = if args.objective == "latency" {
        ("predicted_latency_ms", "simulated_ms_per_token")
    } else {
        ("predicted_bottleneck_ms", "simulated_tokens_per_s")
    };
    table.push_str(&format!(
        "bandwidth_bits_per_s\t{predicted_col}\t{simulated_col}\n"
    ));

    for bits in &values {
        let mut swept = doc.clone();
        // Degrading one direction only would be odd for a physical link.
        swept.cluster.bandwidth_bytes_per_sec[from][to] = bits / 8.0;
        swept.cluster.bandwidth_bytes_per_sec[to][from] = bits / 8.0;
        let (plan, _) = plan_with(&swept, &args.objective, "greedy")?;
        let (predicted, config) = match &plan {
            Plan::Latency(p) => (
                p.predicted_latency_ms,
                SimConfig {
                    micro_batches: 1,
                    batch_per_micro: 1,
                    prompt_len: None,
                    gen_len: None,
                    strategy: args.strategy.clone(),
                },
            ),
            Plan::Throughput(p) => (
                p.predicted_stage_time_ms,
                SimConfig {
                    micro_batches: args.micro_batches,
                    batch_per_micro: args.batch,
                    prompt_len: None,
                    gen_len: None,
                    strategy: args.strategy.clone(),
                },
            ),
        };
        let result = simulate(&plan, &swept.model, &swept.cluster, &config)?;
        let simulated = if args.objective == "latency" {
            result.avg_token_latency_ms
        } else {
            result.throughput_tps
        };
        table.push_str(&format!(
            "{}\t{:.6}\t{:.6}\n",
            fmt_num(*bits),
            predicted,
            simulated
        ));
    }

    match &args.out {
        Some(path) => {
            std::fs::write(path, &table).map_err(|e| Failure::usage(e.to_string()))?;
            println!("wrote sweep table -> {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}
