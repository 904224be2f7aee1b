use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mxsim_core::archconfig::{
    peak_throughput, scratchpad_footprint_bytes, size_scratchpad_capped, tile_times, utilization_bound, DataKind,
    MemoryModel, PeArray, SizingError, DEFAULT_FOOTPRINT_BUDGET_BYTES, DEFAULT_RESIDENCY_CAP,
};
use mxsim_core::config::SystemConfig;
use mxsim_core::engine::{emit_trace, simulate_op};
use mxsim_core::experiment::{predict_all, predictions_csv, run_sweep, write_outputs, ExperimentSpec};
use mxsim_core::isa::{self, MatMulDescriptor};
use mxsim_core::kernels::random_operand;
use mxsim_core::memory::{SimMemory, TensorBuffer};

/// Largest memory image `trace --functional` will allocate.
const MAX_FUNCTIONAL_BYTES: u64 = 1 << 30;
/// Address space assumed for descriptor checks without a memory image.
const TIMING_ADDRESS_SPACE: u64 = 1 << 48;

#[derive(Parser)]
#[command(name = "mxsim", version, about = "Matrix-extension simulator and analytic model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a system config and print peak throughput and the bandwidth bound.
    Validate(ValidateArgs),
    /// Analytic predictions for every point of an experiment spec.
    Predict(PredictArgs),
    /// Simulate every configuration x workload of an experiment spec.
    Sweep(SweepArgs),
    /// Size a square scratchpad residency for a target utilization.
    Dse(DseArgs),
    /// Simulate one descriptor and write its event trace.
    Trace(TraceArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// System config (TOML with [arch], [memory] and optional [vector]).
    #[arg(long)]
    config: PathBuf,
    /// Descriptor literals to check against the memory size, e.g. "m=64,n=64,k=256,base_b=0x4000,base_c=0x8000".
    #[arg(long = "desc")]
    descs: Vec<String>,
    /// Simulated memory size used for descriptor checks.
    #[arg(long, default_value_t = 1 << 32)]
    mem_bytes: u64,
}

#[derive(Args)]
struct PredictArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for predictions.csv; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long, env = "MXSIM_WORKERS")]
    workers: Option<usize>,
}

#[derive(Args)]
struct DseArgs {
    /// PE array as `RxC` or a single edge for a square array.
    #[arg(long, default_value = "4x4", value_parser = parse_pe)]
    pe: (u32, u32),
    /// Reduce width in bits.
    #[arg(long, default_value_t = 512)]
    reduce_bits: u32,
    #[arg(long, default_value_t = 2.0e9)]
    freq_hz: f64,
    #[arg(long, default_value_t = 48.0)]
    bandwidth_gbps: f64,
    /// Target utilization bound in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    target: f64,
    #[arg(long, default_value = "int8")]
    dtype: DataKind,
    #[arg(long, default_value_t = 2)]
    banks: u32,
    /// Largest residency considered.
    #[arg(long, default_value_t = DEFAULT_RESIDENCY_CAP)]
    cap: u32,
    /// Footprint above which the result is flagged.
    #[arg(long, default_value_t = DEFAULT_FOOTPRINT_BUDGET_BYTES)]
    budget_bytes: u64,
    /// Also write the result as dse.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    /// System config; the case study when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Descriptor literal, e.g. "m=128,n=128,k=512,dtype=int8,base_b=0x10000,base_c=0x20000".
    #[arg(long)]
    desc: String,
    /// Compute values from seeded random operands as well as timing.
    #[arg(long)]
    functional: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_pe(s: &str) -> Result<(u32, u32), String> {
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("`{v}`: {e}"));
    match s.split_once(['x', 'X']) {
        Some((r, c)) => Ok((parse(r)?, parse(c)?)),
        None => parse(s).map(|e| (e, e)),
    }
}

fn load_system(path: &Path) -> Result<SystemConfig> {
    let cfg = SystemConfig::load(path)?;
    cfg.validate().with_context(|| format!("{} is invalid", path.display()))?;
    Ok(cfg)
}

fn validate(args: &ValidateArgs) -> Result<()> {
    let cfg = load_system(&args.config)?;
    let a = &cfg.arch;
    println!("config: {}", args.config.display());
    println!(
        "arch: {}x{} PEs, {}-bit reduce, {}x{} residency, {} B depth, {} banks, {:.3} GHz",
        a.m_pe,
        a.n_pe,
        a.k_pe_bits,
        a.m_scp,
        a.n_scp,
        a.k_scp_bytes,
        a.scratchpad_banks,
        a.freq_hz / 1e9
    );
    println!("memory: {:.3} GB/s", cfg.memory.bandwidth_bytes_per_s / 1e9);
    println!("{:<6} {:>10} {:>13} {:>13} {:>10} {:>7}", "dtype", "TOPS", "compute_s", "memory_s", "constraint", "bound");
    for kind in DataKind::ALL {
        let spec = kind.spec();
        match (peak_throughput(a, spec), tile_times(a, &cfg.memory, spec), utilization_bound(a, &cfg.memory, spec)) {
            (Ok(peak), Ok(t), Ok(bound)) => {
                let verdict = if t.compute_s <= t.memory_s { "satisfied" } else { "violated" };
                println!(
                    "{:<6} {:>10.3} {:>13.4e} {:>13.4e} {:>10} {:>7.4}",
                    kind.name(),
                    peak / 1e12,
                    t.compute_s,
                    t.memory_s,
                    verdict,
                    bound
                );
            }
            (Err(e), ..) | (_, Err(e), _) | (.., Err(e)) => println!("{:<6} unsupported: {e}", kind.name()),
        }
    }

    let mut bad = 0;
    for (i, lit) in args.descs.iter().enumerate() {
        let desc: MatMulDescriptor = lit.parse().map_err(|e| anyhow::anyhow!("descriptor {i}: {e}"))?;
        match isa::validate(&desc, args.mem_bytes) {
            Ok(()) => println!("descriptor {i}: ok ({} MACs)", desc.mac_count()),
            Err(errs) => {
                bad += 1;
                for e in errs {
                    eprintln!("descriptor {i}: {e}");
                }
            }
        }
    }
    if bad > 0 {
        bail!("{bad} descriptor(s) rejected");
    }
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let spec = ExperimentSpec::load(&args.config)?;
    let rows = predict_all(&spec)?;
    let csv = predictions_csv(&rows)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("predictions.csv");
            fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
            println!("{} predictions -> {}", rows.len(), path.display());
        }
        None => print!("{}", String::from_utf8(csv)?),
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if args.workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    let res = run_sweep(&spec, args.workers)?;
    let written = write_outputs(&spec, &res, &args.out)?;
    for cp in &res.configs {
        if let Some(note) = &cp.note {
            println!("{}: {note}", cp.id);
        }
    }
    let max_gap = res
        .rows
        .iter()
        .map(|r| (r.utilization - r.analytic_bound).abs())
        .fold(0.0, f64::max);
    println!(
        "{} configs, {} rows, {} failures, max |utilization - bound| {:.4}",
        res.configs.len(),
        res.rows.len(),
        res.failures.len(),
        max_gap
    );
    for f in &res.failures {
        eprintln!("warning: {} / {}: {}", f.config_id, f.workload_id, f.error);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn dse(args: &DseArgs) -> Result<bool> {
    let mut pe = PeArray::new(args.freq_hz, args.pe.0, args.pe.1, args.reduce_bits);
    pe.scratchpad_banks = args.banks;
    let mem = MemoryModel::with_bandwidth(args.bandwidth_gbps * 1e9);
    let spec = args.dtype.spec();
    println!(
        "pe {}x{}, {}-bit reduce, {:.3} GHz, {} GB/s, target {}, {}",
        args.pe.0,
        args.pe.1,
        args.reduce_bits,
        args.freq_hz / 1e9,
        args.bandwidth_gbps,
        args.target,
        args.dtype
    );
    let r = match size_scratchpad_capped(&pe, &mem, spec, args.target, args.cap) {
        Ok(r) => r,
        Err(e @ SizingError::Infeasible { .. }) => {
            println!("infeasible: {e}");
            return Ok(false);
        }
        Err(e) => return Err(e.into()),
    };
    let cfg = pe.with_residency(r.m_scp, r.n_scp);
    let footprint = scratchpad_footprint_bytes(&cfg, spec);
    let over = footprint > args.budget_bytes;
    println!("residency: {}x{} (exact {:.2}), k_scp {} B", r.m_scp, r.n_scp, r.exact, r.k_scp_bytes);
    println!("bound: {:.4}", r.bound);
    println!(
        "footprint: {footprint} B ({:.1} KiB){}",
        footprint as f64 / 1024.0,
        if over {
            format!(", exceeds the {} B budget", args.budget_bytes)
        } else {
            String::new()
        }
    );
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let json = serde_json::json!({
            "m_scp": r.m_scp,
            "n_scp": r.n_scp,
            "k_scp_bytes": r.k_scp_bytes,
            "exact": r.exact,
            "bound": r.bound,
            "footprint_bytes": footprint,
            "over_budget": over,
        });
        let path = dir.join("dse.json");
        fs::write(&path, serde_json::to_string_pretty(&json)? + "\n")?;
    }
    Ok(true)
}

/// Memory image holding seeded random A, B and bias for `desc`.
fn seeded_memory(desc: &MatMulDescriptor, seed: u64) -> Result<SimMemory> {
    let extents = [Some(desc.a_extent()), Some(desc.b_extent()), desc.bias_extent(), Some(desc.c_extent())];
    let end = extents.iter().flatten().map(|e| e.end()).max().unwrap_or(0);
    if end > u128::from(MAX_FUNCTIONAL_BYTES) {
        bail!("descriptor spans {end} bytes; functional traces are limited to {MAX_FUNCTIONAL_BYTES}");
    }
    let mut mem = SimMemory::new(end as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_operand(desc.m, desc.k, desc.dtype, &mut rng);
    let b = random_operand(desc.k, desc.n, desc.dtype, &mut rng);
    mem.write_tensor(desc.base_a, desc.stride_a.into(), &a)?;
    mem.write_tensor(desc.base_b, desc.stride_b.into(), &b)?;
    if let Some(e) = desc.bias_extent() {
        let mut bias = TensorBuffer::zeros(e.rows, desc.n, desc.acc_elem());
        for r in 0..e.rows {
            for c in 0..desc.n {
                bias.set_value(r, c, f64::from(rng.gen_range(-64i32..64)));
            }
        }
        mem.write_tensor(e.base, e.stride, &bias)?;
    }
    Ok(mem)
}

fn trace(args: &TraceArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => load_system(p)?,
        None => SystemConfig::case_study(),
    };
    let desc: MatMulDescriptor = args.desc.parse().map_err(|e| anyhow::anyhow!("--desc: {e}"))?;
    let image = if args.functional { Some(seeded_memory(&desc, args.seed)?) } else { None };
    let space = image.as_ref().map_or(TIMING_ADDRESS_SPACE, SimMemory::size);
    if let Err(errs) = isa::validate(&desc, space) {
        let msg: Vec<String> = errs.iter().map(ToString::to_string).collect();
        bail!("descriptor rejected: {}", msg.join("; "));
    }
    let out = simulate_op(&desc, &cfg.arch, &cfg.memory, image.as_ref(), true)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let trace_path = args.out.join("trace.csv");
    let file = fs::File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    emit_trace(&out.events, std::io::BufWriter::new(file))?;
    let report = serde_json::json!({
        "descriptor": desc,
        "functional": args.functional,
        "seed": args.seed,
        "completion_cycle": out.completion,
        "report": out.report,
    });
    let report_path = args.out.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    if let Some(c) = &out.output {
        fs::write(args.out.join("c.bin"), c.as_bytes())?;
    }
    println!(
        "{} cycles, utilization {:.4}, {} B read, {} B written, {} events",
        out.report.total_cycles,
        out.report.utilization,
        out.report.bytes_read,
        out.report.bytes_written,
        out.events.len()
    );
    println!("wrote {} and {}", trace_path.display(), report_path.display());
    Ok(())
}

/// Joins the error chain, skipping causes whose text the parent already
/// includes.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(a) => validate(a).map(|_| true),
        Command::Predict(a) => predict(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Dse(a) => dse(a),
        Command::Trace(a) => trace(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}
