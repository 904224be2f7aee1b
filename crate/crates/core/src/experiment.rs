//! Batch experiments: configuration grids crossed with GEMM workloads.
//!
//! Rows run in parallel but are written in input order, and every random
//! input is drawn from a stream keyed by `(seed, row index)`, so outputs
//! are byte-identical across runs and worker counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archconfig::{
    scratchpad_footprint_bytes, size_scratchpad, tile_times, utilization_bound, ArchConfig, ConfigError, DataKind,
    MemoryModel, PeArray, SizingError, DEFAULT_FOOTPRINT_BUDGET_BYTES, DEFAULT_RESIDENCY_CAP,
};
use crate::config::{load_toml, LoadError};
use crate::kernels::{execute_plan, plan_gemm, KernelError, KernelMode};
use crate::vector::{parse_chain, VectorConfig, VectorError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(u32),
    Many(Vec<u32>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<u32> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSel {
    #[default]
    Fused,
    Unfused,
    Both,
}

impl ModeSel {
    pub fn modes(self) -> Vec<KernelMode> {
        match self {
            ModeSel::Fused => vec![KernelMode::Fused],
            ModeSel::Unfused => vec![KernelMode::Unfused],
            ModeSel::Both => vec![KernelMode::Fused, KernelMode::Unfused],
        }
    }
}

fn default_dtype() -> DataKind {
    DataKind::Int8
}

/// Shapes a workload after each configuration's residency, so every tile
/// is full and the per-tile reuse matches the analytic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fit {
    /// M and N in whole residency tiles.
    pub tiles: u32,
    /// Lower bound on K as a multiple of `m_scp`; long K amortizes the
    /// output writeback, which the bound leaves out.
    #[serde(default)]
    pub k_per_row: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub id: String,
    /// Ignored when `fit` is set.
    #[serde(default)]
    pub m: u32,
    #[serde(default)]
    pub n: u32,
    pub k: OneOrMany,
    #[serde(default)]
    pub fit: Option<Fit>,
    #[serde(default = "default_dtype")]
    pub dtype: DataKind,
    /// Op chain literal, e.g. `"dequantize:0.01+silu+quantize:0.05"`.
    #[serde(default)]
    pub epilogue: String,
    #[serde(default)]
    pub mode: ModeSel,
}

impl Workload {
    /// Problem shape on `arch` for the listed `k`.
    pub fn dims(&self, arch: &ArchConfig, k: u32) -> (u32, u32, u32) {
        match self.fit {
            Some(f) => (
                f.tiles.saturating_mul(arch.m_scp),
                f.tiles.saturating_mul(arch.n_scp),
                k.max(f.k_per_row.saturating_mul(arch.m_scp)),
            ),
            None => (self.m, self.n, k),
        }
    }
}

fn default_freq() -> f64 {
    2.0e9
}
fn default_target() -> f64 {
    0.8
}

/// PE shapes x reduce widths x bandwidths, each sized by the scratchpad
/// explorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Square PE array edges.
    pub pe: Vec<u32>,
    pub reduce_bits: Vec<u32>,
    pub bandwidth_gbps: Vec<f64>,
    #[serde(default = "default_target")]
    pub target_util: f64,
    #[serde(default = "default_freq")]
    pub freq_hz: f64,
    /// Data type the scratchpad is sized for.
    #[serde(default = "default_dtype")]
    pub dtype: DataKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub seed: u64,
    /// Compute values as well as timing (slower).
    #[serde(default)]
    pub functional: bool,
    pub memory: MemoryModel,
    #[serde(default)]
    pub vector: VectorConfig,
    /// Explicit configurations keyed by id.
    #[serde(default)]
    pub config: BTreeMap<String, ArchConfig>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default, rename = "workload")]
    pub workloads: Vec<Workload>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        load_toml(path)
    }
}

/// One configuration point of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigPoint {
    pub id: String,
    pub arch: ArchConfig,
    pub memory: MemoryModel,
    /// Sizing remark, e.g. a capped infeasible target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("sizing {id}: {source}")]
    Sizing {
        id: String,
        #[source]
        source: SizingError,
    },
    #[error("experiment defines no configurations")]
    NoConfigs,
    #[error("workload {id}: {source}")]
    Workload {
        id: String,
        #[source]
        source: VectorError,
    },
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Expands explicit configurations and the grid, in a fixed order.
pub fn config_points(spec: &ExperimentSpec) -> Result<Vec<ConfigPoint>, ExperimentError> {
    let mut out = Vec::new();
    for (id, arch) in &spec.config {
        arch.validate()?;
        out.push(ConfigPoint {
            id: id.clone(),
            arch: arch.clone(),
            memory: spec.memory.clone(),
            note: None,
        });
    }
    if let Some(grid) = &spec.grid {
        for &pe in &grid.pe {
            for &bits in &grid.reduce_bits {
                for &gbps in &grid.bandwidth_gbps {
                    let id = format!("pe{pe}x{pe}_r{bits}_bw{gbps}");
                    let memory = MemoryModel {
                        bandwidth_bytes_per_s: gbps * 1e9,
                        ..spec.memory.clone()
                    };
                    let pe_arr = PeArray::new(grid.freq_hz, pe, pe, bits);
                    let (arch, note) = match size_scratchpad(&pe_arr, &memory, grid.dtype.spec(), grid.target_util) {
                        Ok(r) => {
                            let arch = pe_arr.with_residency(r.m_scp, r.n_scp);
                            let fp = scratchpad_footprint_bytes(&arch, grid.dtype.spec());
                            let note = (fp > DEFAULT_FOOTPRINT_BUDGET_BYTES)
                                .then(|| format!("scratchpad footprint {fp} B exceeds budget"));
                            (arch, note)
                        }
                        Err(SizingError::Infeasible { .. }) => {
                            let cap = DEFAULT_RESIDENCY_CAP;
                            (
                                pe_arr.with_residency(cap, cap),
                                Some(format!("target infeasible; residency capped at {cap}")),
                            )
                        }
                        Err(source) => return Err(ExperimentError::Sizing { id, source }),
                    };
                    out.push(ConfigPoint { id, arch, memory, note });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(ExperimentError::NoConfigs);
    }
    Ok(out)
}

/// One simulated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config_id: String,
    pub workload_id: String,
    pub dtype: DataKind,
    #[serde(rename = "M")]
    pub m: u32,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "K")]
    pub k: u32,
    pub mode: KernelMode,
    pub cycles: u64,
    pub utilization: f64,
    pub analytic_bound: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowFailure {
    pub config_id: String,
    pub workload_id: String,
    #[serde(rename = "K")]
    pub k: u32,
    pub mode: KernelMode,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelRow {
    pub config_id: String,
    #[serde(rename = "K")]
    pub k: u32,
    pub workload_id: String,
    pub mode: KernelMode,
    pub cycles: u64,
    pub utilization: f64,
    /// Unfused cycles over these cycles, when the unfused run exists.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone)]
struct Job {
    index: usize,
    config: usize,
    workload: usize,
    k: u32,
    mode: KernelMode,
}

/// Per-row seed derived from the experiment seed.
pub fn row_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, Default)]
pub struct SweepResults {
    pub configs: Vec<ConfigPoint>,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<RowFailure>,
    pub kernels: Vec<KernelRow>,
}

/// Runs every `(config, workload, K, mode)` combination. `workers` of
/// `None` uses rayon's default pool size.
pub fn run_sweep(spec: &ExperimentSpec, workers: Option<usize>) -> Result<SweepResults, ExperimentError> {
    spec.memory.validate()?;
    spec.vector.validate()?;
    let configs = config_points(spec)?;
    let chains = spec
        .workloads
        .iter()
        .map(|w| {
            parse_chain(&w.epilogue).map_err(|source| ExperimentError::Workload {
                id: w.id.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut jobs = Vec::new();
    for c in 0..configs.len() {
        for (w, wl) in spec.workloads.iter().enumerate() {
            for k in wl.k.values() {
                for mode in wl.mode.modes() {
                    jobs.push(Job {
                        index: jobs.len(),
                        config: c,
                        workload: w,
                        k,
                        mode,
                    });
                }
            }
        }
    }

    let run = |job: &Job| -> Result<SweepRow, RowFailure> {
        let cp = &configs[job.config];
        let wl = &spec.workloads[job.workload];
        let fail = |e: String| RowFailure {
            config_id: cp.id.clone(),
            workload_id: wl.id.clone(),
            k: job.k,
            mode: job.mode,
            error: e,
        };
        let (m, n, k) = wl.dims(&cp.arch, job.k);
        let plan = plan_gemm(m, n, k, &cp.arch, wl.dtype, &chains[job.workload], job.mode)
            .map_err(|e| fail(e.to_string()))?;
        let seed = spec.functional.then(|| row_seed(spec.seed, job.index));
        let r = execute_plan(&plan, &cp.arch, &cp.memory, &spec.vector, seed, false).map_err(|e: KernelError| fail(e.to_string()))?;
        let bound = utilization_bound(&cp.arch.clamped_to(m, n), &cp.memory, wl.dtype.spec())
            .map_err(|e| fail(e.to_string()))?;
        Ok(SweepRow {
            config_id: cp.id.clone(),
            workload_id: wl.id.clone(),
            dtype: wl.dtype,
            m,
            n,
            k,
            mode: job.mode,
            cycles: r.report.total_cycles,
            utilization: r.report.matrix.utilization,
            analytic_bound: bound,
            bytes_read: r.report.matrix.bytes_read,
            bytes_written: r.report.matrix.bytes_written,
        })
    };

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| ExperimentError::Pool(e.to_string()))?
    };
    let outcomes: Vec<Result<SweepRow, RowFailure>> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut results = SweepResults {
        configs,
        ..SweepResults::default()
    };
    for o in outcomes {
        match o {
            Ok(r) => results.rows.push(r),
            Err(f) => results.failures.push(f),
        }
    }
    let unfused: BTreeMap<(String, String, u32), u64> = results
        .rows
        .iter()
        .filter(|r| r.mode == KernelMode::Unfused)
        .map(|r| ((r.config_id.clone(), r.workload_id.clone(), r.k), r.cycles))
        .collect();
    results.kernels = results
        .rows
        .iter()
        .map(|r| KernelRow {
            config_id: r.config_id.clone(),
            k: r.k,
            workload_id: r.workload_id.clone(),
            mode: r.mode,
            cycles: r.cycles,
            utilization: r.utilization,
            speedup: unfused
                .get(&(r.config_id.clone(), r.workload_id.clone(), r.k))
                .map(|&u| u as f64 / r.cycles as f64),
        })
        .collect();
    Ok(results)
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub const SWEEP_HEADER: [&str; 12] = [
    "config_id",
    "workload_id",
    "dtype",
    "M",
    "N",
    "K",
    "mode",
    "cycles",
    "utilization",
    "analytic_bound",
    "bytes_read",
    "bytes_written",
];

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    seed: u64,
    functional: bool,
    rows: usize,
    failures: usize,
    files: [&'a str; 3],
    configs: &'a [ConfigPoint],
}

/// Writes `sweep.csv`, `sweep_errors.csv`, `kernels.csv` and
/// `manifest.json` into `dir`. Returns the written paths.
pub fn write_outputs(spec: &ExperimentSpec, results: &SweepResults, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let out_err = |path: &Path, message: String| ExperimentError::Output {
        path: path.display().to_string(),
        message,
    };
    fs::create_dir_all(dir).map_err(|e| out_err(dir, e.to_string()))?;
    let files = ["sweep.csv", "sweep_errors.csv", "kernels.csv"];
    let bodies = [
        csv_bytes(&results.rows, &SWEEP_HEADER),
        csv_bytes(&results.failures, &["config_id", "workload_id", "K", "mode", "error"]),
        csv_bytes(
            &results.kernels,
            &["config_id", "K", "workload_id", "mode", "cycles", "utilization", "speedup"],
        ),
    ];
    let mut written = Vec::new();
    for (name, body) in files.iter().zip(bodies) {
        let path = dir.join(name);
        let body = body.map_err(|e| out_err(&path, e.to_string()))?;
        fs::write(&path, body).map_err(|e| out_err(&path, e.to_string()))?;
        written.push(path);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: spec.seed,
        functional: spec.functional,
        rows: results.rows.len(),
        failures: results.failures.len(),
        files,
        configs: &results.configs,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| out_err(&path, e.to_string()))?;
    written.push(path);
    Ok(written)
}

/// Analytic prediction for one configuration and problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub config_id: String,
    pub workload_id: String,
    pub dtype: DataKind,
    #[serde(rename = "M")]
    pub m: u32,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "K")]
    pub k: u32,
    pub peak_ops_per_s: f64,
    pub tile_compute_s: f64,
    pub tile_memory_s: f64,
    pub constraint_holds: bool,
    pub analytic_bound: f64,
    /// Cycles at full PE utilization.
    pub ideal_cycles: u64,
    /// `ideal_cycles / analytic_bound`.
    pub predicted_cycles: u64,
}

pub fn predict(cp: &ConfigPoint, wl: &Workload, k: u32) -> Result<Prediction, ConfigError> {
    let spec = wl.dtype.spec();
    let (m, n, k) = wl.dims(&cp.arch, k);
    let clamped = cp.arch.clamped_to(m, n);
    let t = tile_times(&clamped, &cp.memory, spec)?;
    let bound = utilization_bound(&clamped, &cp.memory, spec)?;
    let macs = u64::from(m) * u64::from(n) * u64::from(k);
    let ideal = macs.div_ceil(cp.arch.macs_per_cycle(wl.dtype));
    Ok(Prediction {
        config_id: cp.id.clone(),
        workload_id: wl.id.clone(),
        dtype: wl.dtype,
        m,
        n,
        k,
        peak_ops_per_s: crate::archconfig::peak_throughput(&cp.arch, spec)?,
        tile_compute_s: t.compute_s,
        tile_memory_s: t.memory_s,
        constraint_holds: t.compute_s <= t.memory_s,
        analytic_bound: bound,
        ideal_cycles: ideal,
        predicted_cycles: (ideal as f64 / bound).ceil() as u64,
    })
}

/// Predictions for every configuration, workload and K of `spec`.
pub fn predict_all(spec: &ExperimentSpec) -> Result<Vec<Prediction>, ExperimentError> {
    let configs = config_points(spec)?;
    let mut out = Vec::new();
    for cp in &configs {
        for wl in &spec.workloads {
            for k in wl.k.values() {
                out.push(predict(cp, wl, k)?);
            }
        }
    }
    Ok(out)
}

pub fn predictions_csv(rows: &[Prediction]) -> Result<Vec<u8>, csv::Error> {
    csv_bytes(
        rows,
        &[
            "config_id",
            "workload_id",
            "dtype",
            "M",
            "N",
            "K",
            "peak_ops_per_s",
            "tile_compute_s",
            "tile_memory_s",
            "constraint_holds",
            "analytic_bound",
            "ideal_cycles",
            "predicted_cycles",
        ],
    )
}
