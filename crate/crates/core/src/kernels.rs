//! Tiled GEMM kernels in the software-pipelined (fused) and serial
//! (unfused) forms.
//!
//! Fused schedule for `n` tiles:
//!
//! ```text
//! issue 0
//! for i in 1..n { issue i; check; epilogue i-1 }
//! check; epilogue n-1
//! ```
//!
//! Unfused: issue and check each tile in turn, then run every epilogue.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archconfig::{ArchConfig, ConfigError, DataKind, ElemType, MemoryModel};
use crate::engine::{run_program, CpuModel, EngineError, MatrixUnit, ProgramError, ProgramReport, Step, TileRef, TimelineEvent, VectorStep};
use crate::isa::{MatMulDescriptor, OpHandle};
use crate::memory::{MemoryError, SimMemory, TensorBuffer};
use crate::vector::{VecOp, VectorConfig, VectorError, VectorTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    Fused,
    Unfused,
}

impl fmt::Display for KernelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelMode::Fused => "fused",
            KernelMode::Unfused => "unfused",
        })
    }
}

impl FromStr for KernelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fused" => Ok(KernelMode::Fused),
            "unfused" => Ok(KernelMode::Unfused),
            other => Err(format!("unknown kernel mode `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("problem dimensions must be at least 1, got {m}x{n}x{k}")]
    Shape { m: u32, n: u32, k: u32 },
    #[error("tile {tile_m}x{tile_n} exceeds scratchpad residency {m_scp}x{n_scp}")]
    TileTooLarge { tile_m: u32, tile_n: u32, m_scp: u32, n_scp: u32 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Byte addresses of the kernel operands in simulated memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    /// Epilogue output; separate from C.
    pub out: u64,
    pub end: u64,
}

const ALIGN: u64 = 64;

fn bump(cursor: &mut u64, bytes: u64) -> u64 {
    let at = *cursor;
    *cursor = (at + bytes).div_ceil(ALIGN) * ALIGN;
    at
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub mi: u32,
    pub ni: u32,
    pub desc: MatMulDescriptor,
    pub epilogue: Option<VectorStep>,
}

/// An ordered schedule of matrix tasks, checks and vector epilogues.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPlan {
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub dtype: DataKind,
    pub tile_m: u32,
    pub tile_n: u32,
    pub mode: KernelMode,
    pub layout: Layout,
    pub out_elem: ElemType,
    pub tiles: Vec<TilePlan>,
    pub steps: Vec<Step>,
}

impl KernelPlan {
    pub fn mac_count(&self) -> u64 {
        u64::from(self.m) * u64::from(self.n) * u64::from(self.k)
    }

    pub fn has_epilogue(&self) -> bool {
        self.tiles.iter().any(|t| t.epilogue.is_some())
    }
}

/// Element type an epilogue chain produces from accumulator input.
pub fn epilogue_out_elem(chain: &[VecOp]) -> ElemType {
    let last = chain
        .iter()
        .rev()
        .find(|op| matches!(op, VecOp::Quantize { .. } | VecOp::Dequantize { .. }));
    match last {
        Some(VecOp::Quantize { .. }) => ElemType::Int8,
        _ => ElemType::Fp32,
    }
}

/// Plans with tiles as large as the scratchpad residency allows.
pub fn plan_gemm(
    m: u32,
    n: u32,
    k: u32,
    cfg: &ArchConfig,
    dtype: DataKind,
    epilogue: &[VecOp],
    mode: KernelMode,
) -> Result<KernelPlan, KernelError> {
    plan_gemm_tiled(m, n, k, cfg, dtype, epilogue, mode, cfg.m_scp.min(m), cfg.n_scp.min(n))
}

#[allow(clippy::too_many_arguments)]
pub fn plan_gemm_tiled(
    m: u32,
    n: u32,
    k: u32,
    cfg: &ArchConfig,
    dtype: DataKind,
    epilogue: &[VecOp],
    mode: KernelMode,
    tile_m: u32,
    tile_n: u32,
) -> Result<KernelPlan, KernelError> {
    if m == 0 || n == 0 || k == 0 {
        return Err(KernelError::Shape { m, n, k });
    }
    cfg.validate_for(dtype)?;
    if tile_m == 0 || tile_n == 0 || tile_m > cfg.m_scp || tile_n > cfg.n_scp {
        return Err(KernelError::TileTooLarge {
            tile_m,
            tile_n,
            m_scp: cfg.m_scp,
            n_scp: cfg.n_scp,
        });
    }
    let eb = u64::from(dtype.bytes());
    let acc = dtype.accumulator().elem();
    let ab = u64::from(acc.bytes());
    let out_elem = epilogue_out_elem(epilogue);
    let (m64, n64, k64) = (u64::from(m), u64::from(n), u64::from(k));
    let mut cursor = 0;
    let a = bump(&mut cursor, m64 * k64 * eb);
    let b = bump(&mut cursor, k64 * n64 * eb);
    let c = bump(&mut cursor, m64 * n64 * ab);
    let out = if epilogue.is_empty() {
        c
    } else {
        bump(&mut cursor, m64 * n64 * u64::from(out_elem.bytes()))
    };
    let layout = Layout { a, b, c, out, end: cursor.max(ALIGN) };

    let mut tiles = Vec::new();
    for mi in 0..m.div_ceil(tile_m) {
        for ni in 0..n.div_ceil(tile_n) {
            let (m0, n0) = (mi * tile_m, ni * tile_n);
            let (mt, nt) = (tile_m.min(m - m0), tile_n.min(n - n0));
            let desc = MatMulDescriptor {
                base_a: a + u64::from(m0) * k64 * eb,
                base_b: b + u64::from(n0) * eb,
                base_c: c + (u64::from(m0) * n64 + u64::from(n0)) * ab,
                stride_a: (k64 * eb) as u32,
                stride_b: (n64 * eb) as u32,
                stride_c: (n64 * ab) as u32,
                ..MatMulDescriptor::packed(mt, nt, k, dtype, 0, 0, 0)
            };
            let index = tiles.len() as u64;
            let epi = (!epilogue.is_empty()).then(|| VectorStep {
                task: VectorTask {
                    ops: epilogue.to_vec(),
                    rows: mt,
                    cols: nt,
                    dtype_in: acc,
                    dtype_out: out_elem,
                },
                src: TileRef {
                    base: desc.base_c,
                    stride: u64::from(desc.stride_c),
                    rows: mt,
                    cols: nt,
                    elem: acc,
                },
                dst: TileRef {
                    base: out + (u64::from(m0) * n64 + u64::from(n0)) * u64::from(out_elem.bytes()),
                    stride: n64 * u64::from(out_elem.bytes()),
                    rows: mt,
                    cols: nt,
                    elem: out_elem,
                },
                after: Some(OpHandle(index)),
            });
            tiles.push(TilePlan { mi, ni, desc, epilogue: epi });
        }
    }

    let epi = |i: usize| tiles[i].epilogue.clone().map(Step::Vector);
    let mut steps = Vec::new();
    match mode {
        KernelMode::Fused => {
            steps.push(Step::Issue(tiles[0].desc.clone()));
            for (i, t) in tiles.iter().enumerate().skip(1) {
                steps.push(Step::Issue(t.desc.clone()));
                steps.push(Step::Check);
                steps.extend(epi(i - 1));
            }
            steps.push(Step::Check);
            steps.extend(epi(tiles.len() - 1));
        }
        KernelMode::Unfused => {
            for t in &tiles {
                steps.push(Step::Issue(t.desc.clone()));
                steps.push(Step::Check);
            }
            for i in 0..tiles.len() {
                steps.extend(epi(i));
            }
        }
    }

    Ok(KernelPlan {
        m,
        n,
        k,
        dtype,
        tile_m,
        tile_n,
        mode,
        layout,
        out_elem,
        tiles,
        steps,
    })
}

/// Random operand data with moderate magnitudes. Integers take any code;
/// floats are drawn from `[-2, 2)` and rounded into the format.
pub fn random_operand<R: Rng>(rows: u32, cols: u32, kind: DataKind, rng: &mut R) -> TensorBuffer {
    if kind == DataKind::Int8 {
        return TensorBuffer::random(rows, cols, ElemType::Int8, rng);
    }
    let mut t = TensorBuffer::zeros(rows, cols, kind.elem());
    for r in 0..rows {
        for c in 0..cols {
            t.set_value(r, c, rng.gen_range(-2.0..2.0));
        }
    }
    t
}

#[derive(Debug, Clone)]
pub struct ExecResult {
    pub report: ProgramReport,
    /// Epilogue output, or C without an epilogue; only when run with data.
    pub output: Option<TensorBuffer>,
    pub events: Vec<TimelineEvent>,
}

/// Runs `plan` on a fresh unit. With `seed`, A and B are filled from it and
/// values are computed; without, only timing is modelled.
pub fn execute_plan(
    plan: &KernelPlan,
    cfg: &ArchConfig,
    mem: &MemoryModel,
    vcfg: &VectorConfig,
    seed: Option<u64>,
    trace: bool,
) -> Result<ExecResult, KernelError> {
    vcfg.validate()?;
    let mut unit = match seed {
        Some(seed) => {
            let mut memory = SimMemory::new(plan.layout.end as usize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_operand(plan.m, plan.k, plan.dtype, &mut rng);
            let b = random_operand(plan.k, plan.n, plan.dtype, &mut rng);
            memory.write_tensor(plan.layout.a, a.row_bytes(), &a)?;
            memory.write_tensor(plan.layout.b, b.row_bytes(), &b)?;
            MatrixUnit::functional(cfg, mem, memory, trace)?
        }
        None => MatrixUnit::timing_only(cfg, mem, plan.layout.end, trace)?,
    };
    let report = run_program(&plan.steps, &mut unit, vcfg, &CpuModel::default())?;
    let output = if seed.is_some() {
        let elem = if plan.has_epilogue() { plan.out_elem } else { plan.dtype.accumulator().elem() };
        let stride = u64::from(plan.n) * u64::from(elem.bytes());
        Some(unit.memory().read_tensor(plan.layout.out, plan.m, plan.n, stride, elem)?)
    } else {
        None
    };
    Ok(ExecResult {
        report,
        output,
        events: unit.take_events(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub k: u32,
    pub cycles: u64,
    pub utilization: f64,
}

/// Plain GEMM (no epilogue) at fixed `m x n` for each K, timing only.
pub fn gemm_sweep(
    m: u32,
    n: u32,
    ks: &[u32],
    cfg: &ArchConfig,
    mem: &MemoryModel,
    dtype: DataKind,
) -> Result<Vec<SweepPoint>, KernelError> {
    ks.iter()
        .map(|&k| {
            let plan = plan_gemm(m, n, k, cfg, dtype, &[], KernelMode::Fused)?;
            let r = execute_plan(&plan, cfg, mem, &VectorConfig::default(), None, false)?;
            Ok(SweepPoint {
                k,
                cycles: r.report.total_cycles,
                utilization: r.report.matrix.utilization,
            })
        })
        .collect()
}

/// A 2-D convolution lowered to an implicit GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub batch: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    pub height: u32,
    pub width: u32,
    pub kernel_h: u32,
    pub kernel_w: u32,
    pub stride: u32,
    pub padding: u32,
}

impl Conv2d {
    pub fn output_hw(&self) -> (u32, u32) {
        let s = self.stride.max(1);
        let oh = (self.height + 2 * self.padding).saturating_sub(self.kernel_h) / s + 1;
        let ow = (self.width + 2 * self.padding).saturating_sub(self.kernel_w) / s + 1;
        (oh, ow)
    }

    /// `(M, N, K)`: output pixels by output channels by receptive field.
    pub fn gemm_dims(&self) -> (u32, u32, u32) {
        let (oh, ow) = self.output_hw();
        (
            self.batch * oh * ow,
            self.out_channels,
            self.in_channels * self.kernel_h * self.kernel_w,
        )
    }
}

pub fn plan_conv2d(
    conv: &Conv2d,
    cfg: &ArchConfig,
    dtype: DataKind,
    epilogue: &[VecOp],
    mode: KernelMode,
) -> Result<KernelPlan, KernelError> {
    let (m, n, k) = conv.gemm_dims();
    plan_gemm(m, n, k, cfg, dtype, epilogue, mode)
}
