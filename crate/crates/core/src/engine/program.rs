//! Drives a CPU instruction script against one matrix unit on a shared clock.
//!
//! The CPU lane issues matrix work, blocks on checks, and executes vector
//! tasks itself. The matrix unit runs concurrently; only checks and
//! queue-full issues make the CPU wait for it.

use serde::Serialize;
use thiserror::Error;

use super::{EngineError, EventKind, MatrixUnit, Resource, SimReport};
use crate::archconfig::ElemType;
use crate::isa::{AsyncInterface, Extent, IsaError, MatMulDescriptor, MatrixBackend, OpHandle};
use crate::memory::MemoryError;
use crate::vector::{vec_cost, vec_execute, VectorConfig, VectorError, VectorTask};

/// A strided matrix region in simulated memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TileRef {
    pub base: u64,
    pub stride: u64,
    pub rows: u32,
    pub cols: u32,
    pub elem: ElemType,
}

impl TileRef {
    pub fn extent(&self) -> Extent {
        Extent {
            base: self.base,
            rows: self.rows,
            row_bytes: u64::from(self.cols) * u64::from(self.elem.bytes()),
            stride: self.stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStep {
    pub task: VectorTask,
    pub src: TileRef,
    pub dst: TileRef,
    /// Matrix operation whose output this step consumes.
    pub after: Option<OpHandle>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Issue(MatMulDescriptor),
    /// Retires the oldest unchecked operation.
    Check,
    /// Checks repeatedly until `handle` has been retired.
    Wait(OpHandle),
    Vector(VectorStep),
    /// Plain CPU work of the given length.
    Scalar(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuModel {
    pub issue_cycles: u64,
    pub check_cycles: u64,
}

impl Default for CpuModel {
    fn default() -> Self {
        CpuModel {
            issue_cycles: 1,
            check_cycles: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("step {step}: wait on {handle}, but only {issued} operations were issued")]
    Deadlock { step: usize, handle: OpHandle, issued: u64 },
    #[error("step {step}: vector task reads the output of {handle} before it was checked")]
    DependencyViolation { step: usize, handle: OpHandle },
    #[error("step {step}: {source}")]
    Isa {
        step: usize,
        #[source]
        source: IsaError<EngineError>,
    },
    #[error("step {step}: {source}")]
    Vector {
        step: usize,
        #[source]
        source: VectorError,
    },
    #[error("step {step}: {source}")]
    Memory {
        step: usize,
        #[source]
        source: MemoryError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgramReport {
    pub total_cycles: u64,
    /// Union of the intervals during which some operation was in flight.
    pub matrix_active_cycles: u64,
    /// Cycles the CPU lane spent doing work (issue, check, vector, scalar).
    pub cpu_busy_cycles: u64,
    pub vector_cycles: u64,
    /// Cycles the CPU lane spent blocked on the matrix unit.
    pub stall_cycles: u64,
    /// `(handle, cycle)` for every check that retired an operation.
    pub retired: Vec<(u64, u64)>,
    pub matrix: SimReport,
}

/// Executes `steps` on `unit` starting at cycle 0 of a fresh interface.
pub fn run_program(
    steps: &[Step],
    unit: &mut MatrixUnit,
    vcfg: &VectorConfig,
    cpu: &CpuModel,
) -> Result<ProgramReport, ProgramError> {
    let queue_depth = unit.config().queue_depth;
    let mut isa = AsyncInterface::new(queue_depth, unit.address_space());
    let mut now = 0u64;
    let mut busy = 0u64;
    let mut stall = 0u64;
    let mut vector_cycles = 0u64;
    let mut retired = Vec::new();

    let check = |isa: &mut AsyncInterface,
                 unit: &mut MatrixUnit,
                 now: &mut u64,
                 busy: &mut u64,
                 stall: &mut u64,
                 retired: &mut Vec<(u64, u64)>| {
        let c = isa.check_matmul(unit, *now);
        *stall += c.resume_at - *now;
        if let Some(h) = c.handle {
            retired.push((h.0, c.resume_at));
            unit.push_event(c.resume_at, Resource::Cpu, EventKind::Retire, h.to_string());
        }
        *now = c.resume_at + cpu.check_cycles;
        *busy += cpu.check_cycles;
    };

    for (step, s) in steps.iter().enumerate() {
        match s {
            Step::Issue(desc) => {
                let r = isa
                    .async_matmul(unit, desc, now)
                    .map_err(|source| ProgramError::Isa { step, source })?;
                if r.stall_cycles > 0 {
                    unit.push_event(now, Resource::Cpu, EventKind::Stall, r.handle.to_string());
                }
                unit.push_event(r.accepted_at, Resource::Cpu, EventKind::Issue, r.handle.to_string());
                stall += r.stall_cycles;
                now = r.accepted_at + cpu.issue_cycles;
                busy += cpu.issue_cycles;
            }
            Step::Check => check(&mut isa, unit, &mut now, &mut busy, &mut stall, &mut retired),
            Step::Wait(h) => {
                if h.0 >= isa.issued() {
                    return Err(ProgramError::Deadlock {
                        step,
                        handle: *h,
                        issued: isa.issued(),
                    });
                }
                while isa.checked() <= h.0 {
                    check(&mut isa, unit, &mut now, &mut busy, &mut stall, &mut retired);
                }
            }
            Step::Vector(v) => {
                if let Some(h) = v.after {
                    if isa.checked() <= h.0 {
                        return Err(ProgramError::DependencyViolation { step, handle: h });
                    }
                }
                let src = v.src.extent();
                for id in isa.checked()..isa.issued() {
                    if unit.c_extent(OpHandle(id)).overlaps(&src) {
                        return Err(ProgramError::DependencyViolation {
                            step,
                            handle: OpHandle(id),
                        });
                    }
                }
                let cost = vec_cost(&v.task, vcfg).map_err(|source| ProgramError::Vector { step, source })?;
                if unit.options().functional {
                    let mem = unit.memory_mut();
                    let input = mem
                        .read_tensor(v.src.base, v.src.rows, v.src.cols, v.src.stride, v.src.elem)
                        .map_err(|source| ProgramError::Memory { step, source })?;
                    let out = vec_execute(&v.task, &input).map_err(|source| ProgramError::Vector { step, source })?;
                    mem.write_tensor(v.dst.base, v.dst.stride, &out)
                        .map_err(|source| ProgramError::Memory { step, source })?;
                }
                let tag = match v.after {
                    Some(h) => format!("{h}:epilogue"),
                    None => "vector".to_string(),
                };
                unit.push_event(now, Resource::Vector, EventKind::Start, tag.clone());
                unit.push_event(now + cost, Resource::Vector, EventKind::Stop, tag);
                unit.add_busy(Resource::Vector, cost);
                now += cost;
                busy += cost;
                vector_cycles += cost;
            }
            Step::Scalar(c) => {
                now += c;
                busy += c;
            }
        }
    }

    let mut intervals: Vec<(u64, u64)> = (0..isa.issued())
        .map(|id| {
            let h = OpHandle(id);
            (unit.accepted_at(h), unit.completion(h))
        })
        .collect();
    let end = intervals.iter().map(|&(_, e)| e).max().unwrap_or(0).max(now);
    intervals.sort_unstable();
    let mut active = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in intervals {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                active += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        active += ce - cs;
    }
    unit.add_busy(Resource::Cpu, busy);

    Ok(ProgramReport {
        total_cycles: end,
        matrix_active_cycles: active,
        cpu_busy_cycles: busy,
        vector_cycles,
        stall_cycles: stall,
        retired,
        matrix: unit.report(end),
    })
}
