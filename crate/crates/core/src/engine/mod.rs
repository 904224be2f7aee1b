//! Cycle-approximate timing of the matrix unit.
//!
//! A loader fetches A/B chunks (plus bias on the first chunk of a tile) into
//! alternating scratchpad banks over a single memory channel. The PE array
//! consumes one chunk at a time; accumulators stay resident until the last
//! chunk of a tile, after which the tile is written back over the same
//! channel. Reads and writebacks share the channel first come, first served.
//!
//! Each operation is scheduled when it is accepted. Writebacks that are not
//! yet due stay queued so that later loads can be ordered against them.

mod program;
mod report;
mod tiling;
mod trace;

use std::collections::VecDeque;

use thiserror::Error;

use crate::archconfig::{ArchConfig, ConfigError, MemoryModel};
use crate::isa::{validate, DescriptorError, MatMulDescriptor, MatrixBackend, OpHandle};
use crate::memory::{MemoryError, SimMemory, TensorBuffer};
use crate::numerics::{matmul_functional, FunctionalError, PeArithParams};

pub use program::{run_program, CpuModel, ProgramError, ProgramReport, Step, TileRef, VectorStep};
pub use report::SimReport;
pub use tiling::{TileLoop, WorkItem};
pub use trace::{emit_trace, sort_events, EventKind, Resource, TimelineEvent};

use report::BusyCounters;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("descriptor rejected: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Descriptor(Vec<DescriptorError>),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Compute values as well as timing.
    pub functional: bool,
    /// Record timeline events.
    pub trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            functional: true,
            trace: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Writeback {
    seq: u64,
    op: usize,
    ready: u64,
    cycles: u64,
    acc_buf: usize,
    tag: String,
}

#[derive(Debug, Clone)]
struct OpState {
    accepted_at: u64,
    last_compute_end: u64,
    wb_outstanding: u32,
    /// Every tile of the op has been placed on the timeline.
    scheduled: bool,
    wb_end: u64,
    completion: Option<u64>,
    c_extent: crate::isa::Extent,
}

/// One matrix unit instance with its own clock-domain state.
#[derive(Debug, Clone)]
pub struct MatrixUnit {
    cfg: ArchConfig,
    mem_model: MemoryModel,
    params: PeArithParams,
    options: SimOptions,
    memory: SimMemory,
    address_space: u64,

    channel_free: u64,
    pe_free: u64,
    bank_free: Vec<u64>,
    acc_free: Vec<u64>,
    acc_wb: Vec<Option<u64>>,
    next_bank: usize,
    next_acc: usize,
    last_load_end: u64,

    pending: VecDeque<Writeback>,
    wb_seq: u64,
    ops: Vec<OpState>,

    events: Vec<TimelineEvent>,
    busy: BusyCounters,
    bytes_read: u64,
    bytes_written: u64,
    mac_count: u64,
    peak_macs: u64,
}

impl MatrixUnit {
    /// A unit that computes values into `memory`.
    pub fn functional(cfg: &ArchConfig, mem: &MemoryModel, memory: SimMemory, trace: bool) -> Result<Self, EngineError> {
        let space = memory.size();
        Self::build(cfg, mem, memory, space, SimOptions { functional: true, trace })
    }

    /// A unit that only models timing over an address space of
    /// `address_space` bytes.
    pub fn timing_only(cfg: &ArchConfig, mem: &MemoryModel, address_space: u64, trace: bool) -> Result<Self, EngineError> {
        Self::build(
            cfg,
            mem,
            SimMemory::new(0),
            address_space,
            SimOptions { functional: false, trace },
        )
    }

    fn build(
        cfg: &ArchConfig,
        mem: &MemoryModel,
        memory: SimMemory,
        address_space: u64,
        options: SimOptions,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        mem.validate()?;
        let banks = cfg.scratchpad_banks as usize;
        Ok(MatrixUnit {
            cfg: cfg.clone(),
            mem_model: mem.clone(),
            params: PeArithParams::default(),
            options,
            memory,
            address_space,
            channel_free: 0,
            pe_free: 0,
            bank_free: vec![0; banks],
            acc_free: vec![0; banks],
            acc_wb: vec![None; banks],
            next_bank: 0,
            next_acc: 0,
            last_load_end: 0,
            pending: VecDeque::new(),
            wb_seq: 0,
            ops: Vec::new(),
            events: Vec::new(),
            busy: BusyCounters::default(),
            bytes_read: 0,
            bytes_written: 0,
            mac_count: 0,
            peak_macs: 0,
        })
    }

    pub fn with_params(mut self, params: PeArithParams) -> Self {
        self.params = params;
        self
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn options(&self) -> SimOptions {
        self.options
    }

    pub fn memory(&self) -> &SimMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut SimMemory {
        &mut self.memory
    }

    pub fn into_memory(self) -> SimMemory {
        self.memory
    }

    pub fn address_space(&self) -> u64 {
        self.address_space
    }

    pub fn events(&self) -> &[TimelineEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<TimelineEvent> {
        std::mem::take(&mut self.events)
    }

    pub(crate) fn push_event(&mut self, cycle: u64, resource: Resource, kind: EventKind, tag: impl Into<String>) {
        if self.options.trace {
            self.events.push(TimelineEvent {
                cycle,
                resource,
                kind,
                tag: tag.into(),
            });
        }
    }

    pub(crate) fn add_busy(&mut self, resource: Resource, cycles: u64) {
        self.busy.add(resource, cycles);
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    pub fn accepted_at(&self, h: OpHandle) -> u64 {
        self.ops[h.0 as usize].accepted_at
    }

    pub(crate) fn c_extent(&self, h: OpHandle) -> crate::isa::Extent {
        self.ops[h.0 as usize].c_extent
    }

    /// Matrix-side totals over `[0, total_cycles)`.
    pub fn report(&self, total_cycles: u64) -> SimReport {
        let pe_busy = self.busy.busy.get("pe_array").copied().unwrap_or(0);
        let utilization = if total_cycles == 0 || self.peak_macs == 0 {
            0.0
        } else {
            self.mac_count as f64 / (total_cycles as f64 * self.peak_macs as f64)
        };
        SimReport {
            total_cycles,
            pe_busy_cycles: pe_busy,
            bytes_read: self.bytes_read,
            bytes_written: self.bytes_written,
            mac_count: self.mac_count,
            utilization,
            busy_fractions: self.busy.fractions(total_cycles),
        }
    }

    /// Cycles to move `bytes` of an operand with the given row geometry.
    fn transfer(&self, bytes: u64, row_bytes: u64, stride: u64) -> f64 {
        if bytes == 0 {
            return 0.0;
        }
        let mut bpc = self.mem_model.bytes_per_cycle(self.cfg.freq_hz);
        if stride != row_bytes {
            bpc *= self.mem_model.stride_penalty;
        }
        bytes as f64 / bpc
    }

    fn ceil_cycles(x: f64) -> u64 {
        // Absorb representation noise in exact quotients such as 8192/24*3.
        let c = (x - 1e-9).ceil();
        if c <= 0.0 {
            0
        } else {
            c as u64
        }
    }

    fn flush_one(&mut self) {
        let Some(wb) = self.pending.pop_front() else {
            return;
        };
        let start = self.channel_free.max(wb.ready);
        let end = start + wb.cycles;
        self.channel_free = end;
        self.acc_free[wb.acc_buf] = end;
        if self.acc_wb[wb.acc_buf] == Some(wb.seq) {
            self.acc_wb[wb.acc_buf] = None;
        }
        self.add_busy(Resource::Writeback, wb.cycles);
        self.add_busy(Resource::CtrlC, wb.cycles);
        self.push_event(start, Resource::Writeback, EventKind::Start, wb.tag.clone());
        self.push_event(start, Resource::CtrlC, EventKind::Start, wb.tag.clone());
        self.push_event(end, Resource::Writeback, EventKind::Stop, wb.tag.clone());
        self.push_event(end, Resource::CtrlC, EventKind::Stop, wb.tag);
        let op = &mut self.ops[wb.op];
        op.wb_end = op.wb_end.max(end);
        op.wb_outstanding -= 1;
        if op.wb_outstanding == 0 && op.scheduled {
            op.completion = Some(op.wb_end.max(op.last_compute_end));
        }
    }

    /// Flushes queued writebacks that became ready no later than `t`.
    fn flush_ready_by(&mut self, t: u64) {
        while self.pending.front().is_some_and(|wb| wb.ready <= t) {
            self.flush_one();
        }
    }

    fn flush_through_seq(&mut self, seq: u64) {
        while self.pending.front().is_some_and(|wb| wb.seq <= seq) {
            self.flush_one();
        }
    }

    fn schedule(&mut self, op: usize, desc: &MatMulDescriptor, at: u64) {
        let cfg = &self.cfg;
        let kind = desc.dtype;
        let eb = u64::from(kind.bytes());
        let acc_b = u64::from(desc.acc_elem().bytes());
        let k_pe = cfg.k_pe_elems(kind);
        let (m_pe, n_pe) = (cfg.m_pe, cfg.n_pe);
        let pipeline = u64::from(cfg.pipeline_depth);
        let reorder = u64::from(cfg.reorder_cycles);
        let latency = self.mem_model.latency_cycles;
        let banks = self.bank_free.len();
        let items: Vec<WorkItem> = TileLoop::new(
            desc.m,
            desc.n,
            desc.k,
            cfg.m_scp,
            cfg.n_scp,
            cfg.k_scp_elems(kind),
        )
        .collect();
        let chain_start = op == 0 || at >= self.last_load_end;
        let a_row = u64::from(desc.k) * eb;
        let b_row = u64::from(desc.n) * eb;
        let bias_row = u64::from(desc.n) * acc_b;
        let c_ext = desc.c_extent();
        let tag_of = |w: &WorkItem| format!("op{op}:m{}:n{}", w.mi, w.ni);

        // (bank, data_ready) per item whose load has been scheduled.
        let mut loads: VecDeque<(usize, u64, u64)> = VecDeque::new();
        let mut next_load = 0usize;
        let lookahead = banks - 1;

        for (j, w) in items.iter().enumerate() {
            while next_load < items.len() && next_load <= j + lookahead {
                let l = &items[next_load];
                let bank = self.next_bank;
                self.next_bank = (self.next_bank + 1) % banks;
                let a_bytes = u64::from(l.m_tile) * u64::from(l.k_chunk) * eb;
                let b_bytes = u64::from(l.n_tile) * u64::from(l.k_chunk) * eb;
                let bias_bytes = match (l.first, desc.bias_type) {
                    (true, crate::isa::BiasType::RowRepeat) => u64::from(l.n_tile) * acc_b,
                    (true, crate::isa::BiasType::Full) => u64::from(l.m_tile) * u64::from(l.n_tile) * acc_b,
                    _ => 0,
                };
                let raw = self.transfer(a_bytes, a_row, u64::from(desc.stride_a))
                    + self.transfer(b_bytes, b_row, u64::from(desc.stride_b))
                    + self.transfer(bias_bytes, bias_row, u64::from(desc.stride_bias));
                let cycles = Self::ceil_cycles(raw) + reorder;
                loop {
                    let cand = self.channel_free.max(self.bank_free[bank]).max(at);
                    if self.pending.front().is_some_and(|wb| wb.ready <= cand) {
                        self.flush_one();
                    } else {
                        break;
                    }
                }
                let start = self.channel_free.max(self.bank_free[bank]).max(at);
                let end = start + cycles;
                self.channel_free = end;
                self.last_load_end = end;
                let ready = if next_load == 0 && chain_start { end + latency } else { end };
                self.bytes_read += a_bytes + b_bytes + bias_bytes;
                self.add_busy(Resource::Loader, cycles);
                let tag = tag_of(l);
                self.push_event(start, Resource::Loader, EventKind::Start, tag.clone());
                self.push_event(end, Resource::Loader, EventKind::Stop, tag.clone());
                self.push_event(start, Resource::Bank(bank as u32), EventKind::Start, tag);
                loads.push_back((bank, ready, start));
                next_load += 1;
            }

            let (bank, ready, load_start) = loads.pop_front().expect("load scheduled ahead");
            let mut start = ready.max(self.pe_free);
            let acc = self.next_acc;
            if w.first {
                if let Some(seq) = self.acc_wb[acc] {
                    self.flush_through_seq(seq);
                }
                start = start.max(self.acc_free[acc]);
            }
            let beats = u64::from(w.m_tile.div_ceil(m_pe))
                * u64::from(w.n_tile.div_ceil(n_pe))
                * u64::from(w.k_chunk.div_ceil(k_pe));
            let dur = beats + if w.first { pipeline } else { 0 };
            let end = start + dur;
            self.pe_free = end;
            self.bank_free[bank] = end;
            self.mac_count += u64::from(w.m_tile) * u64::from(w.n_tile) * u64::from(w.k_chunk);
            self.add_busy(Resource::PeArray, dur);
            self.add_busy(Resource::CtrlA, dur);
            self.add_busy(Resource::CtrlB, dur);
            self.add_busy(Resource::Bank(bank as u32), end - load_start);
            let tag = tag_of(w);
            self.push_event(start, Resource::PeArray, EventKind::Start, tag.clone());
            self.push_event(start, Resource::CtrlA, EventKind::Start, tag.clone());
            self.push_event(start, Resource::CtrlB, EventKind::Start, tag.clone());
            self.push_event(end, Resource::PeArray, EventKind::Stop, tag.clone());
            self.push_event(end, Resource::CtrlA, EventKind::Stop, tag.clone());
            self.push_event(end, Resource::CtrlB, EventKind::Stop, tag.clone());
            self.push_event(end, Resource::Bank(bank as u32), EventKind::Stop, tag.clone());
            self.ops[op].last_compute_end = end;

            if w.last {
                let c_bytes = u64::from(w.m_tile) * u64::from(w.n_tile) * acc_b;
                let cycles = Self::ceil_cycles(self.transfer(c_bytes, c_ext.row_bytes, c_ext.stride));
                self.bytes_written += c_bytes;
                let seq = self.wb_seq;
                self.wb_seq += 1;
                self.pending.push_back(Writeback {
                    seq,
                    op,
                    ready: end,
                    cycles,
                    acc_buf: acc,
                    tag,
                });
                self.acc_wb[acc] = Some(seq);
                self.ops[op].wb_outstanding += 1;
                self.next_acc = (self.next_acc + 1) % banks;
            }
        }
        let state = &mut self.ops[op];
        state.scheduled = true;
        if state.wb_outstanding == 0 {
            state.completion = Some(state.wb_end.max(state.last_compute_end));
        }
    }
}

impl MatrixBackend for MatrixUnit {
    type Error = EngineError;

    fn accept(&mut self, handle: OpHandle, desc: &MatMulDescriptor, at: u64) -> Result<(), EngineError> {
        assert_eq!(handle.0 as usize, self.ops.len(), "operations are accepted in handle order");
        validate(desc, self.address_space).map_err(EngineError::Descriptor)?;
        self.cfg.validate_for(desc.dtype)?;
        if self.options.functional {
            let c = matmul_functional(desc, &self.memory, self.cfg.k_pe_elems(desc.dtype) as usize, &self.params)?;
            self.memory.write_tensor(desc.base_c, u64::from(desc.stride_c), &c)?;
        }
        self.peak_macs = self.cfg.macs_per_cycle(desc.dtype);
        let op = self.ops.len();
        self.ops.push(OpState {
            accepted_at: at,
            last_compute_end: at,
            wb_outstanding: 0,
            scheduled: false,
            wb_end: at,
            completion: None,
            c_extent: desc.c_extent(),
        });
        self.schedule(op, desc, at);
        Ok(())
    }

    fn completion(&mut self, handle: OpHandle) -> u64 {
        let i = handle.0 as usize;
        while self.ops[i].completion.is_none() {
            self.flush_one();
        }
        self.ops[i].completion.expect("flushed")
    }

    fn completed_by(&mut self, handle: OpHandle, now: u64) -> bool {
        self.flush_ready_by(now);
        self.ops[handle.0 as usize].completion.is_some_and(|c| c <= now)
    }
}

/// Outcome of simulating one operation in isolation from cycle 0.
#[derive(Debug, Clone)]
pub struct OpOutcome {
    pub report: SimReport,
    pub events: Vec<TimelineEvent>,
    pub completion: u64,
    /// Stored-shape C, when run functionally.
    pub output: Option<TensorBuffer>,
}

/// Runs `desc` alone on a fresh unit. With `memory`, values are computed
/// against a copy of it; otherwise only timing is modelled.
pub fn simulate_op(
    desc: &MatMulDescriptor,
    cfg: &ArchConfig,
    mem: &MemoryModel,
    memory: Option<&SimMemory>,
    trace: bool,
) -> Result<OpOutcome, EngineError> {
    let mut unit = match memory {
        Some(image) => MatrixUnit::functional(cfg, mem, image.clone(), trace)?,
        None => MatrixUnit::timing_only(cfg, mem, u64::MAX, trace)?,
    };
    unit.accept(OpHandle(0), desc, 0)?;
    let completion = unit.completion(OpHandle(0));
    let output = if unit.options.functional {
        let ext = desc.c_extent();
        let cols = (ext.row_bytes / u64::from(desc.acc_elem().bytes())) as u32;
        Some(unit.memory.read_tensor(ext.base, ext.rows, cols, ext.stride, desc.acc_elem())?)
    } else {
        None
    };
    Ok(OpOutcome {
        report: unit.report(completion),
        events: unit.take_events(),
        completion,
        output,
    })
}
