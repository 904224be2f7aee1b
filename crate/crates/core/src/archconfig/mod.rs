//! Configurable architectural parameters and the analytic throughput model.
//!
//! The analytic model relates three quantities for one output-stationary
//! scratchpad tile of `m_scp x n_scp` outputs streamed over `k_scp` of depth:
//!
//! * compute time: `m_scp * n_scp * k / (freq * m_pe * n_pe * k_pe)`
//! * memory time:  `(m_scp + n_scp) * k * bytes / bandwidth`
//! * utilization bound: `min(1, compute / memory)`
//!
//! Reduce width and scratchpad depth are given in bits and bytes; every
//! formula here converts both to elements of the active data type first.

mod dse;
mod dtype;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dse::{
    scratchpad_footprint_bytes, size_scratchpad, size_scratchpad_capped, PeArray, Residency, SizingError,
    DEFAULT_FOOTPRINT_BUDGET_BYTES, DEFAULT_RESIDENCY_CAP,
};
pub use dtype::{AccumulatorKind, DataKind, DataTypeSpec, ElemType};

/// One violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
        }
    }

    fn single(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError::Invalid(vec![Violation {
            field,
            message: message.into(),
        }])
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn default_pipeline_depth() -> u32 {
    6
}
fn default_queue_depth() -> u32 {
    2
}
fn default_banks() -> u32 {
    2
}

/// Microarchitectural parameters of one matrix unit instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub freq_hz: f64,
    pub m_pe: u32,
    pub n_pe: u32,
    pub k_pe_bits: u32,
    /// Max resident output rows per scratchpad tile.
    pub m_scp: u32,
    /// Max resident output columns per scratchpad tile.
    pub n_scp: u32,
    /// Streaming depth of one A/B chunk.
    pub k_scp_bytes: u32,
    #[serde(default = "default_pipeline_depth")]
    pub pipeline_depth: u32,
    #[serde(default = "default_queue_depth")]
    pub queue_depth: u32,
    #[serde(default = "default_banks")]
    pub scratchpad_banks: u32,
    /// Extra loader cycles per chunk for the data reorder stage.
    #[serde(default)]
    pub reorder_cycles: u32,
}

impl ArchConfig {
    /// 4x4 PEs, 512-bit reduce, 64x64 residency, 64-byte depth at 2 GHz.
    pub fn case_study() -> Self {
        ArchConfig {
            freq_hz: 2.0e9,
            m_pe: 4,
            n_pe: 4,
            k_pe_bits: 512,
            m_scp: 64,
            n_scp: 64,
            k_scp_bytes: 64,
            pipeline_depth: default_pipeline_depth(),
            queue_depth: default_queue_depth(),
            scratchpad_banks: default_banks(),
            reorder_cycles: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let mut bad = |field: &'static str, message: String| v.push(Violation { field, message });

        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            bad("freq_hz", format!("must be positive and finite, got {}", self.freq_hz));
        }
        for (field, value) in [
            ("m_pe", self.m_pe),
            ("n_pe", self.n_pe),
            ("k_pe_bits", self.k_pe_bits),
            ("m_scp", self.m_scp),
            ("n_scp", self.n_scp),
            ("k_scp_bytes", self.k_scp_bytes),
            ("pipeline_depth", self.pipeline_depth),
            ("scratchpad_banks", self.scratchpad_banks),
        ] {
            if value == 0 {
                bad(field, "must be strictly positive".into());
            }
        }
        if self.m_pe > 0 && self.m_scp % self.m_pe != 0 {
            bad(
                "m_scp",
                format!("{} is not a multiple of m_pe = {}", self.m_scp, self.m_pe),
            );
        }
        if self.n_pe > 0 && self.n_scp % self.n_pe != 0 {
            bad(
                "n_scp",
                format!("{} is not a multiple of n_pe = {}", self.n_scp, self.n_pe),
            );
        }
        if self.k_pe_bits % 8 != 0 {
            bad("k_pe_bits", format!("{} is not a multiple of 8", self.k_pe_bits));
        }
        if self.k_pe_bits > 0 && (u64::from(self.k_scp_bytes) * 8) % u64::from(self.k_pe_bits) != 0 {
            bad(
                "k_scp_bytes",
                format!(
                    "{} bytes is not a whole number of {}-bit reduce steps",
                    self.k_scp_bytes, self.k_pe_bits
                ),
            );
        }
        if self.queue_depth < 2 {
            bad("queue_depth", format!("must be at least 2, got {}", self.queue_depth));
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Validates the config and checks that `kind` fits the reduce width.
    pub fn validate_for(&self, kind: DataKind) -> Result<(), ConfigError> {
        self.validate()?;
        let bits = kind.storage_bits();
        if self.k_pe_bits % bits != 0 {
            return Err(ConfigError::single(
                "k_pe_bits",
                format!("{} bits does not hold a whole number of {kind} elements", self.k_pe_bits),
            ));
        }
        Ok(())
    }

    /// Elements of `kind` reduced by one PE per cycle.
    pub fn k_pe_elems(&self, kind: DataKind) -> u32 {
        self.k_pe_bits / kind.storage_bits()
    }

    /// Chunk depth in elements of `kind`.
    pub fn k_scp_elems(&self, kind: DataKind) -> u32 {
        self.k_scp_bytes * 8 / kind.storage_bits()
    }

    /// MACs the whole array retires per cycle.
    pub fn macs_per_cycle(&self, kind: DataKind) -> u64 {
        u64::from(self.m_pe) * u64::from(self.n_pe) * u64::from(self.k_pe_elems(kind))
    }

    /// Shrinks the residency to what an `m x n` problem can actually fill,
    /// keeping whole PE row/column groups.
    pub fn clamped_to(&self, m: u32, n: u32) -> ArchConfig {
        let mut out = self.clone();
        out.m_scp = self.m_scp.min(round_up(m.max(1), self.m_pe));
        out.n_scp = self.n_scp.min(round_up(n.max(1), self.n_pe));
        out
    }
}

pub(crate) fn round_up(x: u32, step: u32) -> u32 {
    x.div_ceil(step) * step
}

fn default_latency() -> u64 {
    100
}
fn default_stride_penalty() -> f64 {
    1.0
}

/// Parametric model of the lower-level memory hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryModel {
    pub bandwidth_bytes_per_s: f64,
    #[serde(default = "default_latency")]
    pub latency_cycles: u64,
    /// Throughput factor applied to operands whose row stride differs from
    /// their row length.
    #[serde(default = "default_stride_penalty")]
    pub stride_penalty: f64,
}

impl MemoryModel {
    pub fn with_bandwidth(bandwidth_bytes_per_s: f64) -> Self {
        MemoryModel {
            bandwidth_bytes_per_s,
            latency_cycles: default_latency(),
            stride_penalty: default_stride_penalty(),
        }
    }

    /// 48 GB/s, 100-cycle latency.
    pub fn case_study() -> Self {
        Self::with_bandwidth(48e9)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        // +inf is allowed: it models an ideal memory.
        if self.bandwidth_bytes_per_s.is_nan() || self.bandwidth_bytes_per_s <= 0.0 {
            v.push(Violation {
                field: "bandwidth_bytes_per_s",
                message: format!("must be positive, got {}", self.bandwidth_bytes_per_s),
            });
        }
        if !(self.stride_penalty > 0.0 && self.stride_penalty <= 1.0) {
            v.push(Violation {
                field: "stride_penalty",
                message: format!("must lie in (0, 1], got {}", self.stride_penalty),
            });
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Sustained bytes delivered per clock cycle.
    pub fn bytes_per_cycle(&self, freq_hz: f64) -> f64 {
        self.bandwidth_bytes_per_s / freq_hz
    }
}

/// Peak operations per second (one MAC counts as two operations).
pub fn peak_throughput(cfg: &ArchConfig, dtype: DataTypeSpec) -> Result<f64, ConfigError> {
    cfg.validate_for(dtype.kind)?;
    Ok(cfg.freq_hz
        * f64::from(cfg.m_pe)
        * f64::from(cfg.n_pe)
        * f64::from(cfg.k_pe_elems(dtype.kind))
        * 2.0)
}

/// Compute and memory time of one scratchpad tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileTimes {
    pub compute_s: f64,
    pub memory_s: f64,
}

pub fn tile_times(
    cfg: &ArchConfig,
    mem: &MemoryModel,
    dtype: DataTypeSpec,
) -> Result<TileTimes, ConfigError> {
    cfg.validate_for(dtype.kind)?;
    mem.validate()?;
    let k_elems = f64::from(cfg.k_scp_elems(dtype.kind));
    let m = f64::from(cfg.m_scp);
    let n = f64::from(cfg.n_scp);
    let compute_s = m * n * k_elems
        / (cfg.freq_hz
            * f64::from(cfg.m_pe)
            * f64::from(cfg.n_pe)
            * f64::from(cfg.k_pe_elems(dtype.kind)));
    let memory_s = (m + n) * k_elems * f64::from(dtype.bytes()) / mem.bandwidth_bytes_per_s;
    Ok(TileTimes {
        compute_s,
        memory_s,
    })
}

/// The reuse inequality in its printed direction: compute time does not
/// exceed memory time.
pub fn constraint_holds(
    cfg: &ArchConfig,
    mem: &MemoryModel,
    dtype: DataTypeSpec,
) -> Result<bool, ConfigError> {
    let t = tile_times(cfg, mem, dtype)?;
    Ok(t.compute_s <= t.memory_s)
}

/// Steady-state PE utilization upper bound under full load/compute overlap.
pub fn utilization_bound(
    cfg: &ArchConfig,
    mem: &MemoryModel,
    dtype: DataTypeSpec,
) -> Result<f64, ConfigError> {
    let t = tile_times(cfg, mem, dtype)?;
    if t.memory_s <= t.compute_s {
        return Ok(1.0);
    }
    Ok(t.compute_s / t.memory_s)
}
