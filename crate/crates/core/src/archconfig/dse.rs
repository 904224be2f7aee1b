//! Scratchpad sizing: pick the smallest square residency that reaches a
//! target utilization bound at a given bandwidth.

use serde::Serialize;
use thiserror::Error;

use super::{round_up, utilization_bound, ArchConfig, ConfigError, DataTypeSpec, MemoryModel};

/// Largest residency the sizer will return before declaring a target infeasible.
pub const DEFAULT_RESIDENCY_CAP: u32 = 4096;

/// Scratchpad bytes above which a sized configuration is flagged as oversized.
pub const DEFAULT_FOOTPRINT_BUDGET_BYTES: u64 = 512 * 1024;

const BOUND_TOLERANCE: f64 = 1e-12;

/// The compute half of an [`ArchConfig`], before the scratchpad is chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeArray {
    pub freq_hz: f64,
    pub m_pe: u32,
    pub n_pe: u32,
    pub k_pe_bits: u32,
    pub scratchpad_banks: u32,
}

impl PeArray {
    pub fn new(freq_hz: f64, m_pe: u32, n_pe: u32, k_pe_bits: u32) -> Self {
        PeArray {
            freq_hz,
            m_pe,
            n_pe,
            k_pe_bits,
            scratchpad_banks: 2,
        }
    }

    /// Default streaming depth: one reduce step per bank.
    pub fn default_k_scp_bytes(&self) -> u32 {
        self.k_pe_bits / 8 * self.scratchpad_banks
    }

    pub fn with_residency(&self, m_scp: u32, n_scp: u32) -> ArchConfig {
        ArchConfig {
            freq_hz: self.freq_hz,
            m_pe: self.m_pe,
            n_pe: self.n_pe,
            k_pe_bits: self.k_pe_bits,
            m_scp,
            n_scp,
            k_scp_bytes: self.default_k_scp_bytes(),
            scratchpad_banks: self.scratchpad_banks,
            ..ArchConfig::case_study()
        }
    }
}

impl From<&ArchConfig> for PeArray {
    fn from(cfg: &ArchConfig) -> Self {
        PeArray {
            freq_hz: cfg.freq_hz,
            m_pe: cfg.m_pe,
            n_pe: cfg.n_pe,
            k_pe_bits: cfg.k_pe_bits,
            scratchpad_banks: cfg.scratchpad_banks,
        }
    }
}

/// Result of scratchpad sizing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residency {
    pub m_scp: u32,
    pub n_scp: u32,
    pub k_scp_bytes: u32,
    /// Utilization bound reached at this residency.
    pub bound: f64,
    /// Unrounded residency that meets the target exactly.
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SizingError {
    #[error("target utilization must lie in (0, 1], got {0}")]
    InvalidTarget(f64),
    #[error(
        "target {target} needs residency {required:.1} (> cap {cap}); at the cap the bound is \
         {bound_at_cap:.4} and the target needs at least {min_bandwidth:.4e} B/s"
    )]
    Infeasible {
        target: f64,
        required: f64,
        cap: u32,
        bound_at_cap: f64,
        min_bandwidth: f64,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn size_scratchpad(
    pe: &PeArray,
    mem: &MemoryModel,
    dtype: DataTypeSpec,
    target_util: f64,
) -> Result<Residency, SizingError> {
    size_scratchpad_capped(pe, mem, dtype, target_util, DEFAULT_RESIDENCY_CAP)
}

pub fn size_scratchpad_capped(
    pe: &PeArray,
    mem: &MemoryModel,
    dtype: DataTypeSpec,
    target_util: f64,
    cap: u32,
) -> Result<Residency, SizingError> {
    if !(target_util > 0.0 && target_util <= 1.0) {
        return Err(SizingError::InvalidTarget(target_util));
    }
    let step = pe.m_pe / gcd(pe.m_pe.max(1), pe.n_pe.max(1)) * pe.n_pe;
    let probe = pe.with_residency(step.max(1), step.max(1));
    probe.validate_for(dtype.kind)?;
    mem.validate()?;

    let bound_at = |m: u32| -> Result<f64, ConfigError> {
        utilization_bound(&pe.with_residency(m, m), mem, dtype)
    };
    let meets = |m: u32| -> Result<bool, ConfigError> { Ok(bound_at(m)? >= target_util - BOUND_TOLERANCE) };

    // For a square tile the bound is m * bw / (2 * bytes * freq * macs_per_cycle).
    let macs_per_cycle = probe.macs_per_cycle(dtype.kind) as f64;
    let exact = target_util * 2.0 * f64::from(dtype.bytes()) * pe.freq_hz * macs_per_cycle
        / mem.bandwidth_bytes_per_s;

    if exact > f64::from(cap) + BOUND_TOLERANCE {
        let cap_m = (cap / step).max(1) * step;
        let bound_at_cap = bound_at(cap_m)?;
        return Err(SizingError::Infeasible {
            target: target_util,
            required: exact,
            cap,
            bound_at_cap,
            min_bandwidth: mem.bandwidth_bytes_per_s * exact / f64::from(cap_m),
        });
    }

    let mut m = round_up(((exact - 1e-9).max(0.0)).ceil() as u32, step).max(step);
    while !meets(m)? {
        m += step;
    }
    while m > step && meets(m - step)? {
        m -= step;
    }
    if m > cap {
        let bound_at_cap = bound_at((cap / step).max(1) * step)?;
        return Err(SizingError::Infeasible {
            target: target_util,
            required: exact,
            cap,
            bound_at_cap,
            min_bandwidth: mem.bandwidth_bytes_per_s * f64::from(m) / f64::from(cap),
        });
    }
    Ok(Residency {
        m_scp: m,
        n_scp: m,
        k_scp_bytes: pe.default_k_scp_bytes(),
        bound: bound_at(m)?,
        exact,
    })
}

/// Scratchpad bytes for A/B chunks plus resident accumulators, replicated
/// per bank.
pub fn scratchpad_footprint_bytes(cfg: &ArchConfig, dtype: DataTypeSpec) -> u64 {
    let m = u64::from(cfg.m_scp);
    let n = u64::from(cfg.n_scp);
    let k = u64::from(cfg.k_scp_bytes);
    let acc = u64::from(dtype.accumulator.elem().bytes());
    u64::from(cfg.scratchpad_banks) * (m * k + n * k + m * n * acc)
}
