//! Bit-level model of the PE inner-product datapath.
//!
//! Integer inputs are reduced exactly into an INT32 accumulator. Float
//! inputs follow block floating-point semantics: every product is formed
//! exactly, products are aligned to the largest product exponent inside a
//! fixed-width window (bits shifted out are dropped), summed as integers
//! and renormalized to FP32.

pub mod format;
mod matmul;
pub mod oracle;

use thiserror::Error;

use crate::archconfig::{AccumulatorKind, DataKind};
use format::{Decoded, FloatFormat};

pub use matmul::{matmul_functional, pe_chunk_elems, FunctionalError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumericsError {
    #[error("operand format mismatch: {0} vs {1}")]
    FormatMismatch(DataKind, DataKind),
    #[error("operand length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty dot product")]
    Empty,
    #[error(
        "alignment window of {width} bits cannot hold {product_bits}-bit products plus {guard} guard bits"
    )]
    AlignWidth {
        width: u32,
        product_bits: u32,
        guard: u32,
    },
}

/// One raw input element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scalar {
    pub kind: DataKind,
    /// Raw encoding, right-aligned in `storage_bits`.
    pub bits: u32,
}

const TF32_SHIFT: u32 = 13;

impl Scalar {
    pub fn new(kind: DataKind, bits: u32) -> Self {
        Scalar { kind, bits }
    }

    pub fn int8(v: i8) -> Self {
        Scalar::new(DataKind::Int8, u32::from(v as u8))
    }

    /// Encodes `x` with round-to-nearest-even. INT8 saturates.
    pub fn from_f64(kind: DataKind, x: f64) -> Self {
        let bits = match kind {
            DataKind::Int8 => {
                let v = if x.is_nan() { 0.0 } else { x.round_ties_even().clamp(-128.0, 127.0) };
                u32::from(v as i8 as u8)
            }
            DataKind::Tf32 => FloatFormat::TF32.encode(x) << TF32_SHIFT,
            _ => float_format(kind).expect("float kind").encode(x),
        };
        Scalar { kind, bits }
    }

    pub fn decode(self) -> Decoded {
        decode_bits(self.kind, self.bits)
    }

    pub fn to_f64(self) -> f64 {
        self.decode().to_f64()
    }
}

pub(crate) fn float_format(kind: DataKind) -> Option<FloatFormat> {
    match kind {
        DataKind::Int8 => None,
        DataKind::Fp8 => Some(FloatFormat::FP8_E4M3),
        DataKind::Fp16 => Some(FloatFormat::FP16),
        DataKind::Bf16 => Some(FloatFormat::BF16),
        DataKind::Tf32 => Some(FloatFormat::TF32),
    }
}

/// Decodes raw container bits of `kind`. TF32 reads only the top 19 bits.
pub fn decode_bits(kind: DataKind, bits: u32) -> Decoded {
    match kind {
        DataKind::Int8 => {
            let v = bits as u8 as i8;
            if v == 0 {
                Decoded::Zero { neg: false }
            } else {
                Decoded::Finite {
                    neg: v < 0,
                    sig: u32::from(v.unsigned_abs()),
                    exp: 0,
                }
            }
        }
        DataKind::Tf32 => FloatFormat::TF32.decode(bits >> TF32_SHIFT),
        _ => float_format(kind).expect("float kind").decode(bits),
    }
}

/// PE accumulator. The variant is fixed by the input precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Accumulator {
    Int32(i32),
    /// NaN and infinities act as sticky flags.
    Fp32(f32),
}

impl Accumulator {
    pub fn zero(kind: AccumulatorKind) -> Self {
        match kind {
            AccumulatorKind::Int32 => Accumulator::Int32(0),
            AccumulatorKind::Fp32 => Accumulator::Fp32(0.0),
        }
    }

    pub fn kind(&self) -> AccumulatorKind {
        match self {
            Accumulator::Int32(_) => AccumulatorKind::Int32,
            Accumulator::Fp32(_) => AccumulatorKind::Fp32,
        }
    }

    /// Cross-chunk accumulation: INT32 wraps, FP32 rounds to nearest even.
    ///
    /// # Panics
    /// If the two accumulators are of different kinds.
    pub fn accumulate(self, partial: Accumulator) -> Accumulator {
        match (self, partial) {
            (Accumulator::Int32(a), Accumulator::Int32(b)) => Accumulator::Int32(a.wrapping_add(b)),
            (Accumulator::Fp32(a), Accumulator::Fp32(b)) => Accumulator::Fp32(a + b),
            (a, b) => panic!("accumulator kind mismatch: {:?} + {:?}", a.kind(), b.kind()),
        }
    }

    /// Raw 32-bit pattern as stored in memory.
    pub fn to_bits(self) -> u32 {
        match self {
            Accumulator::Int32(v) => v as u32,
            Accumulator::Fp32(v) => v.to_bits(),
        }
    }

    pub fn from_bits(kind: AccumulatorKind, bits: u32) -> Self {
        match kind {
            AccumulatorKind::Int32 => Accumulator::Int32(bits as i32),
            AccumulatorKind::Fp32 => Accumulator::Fp32(f32::from_bits(bits)),
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Accumulator::Int32(v) => f64::from(v),
            Accumulator::Fp32(v) => f64::from(v),
        }
    }

    pub fn is_special(&self) -> bool {
        matches!(self, Accumulator::Fp32(v) if !v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    TowardZero,
    NearestEven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeArithParams {
    /// Aligned-significand window for the block sum, guard bits included.
    pub align_width_bits: u32,
    /// Applied when renormalizing the block sum to FP32.
    pub rounding: Rounding,
}

impl Default for PeArithParams {
    fn default() -> Self {
        PeArithParams {
            align_width_bits: 32,
            rounding: Rounding::TowardZero,
        }
    }
}

impl PeArithParams {
    /// Guard bits needed to sum `k` aligned products without overflow.
    pub fn guard_bits(k: usize) -> u32 {
        if k <= 1 {
            0
        } else {
            usize::BITS - (k - 1).leading_zeros()
        }
    }

    /// Checks the window can hold `k` products of `kind` exactly at the top.
    pub fn check(&self, kind: DataKind, k: usize) -> Result<(), NumericsError> {
        let product_bits = product_bits(kind);
        let guard = Self::guard_bits(k);
        if self.align_width_bits > 62 || self.align_width_bits < product_bits + guard {
            return Err(NumericsError::AlignWidth {
                width: self.align_width_bits,
                product_bits,
                guard,
            });
        }
        Ok(())
    }
}

/// Width of an exact significand product.
pub fn product_bits(kind: DataKind) -> u32 {
    match kind {
        DataKind::Int8 => 16,
        _ => 2 * (kind.spec().mantissa_bits + 1),
    }
}

/// A decoded operand, flattened for the hot loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Term {
    pub sig: u32,
    pub exp: i32,
    pub neg: bool,
    pub class: TermClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) enum TermClass {
    #[default]
    Finite,
    Inf,
    NaN,
}

impl From<Decoded> for Term {
    fn from(d: Decoded) -> Self {
        match d {
            Decoded::Zero { neg } => Term {
                neg,
                ..Term::default()
            },
            Decoded::Finite { neg, sig, exp } => Term {
                sig,
                exp,
                neg,
                class: TermClass::Finite,
            },
            Decoded::Inf { neg } => Term {
                neg,
                class: TermClass::Inf,
                ..Term::default()
            },
            Decoded::NaN => Term {
                class: TermClass::NaN,
                ..Term::default()
            },
        }
    }
}

/// Inner product of one PE over `a.len()` lanes.
pub fn pe_dot(a: &[Scalar], b: &[Scalar], params: &PeArithParams) -> Result<Accumulator, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::LengthMismatch(a.len(), b.len()));
    }
    let kind = a.first().ok_or(NumericsError::Empty)?.kind;
    for s in a.iter().chain(b) {
        if s.kind != kind {
            return Err(NumericsError::FormatMismatch(kind, s.kind));
        }
    }
    params.check(kind, a.len())?;
    if kind == DataKind::Int8 {
        let sum = a
            .iter()
            .zip(b)
            .map(|(x, y)| i32::from(x.bits as u8 as i8) * i32::from(y.bits as u8 as i8))
            .sum();
        return Ok(Accumulator::Int32(sum));
    }
    let ta: Vec<Term> = a.iter().map(|s| Term::from(s.decode())).collect();
    let tb: Vec<Term> = b.iter().map(|s| Term::from(s.decode())).collect();
    Ok(Accumulator::Fp32(block_dot(&ta, &tb, a.len(), params)))
}

/// Block floating-point dot product. `lanes` fixes the guard width so that
/// a zero-padded partial chunk behaves like the full hardware vector.
pub(crate) fn block_dot(a: &[Term], b: &[Term], lanes: usize, params: &PeArithParams) -> f32 {
    let mut nan = false;
    let mut pos_inf = false;
    let mut neg_inf = false;
    let mut top = i32::MIN;
    for (x, y) in a.iter().zip(b) {
        let neg = x.neg ^ y.neg;
        match (x.class, y.class) {
            (TermClass::NaN, _) | (_, TermClass::NaN) => nan = true,
            (TermClass::Inf, _) | (_, TermClass::Inf) => {
                let other = if x.class == TermClass::Inf { y } else { x };
                if other.class == TermClass::Finite && other.sig == 0 {
                    nan = true;
                } else if neg {
                    neg_inf = true;
                } else {
                    pos_inf = true;
                }
            }
            _ => {
                let p = u64::from(x.sig) * u64::from(y.sig);
                if p != 0 {
                    let msb = x.exp + y.exp + (63 - p.leading_zeros() as i32);
                    top = top.max(msb);
                }
            }
        }
    }
    if nan || (pos_inf && neg_inf) {
        return f32::NAN;
    }
    if pos_inf {
        return f32::INFINITY;
    }
    if neg_inf {
        return f32::NEG_INFINITY;
    }
    if top == i32::MIN {
        return 0.0;
    }

    let frac_bits = params.align_width_bits - PeArithParams::guard_bits(lanes);
    let lsb = top - frac_bits as i32 + 1;
    let mut sum: i64 = 0;
    for (x, y) in a.iter().zip(b) {
        let p = u64::from(x.sig) * u64::from(y.sig);
        if p == 0 {
            continue;
        }
        let e = x.exp + y.exp;
        let aligned = if e >= lsb {
            p << (e - lsb) as u32
        } else {
            let shift = (lsb - e) as u32;
            if shift >= 64 {
                0
            } else {
                p >> shift
            }
        };
        if x.neg ^ y.neg {
            sum -= aligned as i64;
        } else {
            sum += aligned as i64;
        }
    }
    f32_from_scaled(sum < 0, sum.unsigned_abs(), lsb, params.rounding)
}

/// Converts `(-1)^neg * mag * 2^exp` to FP32. Magnitudes of `2^128` and
/// above become infinities under either rounding mode.
pub fn f32_from_scaled(neg: bool, mag: u64, exp: i32, rounding: Rounding) -> f32 {
    let signed = |v: f32| if neg { -v } else { v };
    if mag == 0 {
        return signed(0.0);
    }
    let msb = exp + (63 - mag.leading_zeros() as i32);
    if msb > 127 {
        return signed(f32::INFINITY);
    }
    let mut q = if msb < -126 { -149 } else { msb - 23 };
    let shift = q - exp;
    let mut sig = if shift <= 0 {
        mag << (-shift) as u32
    } else if shift >= 64 {
        // Only reachable for values far below the smallest subnormal.
        u64::from(rounding == Rounding::NearestEven && shift == 64 && mag > (1u64 << 63))
    } else {
        let kept = mag >> shift;
        let rem = mag & ((1u64 << shift) - 1);
        match rounding {
            Rounding::TowardZero => kept,
            Rounding::NearestEven => {
                let half = 1u64 << (shift - 1);
                kept + u64::from(rem > half || (rem == half && kept & 1 == 1))
            }
        }
    };
    if sig == 1u64 << 24 {
        sig >>= 1;
        q += 1;
        if q + 23 > 127 {
            return signed(f32::INFINITY);
        }
    }
    let bits = if sig < (1u64 << 23) {
        sig as u32
    } else {
        (((q + 23 + 127) as u32) << 23) | (sig as u32 & 0x7f_ffff)
    };
    signed(f32::from_bits(bits))
}
