//! Shared helpers for integration tests: independent reference models and
//! operand setup. Decoding goes through `half` and plain bit arithmetic so
//! nothing here reuses the crate's own codecs.

#![allow(dead_code)]

use mxsim_core::archconfig::DataKind;
use mxsim_core::isa::MatMulDescriptor;
use mxsim_core::memory::{SimMemory, TensorBuffer};
use std::sync::OnceLock;

use rand::Rng;

/// Window width and lane count of the default PE datapath.
pub const WINDOW: u32 = 32;

/// Decodes raw input bits to f64. Every supported format fits exactly.
pub fn decode(kind: DataKind, bits: u32) -> f64 {
    match kind {
        DataKind::Int8 => f64::from(bits as u8 as i8),
        DataKind::Fp16 => half::f16::from_bits(bits as u16).to_f64(),
        DataKind::Bf16 => half::bf16::from_bits(bits as u16).to_f64(),
        DataKind::Tf32 => f64::from(f32::from_bits(bits & 0xffff_e000)),
        DataKind::Fp8 => {
            let b = bits & 0xff;
            let sign = if b & 0x80 != 0 { -1.0 } else { 1.0 };
            let e = (b >> 3) & 0xf;
            let m = f64::from(b & 7);
            if e == 0xf && b & 7 == 7 {
                f64::NAN
            } else if e == 0 {
                sign * m / 8.0 * 2f64.powi(-6)
            } else {
                sign * (1.0 + m / 8.0) * 2f64.powi(e as i32 - 7)
            }
        }
    }
}

fn guard(lanes: usize) -> u32 {
    let mut g = 0;
    while (1usize << g) < lanes {
        g += 1;
    }
    g
}

/// Exponent of the leading bit of a nonzero finite f64. Products of the
/// supported formats are always normal in f64.
fn msb_exp(x: f64) -> i32 {
    ((x.to_bits() >> 52) & 0x7ff) as i32 - 1023
}

/// Rounds `v` toward zero to the nearest FP32 value.
fn to_f32_toward_zero(v: f64) -> f32 {
    if v.abs() >= 2f64.powi(128) {
        return if v < 0.0 { f32::NEG_INFINITY } else { f32::INFINITY };
    }
    let r = v as f32;
    if f64::from(r).abs() > v.abs() {
        if r.is_infinite() {
            return f32::MAX.copysign(r);
        }
        // Magnitude bits sit below the sign, so this steps toward zero.
        return f32::from_bits(r.to_bits() - 1);
    }
    r
}

/// Brute-force block floating-point dot product: products are exact, each
/// is truncated toward zero onto a grid `WINDOW - guard(lanes)` bits below
/// the largest product, summed exactly and truncated to FP32.
pub fn block_fp_dot(kind: DataKind, a: &[u32], b: &[u32], lanes: usize) -> f32 {
    let mut nan = false;
    let mut pos_inf = false;
    let mut neg_inf = false;
    let mut prods = Vec::new();
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (decode(kind, x), decode(kind, y));
        if x.is_nan() || y.is_nan() {
            nan = true;
            continue;
        }
        let p = x * y;
        if p.is_nan() {
            nan = true;
        } else if p == f64::INFINITY {
            pos_inf = true;
        } else if p == f64::NEG_INFINITY {
            neg_inf = true;
        } else if p != 0.0 {
            prods.push(p);
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
    let Some(top) = prods.iter().map(|&p| msb_exp(p)).max() else {
        return 0.0;
    };
    let lsb = top - (WINDOW - guard(lanes)) as i32 + 1;
    let scale = 2f64.powi(-lsb);
    let sum: i128 = prods.iter().map(|&p| (p * scale).trunc() as i128).sum();
    to_f32_toward_zero(sum as f64 * 2f64.powi(lsb))
}

/// C = bias + A x B for one output element, chunked by `lanes`, with FP32
/// accumulation across chunks.
pub fn block_fp_matmul(
    kind: DataKind,
    a: &TensorBuffer,
    b: &TensorBuffer,
    bias: Option<&[f32]>,
    lanes: usize,
) -> Vec<f32> {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let rows: Vec<Vec<u32>> = (0..m).map(|i| (0..k).map(|kk| a.bits(i, kk)).collect()).collect();
    let cols: Vec<Vec<u32>> = (0..n).map(|j| (0..k).map(|kk| b.bits(kk, j)).collect()).collect();
    let mut out = Vec::with_capacity((m * n) as usize);
    for (i, ra) in rows.iter().enumerate() {
        for (j, cb) in cols.iter().enumerate() {
            let mut acc = bias.map_or(0.0, |v| v[i * n as usize + j]);
            for (ca, cc) in ra.chunks(lanes).zip(cb.chunks(lanes)) {
                acc += block_fp_dot(kind, ca, cc, lanes);
            }
            out.push(acc);
        }
    }
    out
}

/// Naive INT8 triple loop with wrapping INT32 accumulation.
pub fn int8_matmul(a: &TensorBuffer, b: &TensorBuffer, bias: Option<&[i32]>) -> Vec<i32> {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Vec::with_capacity((m * n) as usize);
    for i in 0..m {
        for j in 0..n {
            let mut s = bias.map_or(0, |v| v[(i * n + j) as usize]);
            for kk in 0..k {
                let x = i32::from(a.bits(i, kk) as u8 as i8);
                let y = i32::from(b.bits(kk, j) as u8 as i8);
                s = s.wrapping_add(x * y);
            }
            out.push(s);
        }
    }
    out
}

/// Random raw input bits; floats are finite values of moderate magnitude.
pub fn random_bits<R: Rng>(kind: DataKind, rng: &mut R) -> u32 {
    match kind {
        DataKind::Int8 => rng.gen::<u8>() as u32,
        _ => {
            // Log-uniform magnitudes exercise alignment shifts.
            let mag = 2f64.powf(rng.gen_range(-8.0..4.0));
            let x = if rng.gen() { mag } else { -mag };
            encode_rne(kind, x)
        }
    }
}

/// Round-to-nearest-even encoding through `half` and f32 bit tricks.
pub fn encode_rne(kind: DataKind, x: f64) -> u32 {
    match kind {
        DataKind::Int8 => (x.round().clamp(-128.0, 127.0) as i8 as u8).into(),
        DataKind::Fp16 => half::f16::from_f64(x).to_bits().into(),
        DataKind::Bf16 => half::bf16::from_f64(x).to_bits().into(),
        DataKind::Tf32 => {
            let bits = (x as f32).to_bits();
            let round = 0x0fff + ((bits >> 13) & 1);
            bits.wrapping_add(round) & 0xffff_e000
        }
        DataKind::Fp8 => {
            // Nearest magnitude from a sorted table of finite codes; ties go
            // to the even code.
            static TABLE: OnceLock<Vec<(f64, u32)>> = OnceLock::new();
            let table = TABLE.get_or_init(|| (0u32..0x7f).map(|c| (decode(DataKind::Fp8, c), c)).collect());
            let mag = x.abs();
            let i = table.partition_point(|&(v, _)| v < mag);
            let code = match (table.get(i.wrapping_sub(1)), table.get(i)) {
                (Some(&(lo, cl)), Some(&(hi, ch))) => {
                    if mag - lo < hi - mag || (mag - lo == hi - mag && cl & 1 == 0) {
                        cl
                    } else {
                        ch
                    }
                }
                (None, Some(&(_, c))) | (Some(&(_, c)), None) => c,
                (None, None) => unreachable!(),
            };
            let sign = if x.is_sign_negative() { 0x80 } else { 0 };
            code | sign
        }
    }
}

pub fn random_tensor<R: Rng>(rows: u32, cols: u32, kind: DataKind, rng: &mut R) -> TensorBuffer {
    let bits: Vec<u32> = (0..rows * cols).map(|_| random_bits(kind, rng)).collect();
    TensorBuffer::from_bits(rows, cols, kind.elem(), &bits)
}

/// A packed problem placed in a fresh memory image.
pub struct Problem {
    pub desc: MatMulDescriptor,
    pub mem: SimMemory,
    pub a: TensorBuffer,
    pub b: TensorBuffer,
}

pub fn packed_problem<R: Rng>(m: u32, n: u32, k: u32, kind: DataKind, rng: &mut R) -> Problem {
    let eb = u64::from(kind.bytes());
    let align = |x: u64| x.div_ceil(64) * 64;
    let base_a = 0;
    let base_b = align(u64::from(m) * u64::from(k) * eb);
    let base_c = align(base_b + u64::from(k) * u64::from(n) * eb);
    let end = base_c + u64::from(m) * u64::from(n) * 4;
    let desc = MatMulDescriptor::packed(m, n, k, kind, base_a, base_b, base_c);
    let a = random_tensor(m, k, kind, rng);
    let b = random_tensor(k, n, kind, rng);
    let mut mem = SimMemory::new(end as usize);
    mem.write_tensor(base_a, desc.stride_a.into(), &a).unwrap();
    mem.write_tensor(base_b, desc.stride_b.into(), &b).unwrap();
    Problem { desc, mem, a, b }
}

/// Log-uniform integer in `[1, max]`.
pub fn log_uniform<R: Rng>(max: u32, rng: &mut R) -> u32 {
    let x: f64 = rng.gen_range(0.0..=f64::from(max).ln());
    (x.exp().round() as u32).clamp(1, max)
}
