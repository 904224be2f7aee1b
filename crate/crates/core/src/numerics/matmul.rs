//! Functional model of one matrix operation.

use thiserror::Error;

use super::{block_dot, Accumulator, NumericsError, PeArithParams, Term};
use crate::archconfig::{AccumulatorKind, ArchConfig, DataKind};
use crate::isa::{BiasType, MatMulDescriptor};
use crate::memory::{MemoryError, SimMemory, TensorBuffer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FunctionalError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Lanes of one PE reduction for `kind` under `cfg`.
pub fn pe_chunk_elems(cfg: &ArchConfig, kind: DataKind) -> usize {
    cfg.k_pe_elems(kind) as usize
}

/// Computes `C = bias + A * B` for `desc` from the contents of `mem`.
///
/// K is reduced in chunks of `k_pe_elems` through the PE datapath; a short
/// final chunk is zero-padded. Chunk partials are added into an accumulator
/// initialised with the bias. The result has the stored shape of C, i.e. it
/// is already transposed when the descriptor asks for it.
pub fn matmul_functional(
    desc: &MatMulDescriptor,
    mem: &SimMemory,
    k_pe_elems: usize,
    params: &PeArithParams,
) -> Result<TensorBuffer, FunctionalError> {
    let kind = desc.dtype;
    let k_pe = k_pe_elems.max(1);
    params.check(kind, k_pe)?;
    let (m, n, k) = (desc.m, desc.n, desc.k as usize);
    let elem = kind.elem();
    let acc_kind = kind.accumulator();
    let acc_elem = acc_kind.elem();

    let a = mem.read_tensor(desc.base_a, m, desc.k, u64::from(desc.stride_a), elem)?;
    let b = mem.read_tensor(desc.base_b, desc.k, n, u64::from(desc.stride_b), elem)?;
    let bias = match desc.bias_type {
        BiasType::Zero => None,
        BiasType::RowRepeat => Some(mem.read_tensor(desc.base_bias, 1, n, u64::from(desc.stride_bias), acc_elem)?),
        BiasType::Full => Some(mem.read_tensor(desc.base_bias, m, n, u64::from(desc.stride_bias), acc_elem)?),
    };
    let bias_at = |i: u32, j: u32| -> Accumulator {
        match (&bias, desc.bias_type) {
            (Some(t), BiasType::RowRepeat) => Accumulator::from_bits(acc_kind, t.bits(0, j)),
            (Some(t), _) => Accumulator::from_bits(acc_kind, t.bits(i, j)),
            (None, _) => Accumulator::zero(acc_kind),
        }
    };

    let mut c = TensorBuffer::zeros(m, n, acc_elem);
    match acc_kind {
        AccumulatorKind::Int32 => {
            let av: Vec<i32> = a.to_bits().iter().map(|&x| i32::from(x as u8 as i8)).collect();
            let bt = b.transpose();
            let bv: Vec<i32> = bt.to_bits().iter().map(|&x| i32::from(x as u8 as i8)).collect();
            for i in 0..m {
                let row = &av[i as usize * k..(i as usize + 1) * k];
                for j in 0..n {
                    let col = &bv[j as usize * k..(j as usize + 1) * k];
                    let mut acc = bias_at(i, j);
                    for (ra, cb) in row.chunks(k_pe).zip(col.chunks(k_pe)) {
                        let part: i32 = ra.iter().zip(cb).map(|(x, y)| x * y).sum();
                        acc = acc.accumulate(Accumulator::Int32(part));
                    }
                    c.set_bits(i, j, acc.to_bits());
                }
            }
        }
        AccumulatorKind::Fp32 => {
            let decode = |t: &TensorBuffer| -> Vec<Term> {
                t.to_bits()
                    .into_iter()
                    .map(|x| Term::from(super::decode_bits(kind, x)))
                    .collect()
            };
            let av = decode(&a);
            let bv = decode(&b.transpose());
            for i in 0..m {
                let row = &av[i as usize * k..(i as usize + 1) * k];
                for j in 0..n {
                    let col = &bv[j as usize * k..(j as usize + 1) * k];
                    let mut acc = bias_at(i, j);
                    for (ra, cb) in row.chunks(k_pe).zip(col.chunks(k_pe)) {
                        let part = block_dot(ra, cb, k_pe, params);
                        acc = acc.accumulate(Accumulator::Fp32(part));
                    }
                    c.set_bits(i, j, acc.to_bits());
                }
            }
        }
    }
    Ok(if desc.transpose { c.transpose() } else { c })
}
