//! Flat little-endian byte-addressed memory and strided tensor views.

use rand::Rng;
use thiserror::Error;

use crate::archconfig::ElemType;
use crate::numerics::format::Decoded;
use crate::numerics::{decode_bits, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("access of {len} bytes at {addr:#x} exceeds memory of {size} bytes")]
    OutOfRange { addr: u64, len: u64, size: u64 },
    #[error("stride {stride} is smaller than row length {row_bytes}")]
    StrideTooSmall { stride: u64, row_bytes: u64 },
}

/// Byte-addressed simulated memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimMemory {
    bytes: Vec<u8>,
}

impl SimMemory {
    pub fn new(size: usize) -> Self {
        SimMemory {
            bytes: vec![0; size],
        }
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    fn range(&self, addr: u64, len: u64) -> Result<std::ops::Range<usize>, MemoryError> {
        let end = addr.checked_add(len).filter(|&e| e <= self.size());
        match end {
            Some(end) => Ok(addr as usize..end as usize),
            None => Err(MemoryError::OutOfRange {
                addr,
                len,
                size: self.size(),
            }),
        }
    }

    pub fn read(&self, addr: u64, len: u64) -> Result<&[u8], MemoryError> {
        let r = self.range(addr, len)?;
        Ok(&self.bytes[r])
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<(), MemoryError> {
        let r = self.range(addr, data.len() as u64)?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }

    /// Reads one element's raw bits.
    pub fn read_bits(&self, addr: u64, elem: ElemType) -> Result<u32, MemoryError> {
        let b = self.read(addr, u64::from(elem.bytes()))?;
        let mut word = [0u8; 4];
        word[..b.len()].copy_from_slice(b);
        Ok(u32::from_le_bytes(word))
    }

    pub fn write_bits(&mut self, addr: u64, elem: ElemType, bits: u32) -> Result<(), MemoryError> {
        let n = elem.bytes() as usize;
        self.write(addr, &bits.to_le_bytes()[..n])
    }

    pub fn read_tensor(
        &self,
        addr: u64,
        rows: u32,
        cols: u32,
        stride_bytes: u64,
        elem: ElemType,
    ) -> Result<TensorBuffer, MemoryError> {
        let row_bytes = u64::from(cols) * u64::from(elem.bytes());
        if stride_bytes < row_bytes {
            return Err(MemoryError::StrideTooSmall {
                stride: stride_bytes,
                row_bytes,
            });
        }
        let mut t = TensorBuffer::zeros(rows, cols, elem);
        for r in 0..u64::from(rows) {
            let src = self.read(addr + r * stride_bytes, row_bytes)?;
            let dst = r as usize * row_bytes as usize;
            t.data[dst..dst + row_bytes as usize].copy_from_slice(src);
        }
        Ok(t)
    }

    pub fn write_tensor(
        &mut self,
        addr: u64,
        stride_bytes: u64,
        t: &TensorBuffer,
    ) -> Result<(), MemoryError> {
        let row_bytes = t.row_bytes();
        if stride_bytes < row_bytes {
            return Err(MemoryError::StrideTooSmall {
                stride: stride_bytes,
                row_bytes,
            });
        }
        for r in 0..u64::from(t.rows) {
            let src = r as usize * row_bytes as usize;
            self.write(addr + r * stride_bytes, &t.data[src..src + row_bytes as usize])?;
        }
        Ok(())
    }
}

/// Dense row-major matrix of raw element encodings.
///
/// The buffer is packed; the stride it lives at in simulated memory is a
/// property of the descriptor that reads or writes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorBuffer {
    pub rows: u32,
    pub cols: u32,
    pub elem: ElemType,
    data: Vec<u8>,
}

impl TensorBuffer {
    pub fn zeros(rows: u32, cols: u32, elem: ElemType) -> Self {
        let len = rows as usize * cols as usize * elem.bytes() as usize;
        TensorBuffer {
            rows,
            cols,
            elem,
            data: vec![0; len],
        }
    }

    pub fn from_bits(rows: u32, cols: u32, elem: ElemType, bits: &[u32]) -> Self {
        assert_eq!(bits.len(), rows as usize * cols as usize);
        let mut t = TensorBuffer::zeros(rows, cols, elem);
        for (i, &b) in bits.iter().enumerate() {
            t.set_bits_linear(i, b);
        }
        t
    }

    /// Uniformly random raw encodings. Float NaN codes are re-drawn so every
    /// element is a number.
    pub fn random<R: Rng>(rows: u32, cols: u32, elem: ElemType, rng: &mut R) -> Self {
        let mut t = TensorBuffer::zeros(rows, cols, elem);
        let mask = if elem.bits() == 32 { u32::MAX } else { (1u32 << elem.bits()) - 1 };
        for i in 0..t.len() {
            let bits = loop {
                let mut b = rng.gen::<u32>() & mask;
                if elem == ElemType::Tf32 {
                    b &= !0x1fff;
                }
                let ok = match elem.data_kind() {
                    Some(kind) => !matches!(decode_bits(kind, b), Decoded::NaN | Decoded::Inf { .. }),
                    None if elem == ElemType::Fp32 => f32::from_bits(b).is_finite(),
                    None => true,
                };
                if ok {
                    break b;
                }
            };
            t.set_bits_linear(i, bits);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_bytes(&self) -> u64 {
        u64::from(self.cols) * u64::from(self.elem.bytes())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    fn set_bits_linear(&mut self, i: usize, bits: u32) {
        let n = self.elem.bytes() as usize;
        self.data[i * n..(i + 1) * n].copy_from_slice(&bits.to_le_bytes()[..n]);
    }

    fn bits_linear(&self, i: usize) -> u32 {
        let n = self.elem.bytes() as usize;
        let mut word = [0u8; 4];
        word[..n].copy_from_slice(&self.data[i * n..(i + 1) * n]);
        u32::from_le_bytes(word)
    }

    pub fn bits(&self, r: u32, c: u32) -> u32 {
        self.bits_linear(r as usize * self.cols as usize + c as usize)
    }

    pub fn set_bits(&mut self, r: u32, c: u32, bits: u32) {
        let i = r as usize * self.cols as usize + c as usize;
        self.set_bits_linear(i, bits);
    }

    /// All element encodings in row-major order.
    pub fn to_bits(&self) -> Vec<u32> {
        (0..self.len()).map(|i| self.bits_linear(i)).collect()
    }

    /// Numeric value of element `(r, c)`.
    pub fn value(&self, r: u32, c: u32) -> f64 {
        let b = self.bits(r, c);
        match self.elem {
            ElemType::Int32 => f64::from(b as i32),
            ElemType::Fp32 => f64::from(f32::from_bits(b)),
            other => decode_bits(other.data_kind().expect("input kind"), b).to_f64(),
        }
    }

    /// Encodes `v` into element `(r, c)`, rounding to nearest even and
    /// saturating integers.
    pub fn set_value(&mut self, r: u32, c: u32, v: f64) {
        let bits = encode_value(self.elem, v);
        self.set_bits(r, c, bits);
    }

    pub fn transpose(&self) -> TensorBuffer {
        let mut t = TensorBuffer::zeros(self.cols, self.rows, self.elem);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set_bits(c, r, self.bits(r, c));
            }
        }
        t
    }
}

/// Encodes a numeric value as `elem`.
pub fn encode_value(elem: ElemType, v: f64) -> u32 {
    match elem {
        ElemType::Int32 => {
            let x = if v.is_nan() {
                0.0
            } else {
                v.round_ties_even().clamp(f64::from(i32::MIN), f64::from(i32::MAX))
            };
            x as i32 as u32
        }
        ElemType::Fp32 => (v as f32).to_bits(),
        other => Scalar::from_f64(other.data_kind().expect("input kind"), v).bits,
    }
}
