//! Element formats accepted by the PE array.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Input precision of a matrix operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Int8,
    /// E4M3, bias 7, no infinities.
    Fp8,
    Fp16,
    Bf16,
    /// 1+8+10 significant bits carried in a 32-bit container.
    Tf32,
}

/// Width of the per-PE accumulator for a given input precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccumulatorKind {
    Int32,
    Fp32,
}

impl AccumulatorKind {
    pub fn elem(self) -> ElemType {
        match self {
            AccumulatorKind::Int32 => ElemType::Int32,
            AccumulatorKind::Fp32 => ElemType::Fp32,
        }
    }
}

/// Static description of a [`DataKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataTypeSpec {
    pub kind: DataKind,
    pub storage_bits: u32,
    pub exponent_bits: u32,
    pub mantissa_bits: u32,
    pub accumulator: AccumulatorKind,
}

impl DataTypeSpec {
    /// Number of elements one PE consumes per cycle at the given reduce width.
    pub fn elems_per_reduce(&self, k_pe_bits: u32) -> u32 {
        k_pe_bits / self.storage_bits
    }

    pub fn bytes(&self) -> u32 {
        self.storage_bits / 8
    }
}

impl DataKind {
    pub const ALL: [DataKind; 5] = [
        DataKind::Int8,
        DataKind::Fp8,
        DataKind::Fp16,
        DataKind::Bf16,
        DataKind::Tf32,
    ];

    pub const fn spec(self) -> DataTypeSpec {
        let (storage_bits, exponent_bits, mantissa_bits, accumulator) = match self {
            DataKind::Int8 => (8, 0, 7, AccumulatorKind::Int32),
            DataKind::Fp8 => (8, 4, 3, AccumulatorKind::Fp32),
            DataKind::Fp16 => (16, 5, 10, AccumulatorKind::Fp32),
            DataKind::Bf16 => (16, 8, 7, AccumulatorKind::Fp32),
            DataKind::Tf32 => (32, 8, 10, AccumulatorKind::Fp32),
        };
        DataTypeSpec {
            kind: self,
            storage_bits,
            exponent_bits,
            mantissa_bits,
            accumulator,
        }
    }

    pub fn storage_bits(self) -> u32 {
        self.spec().storage_bits
    }

    pub fn bytes(self) -> u32 {
        self.spec().bytes()
    }

    pub fn accumulator(self) -> AccumulatorKind {
        self.spec().accumulator
    }

    pub fn elem(self) -> ElemType {
        match self {
            DataKind::Int8 => ElemType::Int8,
            DataKind::Fp8 => ElemType::Fp8,
            DataKind::Fp16 => ElemType::Fp16,
            DataKind::Bf16 => ElemType::Bf16,
            DataKind::Tf32 => ElemType::Tf32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DataKind::Int8 => "int8",
            DataKind::Fp8 => "fp8",
            DataKind::Fp16 => "fp16",
            DataKind::Bf16 => "bf16",
            DataKind::Tf32 => "tf32",
        }
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown data type `{s}`"))
    }
}

/// Element type of a tensor in simulated memory. Superset of [`DataKind`]
/// that also covers accumulator-width outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    Int8,
    Fp8,
    Fp16,
    Bf16,
    Tf32,
    Int32,
    Fp32,
}

impl ElemType {
    pub fn bytes(self) -> u32 {
        match self {
            ElemType::Int8 | ElemType::Fp8 => 1,
            ElemType::Fp16 | ElemType::Bf16 => 2,
            ElemType::Tf32 | ElemType::Int32 | ElemType::Fp32 => 4,
        }
    }

    pub fn bits(self) -> u32 {
        self.bytes() * 8
    }

    pub fn data_kind(self) -> Option<DataKind> {
        match self {
            ElemType::Int8 => Some(DataKind::Int8),
            ElemType::Fp8 => Some(DataKind::Fp8),
            ElemType::Fp16 => Some(DataKind::Fp16),
            ElemType::Bf16 => Some(DataKind::Bf16),
            ElemType::Tf32 => Some(DataKind::Tf32),
            ElemType::Int32 | ElemType::Fp32 => None,
        }
    }
}
