//! Vector-unit co-model for element-wise prologues and epilogues.
//!
//! Values are computed in FP32. Timing charges whole vector beats per
//! operator; division is charged per element.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archconfig::ElemType;
use crate::memory::{encode_value, TensorBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Copy,
    BiasAdd,
    Relu,
    Silu,
    Quantize,
    Dequantize,
    RowSoftmax,
    ElementwiseDiv,
}

impl OpClass {
    pub const ALL: [OpClass; 8] = [
        OpClass::Copy,
        OpClass::BiasAdd,
        OpClass::Relu,
        OpClass::Silu,
        OpClass::Quantize,
        OpClass::Dequantize,
        OpClass::RowSoftmax,
        OpClass::ElementwiseDiv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Copy => "copy",
            OpClass::BiasAdd => "bias_add",
            OpClass::Relu => "relu",
            OpClass::Silu => "silu",
            OpClass::Quantize => "quantize",
            OpClass::Dequantize => "dequantize",
            OpClass::RowSoftmax => "row_softmax",
            OpClass::ElementwiseDiv => "elementwise_div",
        }
    }
}

/// One operator of an element-wise chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum VecOp {
    Copy,
    BiasAdd { bias: f32 },
    Relu,
    /// `x * sigmoid(x)`, evaluated with one division per element.
    Silu,
    /// FP32 to INT8 range: `clamp(round_even(x / scale), -128, 127)`.
    Quantize { scale: f32 },
    Dequantize { scale: f32 },
    RowSoftmax,
    ElementwiseDiv { divisor: f32 },
}

impl VecOp {
    pub fn class(&self) -> OpClass {
        match self {
            VecOp::Copy => OpClass::Copy,
            VecOp::BiasAdd { .. } => OpClass::BiasAdd,
            VecOp::Relu => OpClass::Relu,
            VecOp::Silu => OpClass::Silu,
            VecOp::Quantize { .. } => OpClass::Quantize,
            VecOp::Dequantize { .. } => OpClass::Dequantize,
            VecOp::RowSoftmax => OpClass::RowSoftmax,
            VecOp::ElementwiseDiv { .. } => OpClass::ElementwiseDiv,
        }
    }
}

impl fmt::Display for VecOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.class().name();
        match self {
            VecOp::BiasAdd { bias: v } | VecOp::Quantize { scale: v } | VecOp::Dequantize { scale: v } | VecOp::ElementwiseDiv { divisor: v } => {
                write!(f, "{name}:{v}")
            }
            _ => f.write_str(name),
        }
    }
}

/// `name` or `name:value`, e.g. `relu`, `quantize:0.05`.
impl FromStr for VecOp {
    type Err = VectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let value = |default: f32| -> Result<f32, VectorError> {
            match arg {
                None => Ok(default),
                Some(a) => a.parse().map_err(|_| VectorError::BadArgument(s.to_string())),
            }
        };
        let op = match name.to_ascii_lowercase().as_str() {
            "copy" => VecOp::Copy,
            "bias_add" => VecOp::BiasAdd { bias: value(0.0)? },
            "relu" => VecOp::Relu,
            "silu" => VecOp::Silu,
            "quantize" => VecOp::Quantize { scale: value(1.0)? },
            "dequantize" => VecOp::Dequantize { scale: value(1.0)? },
            "row_softmax" | "softmax" => VecOp::RowSoftmax,
            "elementwise_div" | "div" => VecOp::ElementwiseDiv { divisor: value(1.0)? },
            _ => return Err(VectorError::UnknownOp(name.to_string())),
        };
        Ok(op)
    }
}

/// Parses a `+`- or comma-separated chain such as `bias_add:1+relu`.
pub fn parse_chain(s: &str) -> Result<Vec<VecOp>, VectorError> {
    if s.trim().is_empty() || s.trim() == "none" {
        return Ok(Vec::new());
    }
    s.split(['+', ',']).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("unknown vector op `{0}`")]
    UnknownOp(String),
    #[error("no cost configured for op class `{0}`")]
    MissingCost(&'static str),
    #[error("bad op argument in `{0}`")]
    BadArgument(String),
    #[error("buffer is {got_rows}x{got_cols} {got_elem:?}, task expects {rows}x{cols} {elem:?}")]
    ShapeMismatch {
        rows: u32,
        cols: u32,
        elem: ElemType,
        got_rows: u32,
        got_cols: u32,
        got_elem: ElemType,
    },
    #[error("invalid vector config: {0}")]
    Config(String),
}

fn default_vlen() -> u32 {
    512
}
fn default_div() -> u64 {
    8
}
fn default_costs() -> BTreeMap<OpClass, u64> {
    OpClass::ALL
        .into_iter()
        .filter(|c| *c != OpClass::ElementwiseDiv)
        .map(|c| {
            let beats = match c {
                OpClass::Quantize | OpClass::Dequantize | OpClass::Silu => 2,
                OpClass::RowSoftmax => 4,
                _ => 1,
            };
            (c, beats)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorConfig {
    #[serde(default = "default_vlen")]
    pub vlen_bits: u32,
    /// Cycles per vector beat for each op class.
    #[serde(default = "default_costs")]
    pub op_cost: BTreeMap<OpClass, u64>,
    #[serde(default = "default_div")]
    pub div_cost_per_element: u64,
}

impl Default for VectorConfig {
    fn default() -> Self {
        VectorConfig {
            vlen_bits: default_vlen(),
            op_cost: default_costs(),
            div_cost_per_element: default_div(),
        }
    }
}

impl VectorConfig {
    pub fn validate(&self) -> Result<(), VectorError> {
        if self.vlen_bits == 0 || self.vlen_bits % 64 != 0 {
            return Err(VectorError::Config(format!("vlen_bits {} is not a positive multiple of 64", self.vlen_bits)));
        }
        if self.div_cost_per_element == 0 || self.op_cost.values().any(|&c| c == 0) {
            return Err(VectorError::Config("every cost must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lanes(&self, elem: ElemType) -> u64 {
        u64::from((self.vlen_bits / elem.bits()).max(1))
    }

    fn beat_cost(&self, class: OpClass) -> Result<u64, VectorError> {
        self.op_cost.get(&class).copied().ok_or(VectorError::MissingCost(class.name()))
    }
}

/// An element-wise chain over one `rows x cols` tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorTask {
    pub ops: Vec<VecOp>,
    pub rows: u32,
    pub cols: u32,
    pub dtype_in: ElemType,
    pub dtype_out: ElemType,
}

impl VectorTask {
    pub fn elements(&self) -> u64 {
        u64::from(self.rows) * u64::from(self.cols)
    }
}

/// Cycles the chain occupies the issue lane.
pub fn vec_cost(task: &VectorTask, cfg: &VectorConfig) -> Result<u64, VectorError> {
    let elems = task.elements();
    let beats = elems.div_ceil(cfg.lanes(task.dtype_in));
    let mut total = 0;
    for op in &task.ops {
        total += match op.class() {
            OpClass::ElementwiseDiv => cfg.div_cost_per_element * elems,
            OpClass::Silu => beats * cfg.beat_cost(OpClass::Silu)? + cfg.div_cost_per_element * elems,
            c => beats * cfg.beat_cost(c)?,
        };
    }
    Ok(total)
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Applies the chain to `buf` and encodes the result as `dtype_out`.
pub fn vec_execute(task: &VectorTask, buf: &TensorBuffer) -> Result<TensorBuffer, VectorError> {
    if (buf.rows, buf.cols, buf.elem) != (task.rows, task.cols, task.dtype_in) {
        return Err(VectorError::ShapeMismatch {
            rows: task.rows,
            cols: task.cols,
            elem: task.dtype_in,
            got_rows: buf.rows,
            got_cols: buf.cols,
            got_elem: buf.elem,
        });
    }
    let cols = task.cols as usize;
    let mut vals: Vec<f32> = (0..task.rows)
        .flat_map(|r| (0..task.cols).map(move |c| (r, c)))
        .map(|(r, c)| buf.value(r, c) as f32)
        .collect();
    for op in &task.ops {
        match *op {
            VecOp::Copy => {}
            VecOp::BiasAdd { bias } => vals.iter_mut().for_each(|x| *x += bias),
            VecOp::Relu => vals.iter_mut().for_each(|x| *x = x.max(0.0)),
            VecOp::Silu => vals.iter_mut().for_each(|x| *x = silu(*x)),
            VecOp::Quantize { scale } => vals
                .iter_mut()
                .for_each(|x| *x = (*x / scale).round_ties_even().clamp(-128.0, 127.0)),
            VecOp::Dequantize { scale } => vals.iter_mut().for_each(|x| *x *= scale),
            VecOp::ElementwiseDiv { divisor } => vals.iter_mut().for_each(|x| *x /= divisor),
            VecOp::RowSoftmax => {
                if cols > 0 {
                    for row in vals.chunks_mut(cols) {
                        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                        row.iter_mut().for_each(|x| *x = (*x - max).exp());
                        let sum: f32 = row.iter().sum();
                        row.iter_mut().for_each(|x| *x /= sum);
                    }
                }
            }
        }
    }
    let bits: Vec<u32> = vals
        .iter()
        .map(|&v| encode_value(task.dtype_out, f64::from(v)))
        .collect();
    Ok(TensorBuffer::from_bits(task.rows, task.cols, task.dtype_out, &bits))
}
