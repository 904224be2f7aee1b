//! Asynchronous matrix-multiplication interface.
//!
//! Software sees two instructions: `async_matmul` enqueues a descriptor and
//! returns at once, `check_matmul` blocks until the oldest unchecked
//! operation has completed. Operations complete strictly in issue order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archconfig::{DataKind, ElemType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasType {
    #[default]
    Zero,
    /// One bias row broadcast to every output row.
    RowRepeat,
    Full,
}

impl FromStr for BiasType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "zero" => Ok(BiasType::Zero),
            "row_repeat" | "rowrepeat" => Ok(BiasType::RowRepeat),
            "full" => Ok(BiasType::Full),
            other => Err(format!("unknown bias type `{other}`")),
        }
    }
}

/// Interface registers describing one `C = A * B + bias` task.
///
/// `A` is `m x k`, `B` is `k x n`, bias and `C` hold accumulator-width
/// elements. With `transpose` set, `C` is stored as `n x m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatMulDescriptor {
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub base_a: u64,
    pub base_b: u64,
    #[serde(default)]
    pub base_bias: u64,
    pub base_c: u64,
    pub stride_a: u32,
    pub stride_b: u32,
    #[serde(default)]
    pub stride_bias: u32,
    pub stride_c: u32,
    pub dtype: DataKind,
    #[serde(default)]
    pub bias_type: BiasType,
    #[serde(default)]
    pub transpose: bool,
}

/// A contiguous-rows region touched by a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub base: u64,
    pub rows: u32,
    pub row_bytes: u64,
    pub stride: u64,
}

impl Extent {
    /// One past the last byte touched.
    pub fn end(&self) -> u128 {
        if self.rows == 0 {
            return u128::from(self.base);
        }
        u128::from(self.base) + u128::from(self.rows - 1) * u128::from(self.stride) + u128::from(self.row_bytes)
    }

    /// Whether any byte is touched by both regions, row by row.
    pub fn overlaps(&self, other: &Extent) -> bool {
        if self.rows == 0 || other.rows == 0 || self.row_bytes == 0 || other.row_bytes == 0 {
            return false;
        }
        if !(u128::from(self.base) < other.end() && u128::from(other.base) < self.end()) {
            return false;
        }
        let (few, many) = if self.rows <= other.rows { (self, other) } else { (other, self) };
        let mb = u128::from(many.base);
        let ms = u128::from(many.stride.max(1));
        let ml = u128::from(many.row_bytes);
        for r in 0..u128::from(few.rows) {
            let lo = u128::from(few.base) + r * u128::from(few.stride);
            let hi = lo + u128::from(few.row_bytes);
            // First row of `many` that ends after `lo`.
            let s = if lo + 1 > mb + ml { (lo + 1 - ml - mb).div_ceil(ms) } else { 0 };
            if s < u128::from(many.rows) && mb + s * ms < hi {
                return true;
            }
        }
        false
    }

    pub fn bytes(&self) -> u64 {
        u64::from(self.rows) * self.row_bytes
    }
}

impl MatMulDescriptor {
    /// Packed row-major operands at the given bases.
    pub fn packed(m: u32, n: u32, k: u32, dtype: DataKind, base_a: u64, base_b: u64, base_c: u64) -> Self {
        let eb = dtype.bytes();
        let acc = dtype.accumulator().elem().bytes();
        MatMulDescriptor {
            m,
            n,
            k,
            base_a,
            base_b,
            base_bias: 0,
            base_c,
            stride_a: k * eb,
            stride_b: n * eb,
            stride_bias: n * acc,
            stride_c: n * acc,
            dtype,
            bias_type: BiasType::Zero,
            transpose: false,
        }
    }

    pub fn acc_elem(&self) -> ElemType {
        self.dtype.accumulator().elem()
    }

    pub fn a_extent(&self) -> Extent {
        Extent {
            base: self.base_a,
            rows: self.m,
            row_bytes: u64::from(self.k) * u64::from(self.dtype.bytes()),
            stride: u64::from(self.stride_a),
        }
    }

    pub fn b_extent(&self) -> Extent {
        Extent {
            base: self.base_b,
            rows: self.k,
            row_bytes: u64::from(self.n) * u64::from(self.dtype.bytes()),
            stride: u64::from(self.stride_b),
        }
    }

    pub fn bias_extent(&self) -> Option<Extent> {
        let rows = match self.bias_type {
            BiasType::Zero => return None,
            BiasType::RowRepeat => 1,
            BiasType::Full => self.m,
        };
        Some(Extent {
            base: self.base_bias,
            rows,
            row_bytes: u64::from(self.n) * u64::from(self.acc_elem().bytes()),
            stride: u64::from(self.stride_bias),
        })
    }

    pub fn c_extent(&self) -> Extent {
        let (rows, cols) = if self.transpose { (self.n, self.m) } else { (self.m, self.n) };
        Extent {
            base: self.base_c,
            rows,
            row_bytes: u64::from(cols) * u64::from(self.acc_elem().bytes()),
            stride: u64::from(self.stride_c),
        }
    }

    pub fn mac_count(&self) -> u64 {
        u64::from(self.m) * u64::from(self.n) * u64::from(self.k)
    }
}

/// One violated descriptor invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct DescriptorError {
    pub field: &'static str,
    pub message: String,
}

/// Checks every descriptor invariant against a memory of `mem_bytes`.
pub fn validate(desc: &MatMulDescriptor, mem_bytes: u64) -> Result<(), Vec<DescriptorError>> {
    let mut errs = Vec::new();
    let mut bad = |field: &'static str, message: String| errs.push(DescriptorError { field, message });

    for (field, v) in [("m", desc.m), ("n", desc.n), ("k", desc.k)] {
        if v == 0 {
            bad(field, "must be at least 1".into());
        }
    }

    let elem = u64::from(desc.dtype.bytes());
    let acc = u64::from(desc.acc_elem().bytes());
    let mut regions = vec![
        ("base_a", "stride_a", desc.a_extent(), elem),
        ("base_b", "stride_b", desc.b_extent(), elem),
    ];
    if let Some(bias) = desc.bias_extent() {
        regions.push(("base_bias", "stride_bias", bias, acc));
    }
    regions.push(("base_c", "stride_c", desc.c_extent(), acc));

    for (base_field, stride_field, ext, align) in &regions {
        if ext.stride < ext.row_bytes {
            bad(
                stride_field,
                format!("{} bytes is smaller than the {}-byte row", ext.stride, ext.row_bytes),
            );
        }
        if ext.base % align != 0 {
            bad(base_field, format!("{:#x} is not aligned to {align} bytes", ext.base));
        }
        if ext.end() > u128::from(mem_bytes) {
            bad(
                base_field,
                format!(
                    "region [{:#x}, {:#x}) exceeds memory of {mem_bytes} bytes",
                    ext.base,
                    ext.end()
                ),
            );
        }
    }
    let c = desc.c_extent();
    for (base_field, _, ext, _) in &regions[..regions.len() - 1] {
        if ext.overlaps(&c) {
            bad("base_c", format!("output region overlaps {base_field}"));
        }
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Parses `key=value` pairs separated by commas or whitespace, using the
/// descriptor field names (`m=64, n=64, k=256, base_a=0x0, ...`).
impl FromStr for MatMulDescriptor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut d = MatMulDescriptor::packed(1, 1, 1, DataKind::Int8, 0, 0, 0);
        let mut stride_set = [false; 4];
        for pair in s.split(|c: char| c == ',' || c.is_whitespace()).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{pair}`"))?;
            let int = |v: &str| -> Result<u64, String> {
                let v = v.trim();
                let parsed = match v.strip_prefix("0x") {
                    Some(hex) => u64::from_str_radix(hex, 16),
                    None => v.parse(),
                };
                parsed.map_err(|e| format!("{key}: {e}"))
            };
            let small = |v: &str| -> Result<u32, String> {
                u32::try_from(int(v)?).map_err(|_| format!("{key}: out of range"))
            };
            match key.trim().to_ascii_lowercase().as_str() {
                "m" => d.m = small(value)?,
                "n" => d.n = small(value)?,
                "k" => d.k = small(value)?,
                "base_a" => d.base_a = int(value)?,
                "base_b" => d.base_b = int(value)?,
                "base_bias" => d.base_bias = int(value)?,
                "base_c" => d.base_c = int(value)?,
                "stride_a" => (d.stride_a, stride_set[0]) = (small(value)?, true),
                "stride_b" => (d.stride_b, stride_set[1]) = (small(value)?, true),
                "stride_bias" => (d.stride_bias, stride_set[2]) = (small(value)?, true),
                "stride_c" => (d.stride_c, stride_set[3]) = (small(value)?, true),
                "dtype" => d.dtype = value.parse()?,
                "bias_type" => d.bias_type = value.parse()?,
                "transpose" => {
                    d.transpose = value
                        .trim()
                        .parse()
                        .map_err(|_| format!("transpose: expected true/false, got `{value}`"))?
                }
                other => return Err(format!("unknown descriptor field `{other}`")),
            }
        }
        // Unspecified strides default to packed rows.
        let eb = d.dtype.bytes();
        let acc = d.acc_elem().bytes();
        if !stride_set[0] {
            d.stride_a = d.k * eb;
        }
        if !stride_set[1] {
            d.stride_b = d.n * eb;
        }
        if !stride_set[2] {
            d.stride_bias = d.n * acc;
        }
        if !stride_set[3] {
            d.stride_c = if d.transpose { d.m } else { d.n } * acc;
        }
        Ok(d)
    }
}

/// Identifier of one issued operation; ids grow by one per issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpHandle(pub u64);

impl fmt::Display for OpHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "op{}", self.0)
    }
}

/// Snapshot of the status register.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct StatusRegister {
    pub issued: u64,
    /// Operations the matrix unit has completed.
    pub retired: u64,
    pub pending: u64,
    pub error_code: Option<ErrorCode>,
}

/// Last rejection reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorCode {
    pub field: &'static str,
    pub message: String,
}

/// Timing side of the matrix unit as seen from the interface.
pub trait MatrixBackend {
    type Error;

    /// Starts `handle` no earlier than cycle `at`.
    fn accept(&mut self, handle: OpHandle, desc: &MatMulDescriptor, at: u64) -> Result<(), Self::Error>;

    /// Completion cycle of an accepted operation.
    fn completion(&mut self, handle: OpHandle) -> u64;

    /// Whether `handle` has completed by cycle `now`. Must not change the
    /// schedule of any operation.
    fn completed_by(&mut self, handle: OpHandle, now: u64) -> bool;
}

#[derive(Debug, Error)]
pub enum IsaError<E> {
    #[error("descriptor rejected: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Rejected(Vec<DescriptorError>),
    #[error(transparent)]
    Backend(E),
}

/// Outcome of an issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Issued {
    pub handle: OpHandle,
    /// Cycle the descriptor was accepted (after any queue-full stall).
    pub accepted_at: u64,
    pub stall_cycles: u64,
}

/// Outcome of a check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checked {
    /// `None` when nothing was outstanding.
    pub handle: Option<OpHandle>,
    pub resume_at: u64,
}

/// Interface state owned by one simulated CPU.
#[derive(Debug, Clone)]
pub struct AsyncInterface {
    queue_depth: u32,
    mem_bytes: u64,
    issued: u64,
    /// Prefix of operations known complete.
    completed: u64,
    /// Prefix of operations returned by `check_matmul`.
    checked: u64,
    error_code: Option<ErrorCode>,
}

impl AsyncInterface {
    pub fn new(queue_depth: u32, mem_bytes: u64) -> Self {
        AsyncInterface {
            queue_depth,
            mem_bytes,
            issued: 0,
            completed: 0,
            checked: 0,
            error_code: None,
        }
    }

    fn advance<B: MatrixBackend>(&mut self, backend: &mut B, now: u64) {
        while self.completed < self.issued && backend.completed_by(OpHandle(self.completed), now) {
            self.completed += 1;
        }
    }

    pub fn async_matmul<B: MatrixBackend>(
        &mut self,
        backend: &mut B,
        desc: &MatMulDescriptor,
        now: u64,
    ) -> Result<Issued, IsaError<B::Error>> {
        if let Err(errs) = validate(desc, self.mem_bytes) {
            let first = &errs[0];
            self.error_code = Some(ErrorCode {
                field: first.field,
                message: first.message.clone(),
            });
            return Err(IsaError::Rejected(errs));
        }
        self.advance(backend, now);
        let mut accepted_at = now;
        if self.issued - self.completed >= u64::from(self.queue_depth) {
            let blocker = OpHandle(self.issued - u64::from(self.queue_depth));
            accepted_at = accepted_at.max(backend.completion(blocker));
            self.advance(backend, accepted_at);
        }
        let handle = OpHandle(self.issued);
        backend
            .accept(handle, desc, accepted_at)
            .map_err(IsaError::Backend)?;
        self.issued += 1;
        Ok(Issued {
            handle,
            accepted_at,
            stall_cycles: accepted_at - now,
        })
    }

    pub fn check_matmul<B: MatrixBackend>(&mut self, backend: &mut B, now: u64) -> Checked {
        if self.checked == self.issued {
            return Checked {
                handle: None,
                resume_at: now,
            };
        }
        let handle = OpHandle(self.checked);
        let resume_at = now.max(backend.completion(handle));
        self.checked += 1;
        self.advance(backend, resume_at);
        Checked {
            handle: Some(handle),
            resume_at,
        }
    }

    pub fn read_status<B: MatrixBackend>(&mut self, backend: &mut B, now: u64) -> StatusRegister {
        self.advance(backend, now);
        StatusRegister {
            issued: self.issued,
            retired: self.completed,
            pending: self.issued - self.completed,
            error_code: self.error_code.clone(),
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    /// Operations returned by `check_matmul` so far.
    pub fn checked(&self) -> u64 {
        self.checked
    }

    pub fn queue_depth(&self) -> u32 {
        self.queue_depth
    }
}
