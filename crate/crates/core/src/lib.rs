//! Simulator and analytic model of a decoupled CPU matrix extension.
//!
//! The crate is organised bottom-up: [`archconfig`] holds parameters and the
//! analytic model, [`numerics`] the PE arithmetic, [`isa`] the asynchronous
//! interface, [`engine`] the timing model, [`vector`] the vector co-model and
//! [`kernels`] the tiled GEMM schedules built on top of them.

pub mod archconfig;
pub mod config;
pub mod engine;
pub mod experiment;
pub mod isa;
pub mod kernels;
pub mod memory;
pub mod numerics;
pub mod vector;

pub use archconfig::{ArchConfig, DataKind, DataTypeSpec, ElemType, MemoryModel};
pub use engine::{simulate_op, MatrixUnit, SimReport, TimelineEvent};
pub use isa::{BiasType, MatMulDescriptor, OpHandle};
pub use kernels::{KernelMode, KernelPlan};
pub use memory::{SimMemory, TensorBuffer};
pub use vector::{VecOp, VectorConfig, VectorTask};
