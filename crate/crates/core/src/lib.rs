//! Block-structured Finite Volume patch kernels.
//!
//! A domain is tiled into small Cartesian patches of `p^d` volumes, each
//! surrounded by a one-volume halo. The [`kernel`] module advances a whole
//! [`mesh::PatchBatch`] by one explicit Rusanov step, either patch by patch or
//! step by step over the full batch, with temporaries stored in AoS, SoA or
//! AoSoA order. The [`scheduler`] module drives multi-step runs and mimics
//! enclave tasking: patches that sit on a boundary are updated right away, the
//! rest are buffered and shipped in batches of `N`. The [`bench`] module times
//! the kernels per Finite Volume update.
//!
//! All numerics are generic over [`Real`]; the aliases below pin the common
//! choices.

pub mod bench;
pub mod itspace;
pub mod kernel;
pub mod mesh;
pub mod pde;
pub mod scalar;
pub mod scheduler;

pub use itspace::{ExecutionStrategy, IndexSpace, StrategyKind};
pub use kernel::{update_patch_batch, KernelTemporaries, KernelVariant, Ordering};
pub use mesh::{LayoutEnumerator, LayoutKind, PatchBatch, PatchSpec};
pub use pde::{Euler, EulerParameters, Pde};
pub use scalar::Real;
pub use scheduler::{run_simulation, DriverConfig, SimulationResult};

/// Double precision patch batch.
pub type PatchBatchF64 = PatchBatch<f64>;
/// Single precision patch batch.
pub type PatchBatchF32 = PatchBatch<f32>;
/// Double precision Euler equations.
pub type EulerF64 = Euler<f64>;
/// Single precision Euler equations.
pub type EulerF32 = Euler<f32>;
/// Double precision kernel temporaries.
pub type KernelTemporariesF64 = KernelTemporaries<f64>;
/// Double precision simulation output.
pub type SimulationResultF64 = SimulationResult<f64>;
