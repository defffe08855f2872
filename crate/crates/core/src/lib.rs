//! Atlas registration of images with lesions, jointly reconstructing a
//! quasi-normal appearance in atlas space.
//!
//! The engine minimises a vector-momentum stationary-velocity-field
//! registration energy (`⟨m₀, K m₀⟩ + σ⁻² (1 − LNCC)`) with exact
//! discrete gradients, alternating with a closed-form reconstruction step
//! that replaces lesion voxels by atlas appearance. Plain and cost-function
//! masked registration are available as baselines, together with a phantom
//! generator with exact ground-truth deformations and the evaluation
//! protocols used to compare them.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64` or `f32`.

pub mod energy;
pub mod error;
pub mod evalkit;
pub mod flow;
pub mod kernel;
pub(crate) mod par;
pub mod scalar;
pub mod similarity;
pub mod solver;
pub mod suite;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use flow::DispMap;
pub use kernel::MultiGaussKernel;
pub use scalar::Real;
pub use similarity::{LnccParams, MaskMode};
pub use solver::{Mode, RegistrationResult, SolverConfig};
pub use synth::{PhantomCase, PhantomSpec};
pub use volume::{Field3, Grid, Landmark, LandmarkSet, Mask, Region, Volume};

pub type Volume64 = Volume<f64>;
pub type Volume32 = Volume<f32>;
pub type Field64 = Field3<f64>;
pub type Field32 = Field3<f32>;
pub type DispMap64 = DispMap<f64>;
pub type DispMap32 = DispMap<f32>;
pub type RegistrationResult64 = RegistrationResult<f64>;
pub type RegistrationResult32 = RegistrationResult<f32>;
