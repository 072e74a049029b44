//! Denoising and inpainting with higher-order, linear-growth regularizers.
//!
//! The crate minimizes `J[u] = ∫ F(∇^m u) + λ/2 ∫_{Ω−D} (u − f)²` for the
//! μ-elliptic densities `F(Z) = Φ_μ(|Z|)` on pixel grids and certifies the
//! result with a Fenchel duality gap.
//!
//! Regularity diagnostics live in [`diagnostics`]; [`approxlab`] builds smooth
//! approximations of 1D `BV^m` signals in the strict metric.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approxlab;
pub mod density;
pub mod diagnostics;
pub mod dual;
pub mod energy;
pub mod error;
pub mod fixtures;
pub mod pgm;
pub mod solver;
mod sum;
pub mod tensorgrid;

pub use density::{DensityParams, GrowthConstants};
pub use dual::{Certificate, DualCandidate};
pub use energy::{EnergyBreakdown, Problem};
pub use error::{Error, Result};
pub use solver::{SolveConfig, SolveReport, StageRecord};
pub use tensorgrid::{Mask, ScalarField, SymTensor, SymTensorField, TensorShape};
