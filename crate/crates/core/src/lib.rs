//! Numerical toolkit for interval maps with an indifferent fixed point.
//!
//! The crate is organised around five pieces:
//!
//! - [`map_family`]: two-branch maps of the Liverani–Saussol–Vaienti type,
//!   class-membership checks and deterministic perturbation families.
//! - [`density`]: densities on singularity-graded meshes with the L¹,
//!   weighted α-norm and Lipschitz norms, and the invariant-cone predicates.
//! - [`transfer`]: the transfer operator, its Ulam discretization, invariant
//!   densities and decay of iterates.
//! - [`bounds`]: the explicit constants (A*, K_T, a_T, b_T, M, ...) and the
//!   Hölder stability bound.
//! - [`experiment`]: configuration, experiment runners and CSV/JSON output
//!   used by the `lsv-stability` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod density;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod map_family;
pub mod transfer;

pub use error::{Error, Result};
