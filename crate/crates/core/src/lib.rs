//! Random walks among Bernoulli obstacles on finite boxes of `Z^d`.
//!
//! The crate computes quenched survival probabilities of the killed simple
//! random walk exactly, local principal eigenvalues of the restricted walk
//! operator, the island hierarchy built from them, paths sampled exactly from
//! the walk conditioned on survival, and their loop-erasure decompositions.

pub mod error;
pub mod experiments;
pub mod islands;
pub mod lattice;
pub mod percolation;
pub mod persist;
pub mod spectral;
pub mod survival;
pub mod walker;

pub use error::{Error, FormatError, Result};
pub use lattice::{
    region, region_in, BoundaryRule, BoxSpec, Environment, Norm, Site, SiteSet, SiteValues,
};
