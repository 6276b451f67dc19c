//! Multiscale Bayesian inference with triangular transport maps.
//!
//! The library decomposes a high-dimensional Bayesian inverse problem into a
//! low-dimensional coarse-scale sampling problem and a coarse-to-fine
//! prolongation step, using lower-triangular (Knothe–Rosenblatt) transport
//! maps built from joint prior samples:
//!
//! 1. sample the joint prior of coarse parameters `γ` and fine parameters `θ`,
//! 2. build a triangular map pushing the joint prior to a standard normal,
//! 3. regress the inverse map,
//! 4. run MCMC on the transformed coarse posterior `π(r_c | d)`,
//! 5. prolong each coarse sample to one or more fine-scale samples.
//!
//! The driving application is an elliptic pressure equation discretized with
//! the multiscale finite element method, whose elemental integrals define the
//! coarse parameters, but the transport/MCMC machinery is model-agnostic.

pub mod basis;
pub mod engine;
pub mod msfem;
pub mod prior;
pub mod sampler;
pub mod transport;

pub use basis::{MultiIndex, MultiIndexSet};
pub use transport::{BuildOptions, LinearConditionalMap, MapComponent, StationaryCoarseMap, TriangularMap};
