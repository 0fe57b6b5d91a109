//! Graph prolongation convolutional networks.
//!
//! Building blocks, bottom-up:
//!
//! * [`linalg`], [`autodiff`], [`optim`]: dense/sparse kernels, a Jacobi
//!   eigensolver, a reverse-mode tape and ADAM.
//! * [`graph`]: tube and grid graph families and their Laplacians.
//! * [`gdd`]: the linear graph diffusion distance and the optimised
//!   prolongation matrices it produces.
//! * [`gcn`] and [`ensemble`]: single-scale GCNs and the multiscale
//!   ensembles built from them (GPCN, A-GPCN, N-GCN, DiffPool).
//! * [`sim`]: a harmonic mass-spring microtubule simulator used to generate
//!   per-particle energy datasets.
//! * [`train`]: losses, the FLOPs cost model, and joint / γ-cycle /
//!   coarse-to-fine training schedules.

pub mod activation;
pub mod autodiff;
pub mod checkpoint;
pub mod ensemble;
pub mod error;
pub mod gcn;
pub mod gdd;
pub mod graph;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod sim;
pub mod train;

pub use activation::Activation;
pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use graph::Graph;
pub use linalg::{eig_sym, EigenSystem, Matrix, StructureMatrix};
