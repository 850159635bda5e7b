//! Multiscale topology optimization driven by an implicit neural density field.
//!
//! A single coordinate network maps `(x, y, u, w)` — global cell position and
//! local position inside the cell — to a material density in `(0, 1)`. One set
//! of trainable sine frequency kernels therefore represents every unit cell of
//! a two-scale structure at once. Training couples the network to finite
//! element analysis: each epoch renders all cells, homogenizes them into
//! effective stiffness tensors, solves the macroscale problem, and
//! backpropagates the structural objective through both scales.
//!
//! Module map:
//! - [`field`]: coordinate batches, the sine-kernel network, forward/backward.
//! - [`fem`]: plane-stress Q4 elements, skyline solver, macroscale problems.
//! - [`homog`]: energy-based periodic homogenization and its sensitivities.
//! - [`loss`]: structural objectives, volume/boundary penalties, combination.
//! - [`train`]: Adam, mini-epoch subcell scheduling, the training loop.
//! - [`post`]: rendering, island/dangling-feature removal, connectivity.
//! - [`checkpoint`] / [`pgm`] / [`config`]: binary and text codecs.
//! - [`preset`] / [`runner`] / [`metrics`]: built-in problems and run
//!   orchestration for the command line.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod field;
pub mod fem;
pub mod homog;
pub mod loss;
pub mod metrics;
pub mod pgm;
pub mod post;
pub mod preset;
pub mod runner;
pub mod train;

pub use error::{Error, Result};
