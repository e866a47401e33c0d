//! Neurally-guided accumulative procedural models.
//!
//! Accumulative 2D procedural programs (a linear chain and a vine-growth
//! model) make random choices through a traced runtime. Each choice site can
//! be steered by a small per-site neural network whose inputs are the local
//! call arguments and multi-resolution pixel windows around the turtle's
//! current position. Networks are trained by maximum likelihood on traces
//! produced by unguided sequential Monte Carlo, then used as the importance
//! distribution for SMC so that constrained outputs need far fewer particles.
//!
//! Module map:
//!
//! - [`trace`], [`exec`], [`rng`]: choice records, trace files, the execution
//!   context programs sample through, and counter-based random streams.
//! - [`models`]: the chain and vine programs.
//! - [`raster`]: canvases, rasterization, Sobel masks, box pyramids, windows.
//! - [`constraints`]: shape-matching and circuit likelihoods.
//! - [`guide`]: features, MLPs, mixture heads, analytic gradients, checkpoints.
//! - [`smc`]: sequential Monte Carlo over program executions.
//! - [`train`]: dataset generation, the likelihood objective, Adam training.
//! - [`corpus`]: target masks, annotations, mirroring, synthetic scribbles.
//! - [`bench`] and [`cli`]: reports, bootstrap intervals and the `ngpm` tool.

pub mod bench;
pub mod cli;
pub mod constraints;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod geom;
pub mod guide;
pub mod models;
pub mod raster;
pub mod rng;
pub mod smc;
pub mod trace;
pub mod train;

pub use error::{Error, Result};
