//! Map-free, behavior-aware vehicle trajectory prediction.
//!
//! The pipeline predicts a target vehicle's future positions from the
//! recent trajectories of the target and its surrounding agents — no
//! maps, lane graphs, or raster context. Per-frame proximity graphs
//! yield six centrality measures per agent, reduced to behavior criteria
//! and encoded by a VRNN + GRU; relative positions run through a
//! two-layer LSTM; a gated adaptive graph convolution mixes the two over
//! the agent multigraph; low-rank linear attention produces the target's
//! contextual feature; and a residual decoder emits displacement steps.
//! Training is plain Adam over smooth-L1 via the `autodiff` tape.

pub mod behavior;
pub mod centrality;
pub mod error;
pub mod eval;
pub mod graph;
pub mod metrics;
pub mod rng;
pub mod scene;
pub mod scene_io;
pub mod synthetic;

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{MftrajError, Result};
