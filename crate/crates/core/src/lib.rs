//! Counting grids: bags of words modeled as draws from window-averaged word
//! distributions on a D-dimensional torus.
//!
//! A grid holds a word distribution at every cell. A document picks a window
//! anchor, averages the distributions inside the window, and samples its
//! words from that histogram. [`em::fit`] learns the grid and every
//! document's posterior over anchors; [`embed`] spreads labels or real
//! targets over the learned grid for nearest-region prediction.

pub mod bag;
pub mod em;
pub mod embed;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod manifest;
pub mod render;
pub mod synth;
pub mod window;

pub use bag::{Bag, Target};
pub use em::{fit, fit_from, init_grid, FitResult, PosteriorMap, TrainConfig};
pub use embed::{
    embed, loo_evaluate, predict, LabelEmbedding, LabelKind, MetricReport, Prediction, Targets,
};
pub use error::{Error, Result};
pub use geometry::{GridField, GridGeometry};
pub use grid::{bag_log_likelihood, compute_histograms, CountingGrid, Histograms, PROB_FLOOR};
pub use window::{window_sum, Direction};
