//! High-resolution urban–rural land cover mapping toolkit.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`raster`]: tile data model, the `HURT` tile file format, the 10 km
//!   sampling grid, nearest-neighbour resampling and a deterministic
//!   synthetic scene generator.
//! - [`preprocess`]: temporal median compositing, quality masking, ESRI
//!   class remapping and Built-Area → urban/rural fusion against GHS-SMOD.
//! - [`model`]: class weighting, weighted cross-entropy with analytic
//!   gradients, neighbourhood features and a softmax-regression baseline.
//! - [`spatialcv`]: country-wise cyclic fold assignment and fold rotations.
//! - [`stitch`]: sliding-window inference keeping only window centre crops.
//! - [`metrics`]: confusion matrices, accuracy/recall/precision/IoU/F1,
//!   Cohen's kappa and per-country reporting.
//! - [`dhs`]: evaluation against privacy-displaced survey clusters via
//!   posterior location imputation and majority voting.
//! - [`pipeline`]: config-driven end-to-end runs with a digest manifest.

pub mod dhs;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod spatialcv;
pub mod stitch;
mod util;

pub use error::{Error, Result};
