//! Artery/vein labeling of retinal vessel maps by likelihood score
//! propagation over a minimum spanning tree of vessel branches, with
//! arterio-venous ratio measurement and evaluation metrics.
//!
//! The pipeline takes per-pixel background/artery/vein probabilities,
//! skeletonizes the argmax vessel segmentation, cuts the skeleton into
//! branches, links branches into a weighted graph, and spreads each branch's
//! artery likelihood along the graph's minimum spanning tree before
//! relabeling.

pub mod avr;
pub mod components;
pub mod config;
pub mod distance;
pub mod error;
pub mod graph;
pub mod io;
pub mod lsp;
pub mod metrics;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod skeleton;

pub use error::{Error, Result};
pub use par::Parallelism;
pub use raster::{argmax_labels, BinaryImage, FovMask, Label, LabelMap, ProbabilityTriplet, Raster2D};
