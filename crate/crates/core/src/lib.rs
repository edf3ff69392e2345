//! Pseudo-labels for class-agnostic mobile-object detection.
//!
//! Moving-object masks come from motion segmentation and depth; a detector
//! trained on them is then refined in rounds (static objects, then small
//! objects) using rescaling, mask aggregation and class-agnostic metrics.

pub mod aggregate;
pub mod cli;
pub mod initlabel;
pub mod io;
pub mod label;
pub mod mask;
pub mod metrics;
pub mod raster;
pub mod rescale;
pub mod rounds;
pub mod synthgen;

pub use label::{InstanceLabel, LabelSet};
pub use mask::{BinaryMask, Rle};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/masks.md")]
    mod masks {}
    #[doc = include_str!("../../../book/src/initial-labels.md")]
    mod initial_labels {}
    #[doc = include_str!("../../../book/src/rescaling.md")]
    mod rescaling {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
