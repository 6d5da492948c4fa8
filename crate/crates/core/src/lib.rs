//! Core building blocks for mark-based visual prompting.
//!
//! The pipeline is: partition an image into regions ([`ingest`]), pick a
//! location for every region's mark ([`alloc`]), draw the marks
//! ([`render`]), phrase the question ([`prompt`]), bind the model's answer
//! back onto regions ([`parse`]) and score it ([`metrics`]).

pub mod alloc;
pub mod ingest;
pub mod mask;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod render;
pub mod task;

pub use mask::{BBox, BinaryMask, MaskError, Region, RegionSet};
pub use task::TaskKind;
