//! Patch attribution for Vision Transformers by activation patching.
//!
//! The engine in [`vit`] runs a small pre-norm ViT on the CPU and can mix
//! cached and live tokens within one pass. [`caap`] builds the three
//! attribution modes on top of it; [`metrics`] and [`analysis`] score the
//! resulting maps and the attention structure behind them.

pub mod analysis;
pub mod caap;
pub mod error;
pub mod image;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod tensor;
pub mod toy;
pub mod vit;

pub use caap::{
    AttributionMap, AttributionMode, AttributionRequest, BlankSpec, BlankStats, LayerRange,
    LayerSpec, SelectionOp,
};
pub use error::{Error, Result};
pub use image::Image;
pub use mask::SegMask;
pub use metrics::{MetricReport, PerturbationCurve};
pub use tensor::Tensor;
pub use vit::{ActivationCache, ModelBundle, TokenPinPlan, ViTConfig};
