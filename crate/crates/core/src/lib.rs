//! Evaluation engine for interpretable AI-generated image detection.
//!
//! The crate ingests polygon artifact annotations, rasterizes them, and
//! scores three kinds of model output against them:
//!
//! * authenticity judgments (real vs. fake) with balanced accuracy, P, R, F1;
//! * pixel-level artifact localization, per category and category-agnostic;
//! * instance-level weak localization (P@t, R@t, F1@t) for masks, boxes and points.
//!
//! It also carries the attention-alignment numerics used to regularize ViT
//! detectors toward annotated artifact regions: attention rollout, the
//! patch-level artifact heatmap, the weighted alignment loss and its gradient.

pub mod aj;
pub mod annotation;
pub mod attention;
pub mod error;
pub mod fidelity;
pub mod fixture;
pub mod formats;
pub mod pad;
pub mod parallel;
pub mod predictions;
pub mod raster;
pub mod report;

pub use annotation::{
    filter_by_confidence, merge_rounds, parse_manifest, AnnotationInstance, ArtifactCategory,
    ArtifactLevel, ImageRecord, Manifest, Polygon, Role,
};
pub use error::{Error, Result};
pub use raster::{BinaryMask, Region, RleMask};
