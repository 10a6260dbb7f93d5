//! Fingerprint matching with minutia cylinder codes and STFT texture
//! descriptors.
//!
//! The pipeline runs image -> [`enhancement::enhance_pipeline`] (segmentation,
//! STFT analysis, Gabor smoothing, SMQT) -> [`descriptor::build_template`] ->
//! [`matcher::global_score`], with [`evaluation`] providing the verification
//! protocol and error-rate metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod descriptor;
pub mod enhancement;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod matcher;
pub mod stft;
pub mod synthetic;
pub mod template;

pub use config::Config;
pub use descriptor::{build_cylinder, build_template, CellIndex};
pub use enhancement::{enhance_pipeline, EnhancementParams};
pub use error::{Error, FormatError, Result};
pub use evaluation::{compute_eer, compute_fmr1000, run_protocol, DatasetLayout, EvalReport};
pub use image::{FloatMap, GrayImage, Mask};
pub use matcher::{global_score, local_similarity_matrix, MatchResult, RelaxParams, ScoreSource, SimilarityMatrix};
pub use stft::{stft_analyze, StftParams, TextureMaps};
pub use template::{
    deserialize_template, parse_minutiae, serialize_template, Cylinder, CylinderParams, FeatureKind, Minutia, Template,
};
