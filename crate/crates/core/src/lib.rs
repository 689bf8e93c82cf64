//! Post-mortem iris recognition workbench.
//!
//! The crate covers the full forensic comparison chain: boundary finding,
//! rubber-sheet normalization, three iris-code encoders, rotation-compensated
//! fractional Hamming matching with similarity heatmaps, ISO/IEC 29794-6 style
//! quality metrics, score-set evaluation (d', EER, AUC, FTM, PAD error rates)
//! and the demographic statistics used to compare groups of subjects.
//!
//! Typical use goes through [`pipeline`]:
//!
//! ```no_run
//! use pmiris_core::{image::{load_image, SourceChannel}, pipeline::{PipelineConfig, Sample, match_images}, EncoderId};
//!
//! let cfg = PipelineConfig::default();
//! let a = Sample::new(load_image("a.pgm", SourceChannel::Nir)?);
//! let b = Sample::new(load_image("b.pgm", SourceChannel::Nir)?);
//! let record = match_images(&a, &b, &cfg, EncoderId::LogGabor1d);
//! println!("{:?}", record.score);
//! # Ok::<(), pmiris_core::image::ImageError>(())
//! ```

pub mod bitmap;
pub mod encoding;
pub mod evaluation;
pub mod gallery;
pub mod geometry;
pub mod image;
pub mod matching;
pub mod metadata;
pub mod normalization;
pub mod pipeline;
pub mod quality;
pub mod segmentation;
pub mod statistics;
pub mod synthetic;
pub mod template;

pub use bitmap::Bitmap;
pub use encoding::EncoderId;
pub use geometry::{Circle, Segmentation};
pub use image::{IrisImage, SourceChannel};
pub use matching::MatchResult;
pub use metadata::{Eye, Gender, SampleMetadata};
pub use normalization::PolarIris;
pub use pipeline::{match_images, ComparisonRecord, PairLabel, PipelineConfig, Sample};
pub use quality::QualityRecord;
pub use template::IrisTemplate;
