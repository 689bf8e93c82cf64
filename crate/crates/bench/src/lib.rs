//! Shared inputs for the benchmarks.

use pmiris_core::pipeline::normalize_sample;
use pmiris_core::synthetic::{render, CaptureParams, SyntheticIdentity};
use pmiris_core::{PipelineConfig, PolarIris, Sample};

/// A clean synthetic capture.
pub fn eye(seed: u64) -> Sample {
    Sample::new(
        render(
            &SyntheticIdentity::new(seed),
            &CaptureParams::default(),
            format!("eye{seed}"),
        )
        .image,
    )
}

/// Normalized iris of [`eye`].
pub fn polar(seed: u64, cfg: &PipelineConfig) -> PolarIris {
    normalize_sample(&eye(seed), cfg).expect("synthetic eye segments").1
}
