//! End-to-end comparison: segment, unwrap, encode and match two images.
//!
//! Stage failures on usable inputs (no boundary, degenerate geometry,
//! out-of-frame unwrap, insufficient mask overlap) never surface as errors:
//! they mark the comparison as a failure to match (FTM).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::Bitmap;
use crate::encoding::{encode, EncoderConfig, EncoderId, EncodingError, GaborBankConfig, KernelBank, LogGaborConfig};
use crate::geometry::Segmentation;
use crate::image::IrisImage;
use crate::matching::{fractional_hamming_with, MatchError, MatchParams, MatchResult};
use crate::metadata::{Gender, SampleMetadata};
use crate::normalization::{rubber_sheet, NormalizationError, PolarIris, DEFAULT_COLS, DEFAULT_ROWS};
use crate::segmentation::{segment, HoughConfig, SegmentationError};
use crate::template::IrisTemplate;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub hough: HoughConfig,
    pub polar_rows: usize,
    pub polar_cols: usize,
    pub gabor: GaborBankConfig,
    /// `None` selects the default for the configured column count.
    pub loggabor: Option<LogGaborConfig>,
    pub bif: KernelBank,
    pub matching: MatchParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hough: HoughConfig::default(),
            polar_rows: DEFAULT_ROWS,
            polar_cols: DEFAULT_COLS,
            gabor: GaborBankConfig::default(),
            loggabor: None,
            bif: KernelBank::fallback(),
            matching: MatchParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.hough
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.matching.overlap_floor) {
            return Err(PipelineError::Config(format!(
                "overlap_floor {} outside [0, 1]",
                self.matching.overlap_floor
            )));
        }
        Ok(())
    }

    pub fn encoder(&self, id: EncoderId) -> EncoderConfig {
        match id {
            EncoderId::Gabor2d => EncoderConfig::Gabor2d(self.gabor.clone()),
            EncoderId::LogGabor1d => EncoderConfig::LogGabor1d(
                self.loggabor
                    .clone()
                    .unwrap_or_else(|| LogGaborConfig::for_cols(self.polar_cols)),
            ),
            EncoderId::Bif => EncoderConfig::Bif(self.bif.clone()),
        }
    }
}

/// Why a sample or pair could not be matched.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum StageFailure {
    #[error("segmentation: {0}")]
    Segmentation(#[from] SegmentationError),
    #[error("normalization: {0}")]
    Normalization(#[from] NormalizationError),
    #[error("encoding: {0}")]
    Encoding(#[from] EncodingError),
    #[error("matching: {0}")]
    Matching(#[from] MatchError),
}

/// An image with its metadata and optional externally supplied geometry.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: IrisImage,
    pub metadata: SampleMetadata,
    /// Occlusion mask to attach to the found (or supplied) segmentation.
    pub occlusion_mask: Option<Bitmap>,
    /// Skips boundary finding when present.
    pub segmentation: Option<Segmentation>,
}

impl Sample {
    /// Sample with placeholder metadata: its own subject, unknown demographics.
    pub fn new(image: IrisImage) -> Self {
        let metadata = SampleMetadata::placeholder(&image.id);
        Self {
            image,
            metadata,
            occlusion_mask: None,
            segmentation: None,
        }
    }

    pub fn with_metadata(image: IrisImage, metadata: SampleMetadata) -> Self {
        Self {
            metadata,
            ..Self::new(image)
        }
    }

    pub fn with_mask(mut self, mask: Bitmap) -> Self {
        self.occlusion_mask = Some(mask);
        self
    }
}

pub fn segment_sample(sample: &Sample, cfg: &PipelineConfig) -> Result<Segmentation, StageFailure> {
    let mut seg = match &sample.segmentation {
        Some(s) => s.clone(),
        None => segment(&sample.image, &cfg.hough)?,
    };
    if let Some(mask) = &sample.occlusion_mask {
        seg.occlusion_mask = Some(mask.clone());
    }
    Ok(seg)
}

pub fn normalize_sample(sample: &Sample, cfg: &PipelineConfig) -> Result<(Segmentation, PolarIris), StageFailure> {
    let seg = segment_sample(sample, cfg)?;
    let polar = rubber_sheet(&sample.image, &seg, cfg.polar_rows, cfg.polar_cols)?;
    Ok((seg, polar))
}

pub fn extract_template(
    sample: &Sample,
    cfg: &PipelineConfig,
    encoder: EncoderId,
) -> Result<IrisTemplate, StageFailure> {
    let (_, polar) = normalize_sample(sample, cfg)?;
    Ok(encode(&polar, &cfg.encoder(encoder))?)
}

/// Templates for several encoders, sharing segmentation and unwrapping.
pub fn extract_templates(
    sample: &Sample,
    cfg: &PipelineConfig,
    encoders: &[EncoderId],
) -> Vec<Result<IrisTemplate, StageFailure>> {
    match normalize_sample(sample, cfg) {
        Ok((_, polar)) => encoders
            .iter()
            .map(|&id| encode(&polar, &cfg.encoder(id)).map_err(StageFailure::from))
            .collect(),
        Err(e) => encoders.iter().map(|_| Err(e.clone())).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Genuine,
    Impostor,
}

impl PairLabel {
    pub fn of(a: &SampleMetadata, b: &SampleMetadata) -> Self {
        if a.same_class(b) {
            PairLabel::Genuine
        } else {
            PairLabel::Impostor
        }
    }
}

impl std::fmt::Display for PairLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairLabel::Genuine => "genuine",
            PairLabel::Impostor => "impostor",
        })
    }
}

/// One probe/gallery comparison under one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub probe_id: String,
    pub gallery_id: String,
    pub encoder: EncoderId,
    pub label: PairLabel,
    /// Dissimilarity in [0, 1]; absent on FTM.
    pub score: Option<f64>,
    /// Template columns; absent on FTM.
    pub best_shift: Option<i64>,
    pub ftm: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ftm_reason: Option<String>,
    pub pmi_max_hours: f64,
    pub probe_gender: Gender,
    pub gallery_gender: Gender,
    pub probe_age: u32,
    pub gallery_age: u32,
}

impl ComparisonRecord {
    pub fn from_outcome(
        probe: &SampleMetadata,
        gallery: &SampleMetadata,
        encoder: EncoderId,
        outcome: Result<MatchResult, StageFailure>,
    ) -> Self {
        let (score, best_shift, ftm_reason) = match outcome {
            Ok(m) => (Some(m.score), Some(m.best_shift), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        Self {
            probe_id: probe.sample_id.clone(),
            gallery_id: gallery.sample_id.clone(),
            encoder,
            label: PairLabel::of(probe, gallery),
            score,
            best_shift,
            ftm: ftm_reason.is_some(),
            ftm_reason,
            pmi_max_hours: probe.pmi_hours.max(gallery.pmi_hours),
            probe_gender: probe.gender,
            gallery_gender: gallery.gender,
            probe_age: probe.age_years,
            gallery_age: gallery.age_years,
        }
    }
}

/// Matches two already extracted templates (or their stage failures).
pub fn compare_templates(
    probe: &SampleMetadata,
    gallery: &SampleMetadata,
    encoder: EncoderId,
    a: &Result<IrisTemplate, StageFailure>,
    b: &Result<IrisTemplate, StageFailure>,
    params: &MatchParams,
) -> ComparisonRecord {
    let outcome = match (a, b) {
        (Ok(ta), Ok(tb)) => fractional_hamming_with(ta, tb, params).map_err(StageFailure::from),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    ComparisonRecord::from_outcome(probe, gallery, encoder, outcome)
}

/// Full pipeline on two images for one encoder.
pub fn match_images(a: &Sample, b: &Sample, cfg: &PipelineConfig, encoder: EncoderId) -> ComparisonRecord {
    let ta = extract_template(a, cfg, encoder);
    let tb = extract_template(b, cfg, encoder);
    compare_templates(&a.metadata, &b.metadata, encoder, &ta, &tb, &cfg.matching)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{render, CaptureParams, SyntheticIdentity};

    #[test]
    fn rotated_capture_matches() {
        let cfg = PipelineConfig::default();
        let id = SyntheticIdentity::new(21);
        let a = render(&id, &CaptureParams::default(), "a");
        let rot = 2.0f64.to_radians();
        let b = render(
            &id,
            &CaptureParams {
                rotation: rot,
                center: (326.0, 236.0),
                ..Default::default()
            },
            "b",
        );
        let rec = match_images(
            &Sample::new(a.image),
            &Sample::new(b.image),
            &cfg,
            EncoderId::LogGabor1d,
        );
        assert!(!rec.ftm, "{:?}", rec.ftm_reason);
        assert!(rec.score.unwrap() < 0.2, "{:?}", rec.score);
        let expected = (2.0 / 360.0 * cfg.polar_cols as f64).round() as i64;
        assert!((rec.best_shift.unwrap() - expected).abs() <= 1, "{:?}", rec.best_shift);
    }

    #[test]
    fn blank_probe_is_ftm() {
        let cfg = PipelineConfig::default();
        let blank = IrisImage::filled("blank", 640, 480, 0).unwrap();
        let eye = render(&SyntheticIdentity::new(2), &CaptureParams::default(), "eye");
        for enc in EncoderId::ALL {
            let rec = match_images(&Sample::new(blank.clone()), &Sample::new(eye.image.clone()), &cfg, enc);
            assert!(rec.ftm);
            assert!(rec.score.is_none());
        }
    }

    #[test]
    fn different_identities_near_half() {
        let cfg = PipelineConfig::default();
        let a = render(&SyntheticIdentity::new(100), &CaptureParams::default(), "a");
        let b = render(&SyntheticIdentity::new(200), &CaptureParams::default(), "b");
        for enc in EncoderId::ALL {
            let rec = match_images(&Sample::new(a.image.clone()), &Sample::new(b.image.clone()), &cfg, enc);
            let s = rec.score.unwrap();
            assert!((0.4..=0.6).contains(&s), "{enc}: {s}");
        }
    }
}
