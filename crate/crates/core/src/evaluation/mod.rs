//! Pair generation, verification metrics, PMI slicing and PAD metrics.

mod metrics;
mod pad;
mod scores;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::EncoderId;
use crate::metadata::SampleMetadata;
use crate::pipeline::{compare_templates, extract_templates, ComparisonRecord, PairLabel, PipelineConfig, Sample};

pub use metrics::{density, dprime, histogram, roc_metrics, trapezoid_auc, Histogram, Roc, RocPoint, HISTOGRAM_BINS};
pub use pad::{pad_metrics, PadLevel, PadSummary, DEFAULT_APCER_LEVELS};
pub use scores::{
    load_scores_csv, read_scores_csv, save_scores_csv, write_scores_csv, ScoreCsvError, ScoreRow, SCORE_HEADER,
};

/// Canonical upper PMI bounds (hours) for slicing.
pub const PMI_BOUNDS: [f64; 4] = [24.0, 72.0, 240.0, f64::INFINITY];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("score set is empty")]
    EmptyScores,
    #[error("both score sets have zero variance")]
    DegenerateVariance,
    #[error("APCER level {0} outside [0, 1]")]
    BadLevel(f64),
}

/// Index pair into the metadata list, ordered so that
/// `meta[probe].sample_id < meta[gallery].sample_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub probe: usize,
    pub gallery: usize,
    pub label: PairLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pub genuine: Vec<Pair>,
    pub impostor: Vec<Pair>,
}

impl PairSet {
    pub fn all(&self) -> impl Iterator<Item = &Pair> {
        self.genuine.iter().chain(&self.impostor)
    }

    pub fn len(&self) -> usize {
        self.genuine.len() + self.impostor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All unordered pairs; genuine when `(subject_id, eye)` match.
pub fn generate_pairs(meta: &[SampleMetadata]) -> PairSet {
    let mut set = PairSet::default();
    for a in 0..meta.len() {
        for b in a + 1..meta.len() {
            let (probe, gallery) = if meta[a].sample_id <= meta[b].sample_id {
                (a, b)
            } else {
                (b, a)
            };
            let label = PairLabel::of(&meta[a], &meta[b]);
            let pair = Pair { probe, gallery, label };
            match label {
                PairLabel::Genuine => set.genuine.push(pair),
                PairLabel::Impostor => set.impostor.push(pair),
            }
        }
    }
    let key = |p: &Pair| (meta[p.probe].sample_id.clone(), meta[p.gallery].sample_id.clone());
    set.genuine.sort_by_key(key);
    set.impostor.sort_by_key(key);
    set
}

pub fn ftm_rate(records: &[ComparisonRecord]) -> Option<f64> {
    (!records.is_empty()).then(|| records.iter().filter(|r| r.ftm).count() as f64 / records.len() as f64)
}

/// Records whose `pmi_max_hours` is at most `max_pmi_hours`.
pub fn pmi_slice(records: &[ComparisonRecord], max_pmi_hours: f64) -> Vec<ComparisonRecord> {
    records
        .iter()
        .filter(|r| r.pmi_max_hours <= max_pmi_hours)
        .cloned()
        .collect()
}

/// Genuine and impostor scores of the matched (non-FTM) records.
pub fn split_scores(records: &[ComparisonRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Vec::new();
    let mut i = Vec::new();
    for r in records {
        if let Some(s) = r.score {
            match r.label {
                PairLabel::Genuine => g.push(s),
                PairLabel::Impostor => i.push(s),
            }
        }
    }
    (g, i)
}

/// Metrics that cannot be computed (empty or degenerate score sets) are
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub d_prime: Option<f64>,
    pub eer: Option<f64>,
    pub auc: Option<f64>,
    pub ftm_rate: Option<f64>,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub n_ftm: usize,
    pub histogram: Histogram,
}

pub fn summarize(records: &[ComparisonRecord]) -> EvaluationSummary {
    let (g, i) = split_scores(records);
    let roc = roc_metrics(&g, &i, true).ok();
    EvaluationSummary {
        d_prime: dprime(&g, &i).ok(),
        eer: roc.as_ref().map(|r| r.eer),
        auc: roc.as_ref().map(|r| r.auc),
        ftm_rate: ftm_rate(records),
        n_genuine: g.len(),
        n_impostor: i.len(),
        n_ftm: records.iter().filter(|r| r.ftm).count(),
        histogram: histogram(&g, &i),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    /// `0-24h`, `0-72h`, `0-240h` or `all`.
    pub slice: String,
    /// Absent for the unbounded slice.
    pub max_pmi_hours: Option<f64>,
    #[serde(flatten)]
    pub summary: EvaluationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    pub encoder: EncoderId,
    pub slices: Vec<SliceSummary>,
}

pub fn slice_label(bound: f64) -> String {
    if bound.is_finite() {
        format!("0-{bound}h")
    } else {
        "all".to_string()
    }
}

/// Summaries over the canonical PMI slices.
pub fn report(encoder: EncoderId, records: &[ComparisonRecord]) -> EncoderReport {
    let slices = PMI_BOUNDS
        .iter()
        .map(|&b| SliceSummary {
            slice: slice_label(b),
            max_pmi_hours: b.is_finite().then_some(b),
            summary: summarize(&pmi_slice(records, b)),
        })
        .collect();
    EncoderReport { encoder, slices }
}

/// Runs every pair of `samples` through each encoder. Templates are
/// extracted once per sample; output order is deterministic regardless of
/// the rayon pool size.
pub fn evaluate_samples(
    samples: &[Sample],
    cfg: &PipelineConfig,
    encoders: &[EncoderId],
) -> Vec<(EncoderId, Vec<ComparisonRecord>)> {
    let meta: Vec<SampleMetadata> = samples.iter().map(|s| s.metadata.clone()).collect();
    let pairs = generate_pairs(&meta);
    let templates: Vec<_> = samples
        .par_iter()
        .map(|s| extract_templates(s, cfg, encoders))
        .collect();
    encoders
        .iter()
        .enumerate()
        .map(|(e, &enc)| {
            let records = pairs
                .all()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|p| {
                    compare_templates(
                        &meta[p.probe],
                        &meta[p.gallery],
                        enc,
                        &templates[p.probe][e],
                        &templates[p.gallery][e],
                        &cfg.matching,
                    )
                })
                .collect();
            (enc, records)
        })
        .collect()
}
