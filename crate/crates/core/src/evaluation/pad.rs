//! Presentation attack detection score metrics.

use serde::{Deserialize, Serialize};

use super::metrics::{histogram, roc_metrics, Histogram};
use super::EvalError;

/// APCER levels always reported.
pub const DEFAULT_APCER_LEVELS: [f64; 2] = [0.0001, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadLevel {
    pub apcer: f64,
    /// Bona fide presentations classified as bona fide at the threshold.
    pub one_minus_bpcer: f64,
    /// Scores strictly below it are classified bona fide; `None` means
    /// every presentation is.
    pub threshold: Option<f64>,
    /// APCER actually achieved at the threshold.
    pub achieved_apcer: f64,
    /// The level is finer than one attack sample (`α · n_attack < 1`).
    pub resolution_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadSummary {
    pub auc: f64,
    pub levels: Vec<PadLevel>,
    pub histogram: Histogram,
    pub n_bona_fide: usize,
    pub n_attack: usize,
}

/// Threshold: the largest `t` with `fraction(attack < t) <= α`.
pub fn pad_metrics(bona_fide: &[f64], attack: &[f64], extra_levels: &[f64]) -> Result<PadSummary, EvalError> {
    if bona_fide.is_empty() || attack.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    if let Some(&bad) = extra_levels.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(EvalError::BadLevel(bad));
    }
    let mut levels: Vec<f64> = DEFAULT_APCER_LEVELS.iter().chain(extra_levels).copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    let mut sorted_attack = attack.to_vec();
    sorted_attack.sort_by(f64::total_cmp);
    let na = attack.len() as f64;
    let below = |v: &[f64], t: f64| v.iter().filter(|&&x| x < t).count() as f64;

    let levels = levels
        .into_iter()
        .map(|alpha| {
            let k = (alpha * na + 1e-9).floor() as usize;
            let threshold = sorted_attack.get(k).copied();
            let t = threshold.unwrap_or(f64::INFINITY);
            PadLevel {
                apcer: alpha,
                one_minus_bpcer: below(bona_fide, t) / bona_fide.len() as f64,
                threshold,
                achieved_apcer: below(attack, t) / na,
                resolution_limited: alpha * na < 1.0,
            }
        })
        .collect();

    Ok(PadSummary {
        auc: roc_metrics(bona_fide, attack, true)?.auc,
        levels,
        histogram: histogram(bona_fide, attack),
        n_bona_fide: bona_fide.len(),
        n_attack: attack.len(),
    })
}
