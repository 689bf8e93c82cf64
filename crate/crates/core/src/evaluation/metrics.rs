use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::statistics::mid_ranks;

pub const HISTOGRAM_BINS: usize = 100;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

/// Decidability `|μ_i − μ_g| / sqrt((σ_g² + σ_i²) / 2)` with sample variances.
pub fn dprime(genuine: &[f64], impostor: &[f64]) -> Result<f64, EvalError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let (mg, vg) = mean_var(genuine);
    let (mi, vi) = mean_var(impostor);
    let pooled = (vg + vi) / 2.0;
    if pooled <= 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    Ok((mi - mg).abs() / pooled.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    /// False match rate: impostors accepted.
    pub fmr: f64,
    /// False non-match rate: genuines rejected.
    pub fnmr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub eer: f64,
    pub auc: f64,
    /// Starts at the reject-all operating point (`threshold = -inf`).
    pub points: Vec<RocPoint>,
}

/// ROC sweep over the pooled unique scores. With `lower_is_genuine` a pair
/// is accepted when its score is at most the threshold.
pub fn roc_metrics(genuine: &[f64], impostor: &[f64], lower_is_genuine: bool) -> Result<Roc, EvalError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let flip = |v: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|&x| if lower_is_genuine { x } else { -x }).collect();
        out.sort_by(f64::total_cmp);
        out
    };
    let (g, i) = (flip(genuine), flip(impostor));
    let (ng, ni) = (g.len() as f64, i.len() as f64);

    let mut points = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        fmr: 0.0,
        fnmr: 1.0,
    }];
    let (mut gi, mut ii) = (0usize, 0usize);
    while gi < g.len() || ii < i.len() {
        let t = match (g.get(gi), i.get(ii)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while gi < g.len() && g[gi] <= t {
            gi += 1;
        }
        while ii < i.len() && i[ii] <= t {
            ii += 1;
        }
        points.push(RocPoint {
            threshold: if lower_is_genuine { t } else { -t },
            fmr: ii as f64 / ni,
            fnmr: 1.0 - gi as f64 / ng,
        });
    }

    let mut eer = 0.0;
    for w in points.windows(2) {
        let (d0, d1) = (w[0].fmr - w[0].fnmr, w[1].fmr - w[1].fnmr);
        if d0 < 0.0 && d1 >= 0.0 {
            let lambda = if d1 == 0.0 { 1.0 } else { -d0 / (d1 - d0) };
            eer = w[0].fmr + lambda * (w[1].fmr - w[0].fmr);
            break;
        }
    }

    Ok(Roc {
        eer,
        auc: rank_auc(&g, &i),
        points,
    })
}

/// P(genuine score < impostor score) + ½ P(tie), via mid-ranks.
fn rank_auc(g: &[f64], i: &[f64]) -> f64 {
    let pooled: Vec<f64> = g.iter().chain(i).copied().collect();
    let (ranks, _) = mid_ranks(&pooled);
    let ni = i.len() as f64;
    let r_imp: f64 = ranks[g.len()..].iter().sum();
    (r_imp - ni * (ni + 1.0) / 2.0) / (g.len() as f64 * ni)
}

/// Trapezoidal area under (FMR, 1 − FNMR).
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fmr - w[0].fmr) * ((1.0 - w[0].fnmr) + (1.0 - w[1].fnmr)) / 2.0)
        .sum()
}

/// Density histogram over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

pub fn density(scores: &[f64], bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; bins];
    if scores.is_empty() {
        return out;
    }
    for &s in scores {
        let b = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        out[b] += 1.0;
    }
    let scale = bins as f64 / scores.len() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

pub fn histogram(genuine: &[f64], impostor: &[f64]) -> Histogram {
    Histogram {
        bins: HISTOGRAM_BINS,
        genuine: density(genuine, HISTOGRAM_BINS),
        impostor: density(impostor, HISTOGRAM_BINS),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn dprime_examples() {
        let s = [0.1, 0.4, 0.3, 0.35];
        assert_eq!(dprime(&s, &s).unwrap(), 0.0);
        assert_eq!(dprime(&[0.2; 5], &[0.6; 7]), Err(EvalError::DegenerateVariance));
        let g = [1.0, 2.0, 3.0];
        let i = [4.0, 5.0, 6.0];
        assert!((dprime(&g, &i).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn roc_extremes() {
        let r = roc_metrics(&[0.1, 0.2, 0.15], &[0.5, 0.6], true).unwrap();
        assert_eq!(r.eer, 0.0);
        assert_eq!(r.auc, 1.0);
        let s = [0.3, 0.4, 0.4, 0.5];
        let r = roc_metrics(&s, &s, true).unwrap();
        assert_eq!(r.auc, 0.5);
        let r = roc_metrics(&[0.9, 0.8], &[0.1, 0.2], false).unwrap();
        assert_eq!((r.eer, r.auc), (0.0, 1.0));
    }

    #[test]
    fn eer_interpolates() {
        // g = {1, 3}, i = {2, 4}: at t=2 FMR 0.5 FNMR 0.5
        let r = roc_metrics(&[1.0, 3.0], &[2.0, 4.0], true).unwrap();
        assert!((r.eer - 0.5).abs() < 1e-12);
        assert!((r.auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_rank_equals_trapezoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let ng = rng.random_range(1..40);
            let ni = rng.random_range(1..40);
            // coarse values force ties
            let g: Vec<f64> = (0..ng).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
            let i: Vec<f64> = (0..ni).map(|_| (rng.random_range(5..25) as f64) / 20.0).collect();
            let r = roc_metrics(&g, &i, true).unwrap();
            assert!((r.auc - trapezoid_auc(&r.points)).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..0.6)).collect();
        let i: Vec<f64> = (0..300).map(|_| rng.random_range(0.3..1.0)).collect();
        let a = roc_metrics(&g, &i, true).unwrap();
        let f = |v: &[f64]| v.iter().map(|x: &f64| x.powi(3) * 5.0 + 1.0).collect::<Vec<_>>();
        let b = roc_metrics(&f(&g), &f(&i), true).unwrap();
        assert!((a.eer - b.eer).abs() < 1e-12);
        assert_eq!(a.auc, b.auc);
        let aff = |v: &[f64]| v.iter().map(|x: &f64| 2.0 * x - 0.3).collect::<Vec<_>>();
        assert!((dprime(&g, &i).unwrap() - dprime(&aff(&g), &aff(&i)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = Normal::new(0.0, 1.0).unwrap();
        let g: Vec<f64> = (0..100_000).map(|_| n.sample(&mut rng)).collect();
        let i: Vec<f64> = (0..100_000).map(|_| n.sample(&mut rng) + 2.0).collect();
        assert!((dprime(&g, &i).unwrap() - 2.0).abs() < 0.05);
        let r = roc_metrics(&g, &i, true).unwrap();
        assert!((r.eer - 0.1587).abs() < 0.01, "{}", r.eer);
        assert!((r.auc - 0.9214).abs() < 0.005, "{}", r.auc);
    }

    #[test]
    fn histogram_density() {
        let h = histogram(&[0.0, 0.5, 1.0, 0.999], &[]);
        assert_eq!(h.genuine.len(), 100);
        assert!((h.genuine.iter().sum::<f64>() / 100.0 - 1.0).abs() < 1e-12);
        assert_eq!(h.genuine[99], 50.0);
        assert!(h.impostor.iter().all(|&v| v == 0.0));
    }
}
