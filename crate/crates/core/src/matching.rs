//! Rotation-compensated fractional Hamming distance and similarity heatmaps.
//!
//! Shifts are in template columns. Comparing `a` with `b` at shift `s` pairs
//! column `c` of `a` with column `c + s` of `b`, so if `b` is `a` rotated by
//! `k` columns the best shift is `k`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::Bitmap;
use crate::image::encode_png_gray_alpha;
use crate::template::IrisTemplate;

pub const DEFAULT_MAX_SHIFT: usize = 16;
/// Minimum joint-mask share of the grid for a shift to be scored.
pub const DEFAULT_OVERLAP_FLOOR: f64 = 0.10;
/// Side of the box filter applied to heatmaps.
pub const HEATMAP_WINDOW: usize = 5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MatchError {
    #[error("templates are not comparable: {0}")]
    IncompatibleTemplates(String),
    #[error("joint mask covers at most {best_fraction:.3} of the grid (floor {floor})")]
    InsufficientOverlap { best_fraction: f64, floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub max_shift: usize,
    pub overlap_floor: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_shift: DEFAULT_MAX_SHIFT,
            overlap_floor: DEFAULT_OVERLAP_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScore {
    pub shift: i64,
    pub overlap_bits: usize,
    /// `None` when the joint mask is below the overlap floor.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub score: f64,
    pub best_shift: i64,
    pub overlap_bits: usize,
    /// Ordered from `-max_shift` to `+max_shift`.
    pub per_shift_scores: Vec<ShiftScore>,
}

pub fn check_compatible(a: &IrisTemplate, b: &IrisTemplate) -> Result<(), MatchError> {
    if a.encoder_id != b.encoder_id {
        return Err(MatchError::IncompatibleTemplates(format!(
            "encoder {} vs {}",
            a.encoder_id, b.encoder_id
        )));
    }
    if a.params_digest != b.params_digest {
        return Err(MatchError::IncompatibleTemplates("encoder parameters differ".into()));
    }
    if a.mask.dims() != b.mask.dims() || a.bitplanes.len() != b.bitplanes.len() {
        return Err(MatchError::IncompatibleTemplates(format!(
            "layout {}x{}x{} vs {}x{}x{}",
            a.bitplanes.len(),
            a.rows(),
            a.cols(),
            b.bitplanes.len(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Fractional Hamming distance with the default overlap floor.
pub fn fractional_hamming(a: &IrisTemplate, b: &IrisTemplate, max_shift: usize) -> Result<MatchResult, MatchError> {
    fractional_hamming_with(
        a,
        b,
        &MatchParams {
            max_shift,
            ..MatchParams::default()
        },
    )
}

/// Minimum over shifts `s` in `[-max_shift, max_shift]` of
/// `popcount((a XOR b_s) AND M_s) / (planes * popcount(M_s))` with
/// `M_s = mask_a AND mask_b_s`. Ties go to the smallest `|s|`, then to the
/// negative shift.
pub fn fractional_hamming_with(
    a: &IrisTemplate,
    b: &IrisTemplate,
    params: &MatchParams,
) -> Result<MatchResult, MatchError> {
    check_compatible(a, b)?;
    let (rows, cols) = a.mask.dims();
    let grid = (rows * cols) as f64;
    let planes = a.bitplanes.len();
    let max_shift = params.max_shift as i64;

    let mut rot_mask = Bitmap::new(rows, cols);
    let mut rot_plane = Bitmap::new(rows, cols);
    let mut joint = vec![0u64; a.mask.words().len()];
    let mut per_shift = Vec::with_capacity(2 * params.max_shift + 1);
    for s in -max_shift..=max_shift {
        b.mask.rotate_cols_into(s, &mut rot_mask);
        let mut overlap = 0usize;
        for ((j, &ma), &mb) in joint.iter_mut().zip(a.mask.words()).zip(rot_mask.words()) {
            *j = ma & mb;
            overlap += j.count_ones() as usize;
        }
        let score = if overlap == 0 || (overlap as f64) / grid < params.overlap_floor {
            None
        } else {
            let mut diff = 0usize;
            for (pa, pb) in a.bitplanes.iter().zip(&b.bitplanes) {
                pb.rotate_cols_into(s, &mut rot_plane);
                diff += pa
                    .words()
                    .iter()
                    .zip(rot_plane.words())
                    .zip(&joint)
                    .map(|((x, y), m)| ((x ^ y) & m).count_ones() as usize)
                    .sum::<usize>();
            }
            Some(diff as f64 / (planes * overlap) as f64)
        };
        per_shift.push(ShiftScore {
            shift: s,
            overlap_bits: overlap,
            score,
        });
    }

    let mut best: Option<&ShiftScore> = None;
    for ss in preference_order(max_shift).map(|s| &per_shift[(s + max_shift) as usize]) {
        if let Some(v) = ss.score {
            if best.is_none_or(|b| v < b.score.unwrap()) {
                best = Some(ss);
            }
        }
    }
    match best {
        Some(b) => Ok(MatchResult {
            score: b.score.unwrap(),
            best_shift: b.shift,
            overlap_bits: b.overlap_bits,
            per_shift_scores: per_shift.clone(),
        }),
        None => Err(MatchError::InsufficientOverlap {
            best_fraction: per_shift.iter().map(|s| s.overlap_bits).max().unwrap_or(0) as f64 / grid,
            floor: params.overlap_floor,
        }),
    }
}

/// 0, -1, 1, -2, 2, ...
fn preference_order(max_shift: i64) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=max_shift).flat_map(|m| [-m, m]))
}

/// Per-cell similarity on the joint mask at a fixed shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; `None` off the joint mask.
    pub values: Vec<Option<f64>>,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.cols + col]
    }

    pub fn mean(&self) -> Option<f64> {
        let present: Vec<f64> = self.values.iter().flatten().copied().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Gray + alpha PNG: value mapped to 0..=255, absent cells transparent.
    pub fn to_png(&self) -> Vec<u8> {
        let px: Vec<[u8; 2]> = self
            .values
            .iter()
            .map(|v| match v {
                Some(x) => [(x.clamp(0.0, 1.0) * 255.0).round() as u8, 255],
                None => [0, 0],
            })
            .collect();
        encode_png_gray_alpha(self.cols, self.rows, &px)
    }
}

/// Agreement fraction across bitplanes at every jointly valid cell,
/// averaged over the valid cells of a 5x5 window (columns wrap).
pub fn similarity_heatmap(a: &IrisTemplate, b: &IrisTemplate, shift: i64) -> Result<Heatmap, MatchError> {
    check_compatible(a, b)?;
    let (rows, cols) = a.mask.dims();
    let mask_b = b.mask.rotate_cols(shift);
    let planes_b: Vec<Bitmap> = b.bitplanes.iter().map(|p| p.rotate_cols(shift)).collect();
    let n = a.bitplanes.len() as f64;
    let mut raw = vec![None; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if a.mask.get(r, c) && mask_b.get(r, c) {
                let agree = a
                    .bitplanes
                    .iter()
                    .zip(&planes_b)
                    .filter(|(pa, pb)| pa.get(r, c) == pb.get(r, c))
                    .count();
                raw[r * cols + c] = Some(agree as f64 / n);
            }
        }
    }
    let h = (HEATMAP_WINDOW / 2) as isize;
    let mut values = vec![None; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if raw[r * cols + c].is_none() {
                continue;
            }
            let (mut sum, mut count) = (0.0, 0usize);
            for dr in -h..=h {
                let rr = r as isize + dr;
                if rr < 0 || rr >= rows as isize {
                    continue;
                }
                for dc in -h..=h {
                    let cc = (c as isize + dc).rem_euclid(cols as isize) as usize;
                    if let Some(v) = raw[rr as usize * cols + cc] {
                        sum += v;
                        count += 1;
                    }
                }
            }
            values[r * cols + c] = Some(sum / count as f64);
        }
    }
    Ok(Heatmap { rows, cols, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::EncoderId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_template(rng: &mut ChaCha8Rng, rows: usize, cols: usize, planes: usize, mask_p: f64) -> IrisTemplate {
        IrisTemplate::new(
            EncoderId::Bif,
            (0..planes)
                .map(|_| Bitmap::from_fn(rows, cols, |_, _| rng.random_bool(0.5)))
                .collect(),
            Bitmap::from_fn(rows, cols, |_, _| rng.random_bool(mask_p)),
            [7; 8],
        )
        .unwrap()
    }

    fn complement(t: &IrisTemplate) -> IrisTemplate {
        IrisTemplate {
            bitplanes: t.bitplanes.iter().map(Bitmap::not).collect(),
            ..t.clone()
        }
    }

    #[test]
    fn identity_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_template(&mut rng, 16, 128, 2, 1.0);
        let m = fractional_hamming(&a, &a, 8).unwrap();
        assert_eq!((m.score, m.best_shift), (0.0, 0));
        assert_eq!(m.per_shift_scores.len(), 17);
        let m = fractional_hamming(&a, &complement(&a), 0).unwrap();
        assert_eq!(m.score, 1.0);
    }

    #[test]
    fn recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_template(&mut rng, 16, 128, 2, 0.9);
        for k in -6i64..=6 {
            let b = IrisTemplate {
                bitplanes: a.bitplanes.iter().map(|p| p.rotate_cols(-k)).collect(),
                mask: a.mask.rotate_cols(-k),
                ..a.clone()
            };
            let m = fractional_hamming(&a, &b, 8).unwrap();
            assert_eq!((m.score, m.best_shift), (0.0, k));
        }
    }

    #[test]
    fn symmetric_and_monotone_in_shift_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_template(&mut rng, 8, 64, 3, 0.8);
            let b = random_template(&mut rng, 8, 64, 3, 0.8);
            let ab = fractional_hamming(&a, &b, 5).unwrap();
            let ba = fractional_hamming(&b, &a, 5).unwrap();
            assert_eq!(ab.score, ba.score);
            assert!((0.0..=1.0).contains(&ab.score));
            let mut prev = f64::INFINITY;
            for s in 0..8 {
                let v = fractional_hamming(&a, &b, s).unwrap().score;
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn tie_break_prefers_small_then_negative_shift() {
        // periodic code: every even shift matches perfectly
        let plane = Bitmap::from_fn(4, 64, |_, c| c % 2 == 0);
        let t = IrisTemplate::new(EncoderId::Bif, vec![plane], Bitmap::filled(4, 64, true), [0; 8]).unwrap();
        let b = IrisTemplate {
            bitplanes: vec![t.bitplanes[0].rotate_cols(1)],
            ..t.clone()
        };
        let m = fractional_hamming(&t, &b, 4).unwrap();
        assert_eq!((m.score, m.best_shift), (0.0, -1));
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_template(&mut rng, 8, 64, 2, 1.0);
        let mut b = random_template(&mut rng, 8, 64, 2, 1.0);
        b.params_digest = [1; 8];
        assert!(matches!(
            fractional_hamming(&a, &b, 2),
            Err(MatchError::IncompatibleTemplates(_))
        ));
        let sparse = IrisTemplate {
            mask: Bitmap::from_fn(8, 64, |r, c| r == 0 && c < 10),
            ..a.clone()
        };
        assert!(matches!(
            fractional_hamming(&a, &sparse, 2),
            Err(MatchError::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn heatmap_extremes_and_random_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_template(&mut rng, 64, 512, 4, 0.85);
        let same = similarity_heatmap(&a, &a, 0).unwrap();
        for r in 0..64 {
            for c in 0..512 {
                assert_eq!(same.get(r, c).is_some(), a.mask.get(r, c));
            }
        }
        assert!(same.values.iter().flatten().all(|&v| v == 1.0));
        let comp = similarity_heatmap(&a, &complement(&a), 0).unwrap();
        assert!(comp.values.iter().flatten().all(|&v| v == 0.0));
        let b = random_template(&mut rng, 64, 512, 4, 0.85);
        let mean = similarity_heatmap(&a, &b, 3).unwrap().mean().unwrap();
        assert!((mean - 0.5).abs() <= 0.02, "{mean}");
        assert!(!same.to_png().is_empty());
    }
}
