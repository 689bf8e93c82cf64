//! Pupil and iris boundary localisation with a contrast-adjusted circular
//! Hough transform, plus ingestion of externally produced occlusion masks.
//!
//! The iris boundary is searched first on a gamma-expanded copy of the image
//! (which favours the bright iris/sclera transition); the pupil is then
//! searched inside the iris circle on a gamma-compressed copy (which favours
//! the dark pupil/iris transition). Edge pixels vote for centres along their
//! negative gradient direction at every candidate radius.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::Bitmap;
use crate::geometry::{Circle, GeometryError, Segmentation};
use crate::image::IrisImage;

/// Circles whose edge support covers less than this fraction of the
/// circumference (the accumulator's theoretical maximum of `2πr` votes)
/// count as "no boundary".
pub const MIN_PEAK_FRACTION: f64 = 0.11;

/// Pupil centres must be darker than this fraction of the smoothed gray range.
pub const PUPIL_DARK_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoughConfig {
    pub pupil_r_range: [f64; 2],
    pub iris_r_range: [f64; 2],
    /// Minimum Sobel magnitude (gray levels, after contrast adjustment).
    pub gradient_threshold: f64,
    /// Radius step of the coarse pass; the fine pass refines at 1 px.
    pub accumulator_step: f64,
    pub contrast_gamma: f64,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self {
            pupil_r_range: [16.0, 100.0],
            iris_r_range: [60.0, 230.0],
            gradient_threshold: 40.0,
            accumulator_step: 3.0,
            contrast_gamma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SegmentationError {
    #[error("invalid Hough configuration: {0}")]
    Config(String),
    #[error("no {boundary} boundary found (peak {peak:.3} of theoretical maximum)")]
    NoBoundaryFound { boundary: &'static str, peak: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("mask is {mask_w}x{mask_h}, image is {img_w}x{img_h}")]
    DimensionMismatch {
        mask_w: usize,
        mask_h: usize,
        img_w: usize,
        img_h: usize,
    },
}

impl HoughConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let err = |m: String| Err(SegmentationError::Config(m));
        let [p0, p1] = self.pupil_r_range;
        let [i0, i1] = self.iris_r_range;
        if !(p0 > 0.0 && p0 < p1) {
            return err(format!("pupil radius range [{p0}, {p1}] must satisfy 0 < min < max"));
        }
        if !(i0 > 0.0 && i0 < i1) {
            return err(format!("iris radius range [{i0}, {i1}] must satisfy 0 < min < max"));
        }
        if p1 >= i1 {
            return err(format!("pupil upper bound {p1} must be below iris upper bound {i1}"));
        }
        if !(self.contrast_gamma > 0.0 && self.contrast_gamma.is_finite()) {
            return err(format!("contrast_gamma {} must be positive", self.contrast_gamma));
        }
        if self.accumulator_step.is_nan() || self.accumulator_step < 1.0 {
            return err(format!("accumulator_step {} must be >= 1", self.accumulator_step));
        }
        if self.gradient_threshold.is_nan() || self.gradient_threshold < 0.0 {
            return err("gradient_threshold must be non-negative".into());
        }
        Ok(())
    }
}

/// Finds pupil and iris circles.
pub fn segment(img: &IrisImage, cfg: &HoughConfig) -> Result<Segmentation, SegmentationError> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    if cfg.iris_r_range[0] * 2.0 > w.max(h) as f64 || cfg.pupil_r_range[0] * 2.0 > w.max(h) as f64 {
        return Err(SegmentationError::Config(format!(
            "radius ranges do not fit a {w}x{h} image"
        )));
    }
    let smoothed = binomial_blur(img);
    let (lo, hi) = smoothed
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-9 {
        return Err(SegmentationError::NoBoundaryFound {
            boundary: "iris",
            peak: 0.0,
        });
    }
    let adjusted = |gamma: f64| -> Vec<f64> {
        smoothed
            .iter()
            .map(|&v| 255.0 * ((v - lo) / (hi - lo)).powf(gamma))
            .collect()
    };

    let iris_edges = EdgeField::new(&adjusted(cfg.contrast_gamma), w, h, cfg.gradient_threshold, |_, _| true);
    let iris_c = iris_edges.find("iris", cfg.iris_r_range, cfg.accumulator_step, |_, _, _| true)?;

    let pupil_max = cfg.pupil_r_range[1].min(iris_c.r - 1.0);
    if pupil_max <= cfg.pupil_r_range[0] {
        return Err(SegmentationError::NoBoundaryFound {
            boundary: "pupil",
            peak: 0.0,
        });
    }
    // The pupil is searched on the inverse gamma, and its centre must sit in
    // the dark end of the gray range.
    let dark = lo + PUPIL_DARK_FRACTION * (hi - lo);
    let pupil_edges = EdgeField::new(
        &adjusted(1.0 / cfg.contrast_gamma),
        w,
        h,
        cfg.gradient_threshold,
        |x, y| iris_c.contains(x, y),
    );
    let pupil = pupil_edges.find(
        "pupil",
        [cfg.pupil_r_range[0], pupil_max],
        cfg.accumulator_step,
        |cx, cy, r| {
            smoothed[cy as usize * w + cx as usize] <= dark
                && Circle::new(cx, cy, 0.0).center_distance(&iris_c) + r <= iris_c.r - 1.0
        },
    )?;

    Ok(Segmentation::new(pupil, iris_c)?)
}

/// Sets the occlusion mask from a mask raster: bit = 1 where the mask pixel
/// is at least `threshold`.
pub fn attach_mask(
    seg: Segmentation,
    mask_image: &IrisImage,
    threshold: u8,
    image_dims: (usize, usize),
) -> Result<Segmentation, SegmentationError> {
    let (w, h) = image_dims;
    if (mask_image.width(), mask_image.height()) != (w, h) {
        return Err(SegmentationError::DimensionMismatch {
            mask_w: mask_image.width(),
            mask_h: mask_image.height(),
            img_w: w,
            img_h: h,
        });
    }
    let mask = Bitmap::from_fn(h, w, |y, x| mask_image.get(x, y) >= threshold);
    Ok(Segmentation {
        occlusion_mask: Some(mask),
        ..seg
    })
}

/// Bitmap (`rows = height`) with 1 exactly on pixels inside the iris circle
/// and strictly outside the pupil circle.
pub fn default_annulus_mask(seg: &Segmentation, image_dims: (usize, usize)) -> Bitmap {
    let (w, h) = image_dims;
    Bitmap::from_fn(h, w, |y, x| in_annulus(seg, x as f64, y as f64))
}

#[inline]
pub(crate) fn in_annulus(seg: &Segmentation, x: f64, y: f64) -> bool {
    let di = (x - seg.iris.cx).hypot(y - seg.iris.cy);
    let dp = (x - seg.pupil.cx).hypot(y - seg.pupil.cy);
    di <= seg.iris.r && dp > seg.pupil.r
}

fn binomial_blur(img: &IrisImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = px[y * w + clamp(x as isize - 1, w)] as f64;
            let c = px[y * w + x] as f64;
            let r = px[y * w + clamp(x as isize + 1, w)] as f64;
            tmp[y * w + x] = (l + 2.0 * c + r) / 4.0;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let up = clamp(y as isize - 1, h);
        let dn = clamp(y as isize + 1, h);
        for x in 0..w {
            out[y * w + x] = (tmp[up * w + x] + 2.0 * tmp[y * w + x] + tmp[dn * w + x]) / 4.0;
        }
    }
    out
}

struct Edge {
    x: f64,
    y: f64,
    ux: f64,
    uy: f64,
    mag: f64,
}

struct EdgeField {
    w: usize,
    h: usize,
    edges: Vec<Edge>,
}

struct Candidate {
    circle: Circle,
    /// Magnitude-weighted votes per unit circumference; selects the circle.
    score: f64,
    /// Fraction of the circumference backed by edge pixels, capped at 1.
    support: f64,
}

impl EdgeField {
    fn new(img: &[f64], w: usize, h: usize, threshold: f64, keep: impl Fn(f64, f64) -> bool) -> Self {
        let mut edges = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let p = |dx: isize, dy: isize| img[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                let mag = gx.hypot(gy);
                let (fx, fy) = (x as f64, y as f64);
                if mag >= threshold && mag > 0.0 && keep(fx, fy) {
                    edges.push(Edge {
                        x: fx,
                        y: fy,
                        ux: gx / mag,
                        uy: gy / mag,
                        mag,
                    });
                }
            }
        }
        Self { w, h, edges }
    }

    fn find(
        &self,
        boundary: &'static str,
        range: [f64; 2],
        step: f64,
        admissible: impl Fn(f64, f64, f64) -> bool,
    ) -> Result<Circle, SegmentationError> {
        match self.best_circle(range, step, admissible) {
            Some(c) if c.support >= MIN_PEAK_FRACTION => Ok(c.circle),
            best => Err(SegmentationError::NoBoundaryFound {
                boundary,
                peak: best.map_or(0.0, |c| c.support),
            }),
        }
    }

    fn best_circle(&self, range: [f64; 2], step: f64, admissible: impl Fn(f64, f64, f64) -> bool) -> Option<Candidate> {
        if self.edges.is_empty() {
            return None;
        }
        let mut acc = Accumulator::new(self.w, self.h);
        let mut best: Option<Candidate> = None;
        let consider = |r: f64, acc: &mut Accumulator, best: &mut Option<Candidate>| {
            for e in &self.edges {
                acc.splat(e.x - r * e.ux, e.y - r * e.uy, e.mag);
            }
            let circumference = 2.0 * PI * r;
            if let Some((cx, cy, votes, count)) = acc.peak(|cx, cy| admissible(cx, cy, r)) {
                let cand = Candidate {
                    circle: Circle::new(cx, cy, r),
                    score: votes / circumference,
                    support: (count / circumference).min(1.0),
                };
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    *best = Some(cand);
                }
            }
            acc.clear();
        };

        let (r0, r1) = (range[0].ceil(), range[1].floor());
        let mut r = r0;
        while r <= r1 {
            consider(r, &mut acc, &mut best);
            r += step;
        }
        let coarse = best.as_ref()?.circle.r;
        let lo = (coarse - step + 1.0).max(r0);
        let hi = (coarse + step - 1.0).min(r1);
        let mut r = lo;
        while r <= hi {
            if r != coarse {
                consider(r, &mut acc, &mut best);
            }
            r += 1.0;
        }
        best
    }
}

/// Higher score wins; ties go to the smaller radius, then smaller (cy, cx).
fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    (a.circle.r, a.circle.cy, a.circle.cx) < (b.circle.r, b.circle.cy, b.circle.cx)
}

/// Magnitude-weighted and unweighted vote planes.
struct Accumulator {
    w: usize,
    h: usize,
    votes: Vec<f64>,
    counts: Vec<f64>,
    touched: Vec<usize>,
}

impl Accumulator {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            votes: vec![0.0; w * h],
            counts: vec![0.0; w * h],
            touched: Vec::new(),
        }
    }

    #[inline]
    fn add(&mut self, x: usize, y: usize, v: f64, frac: f64) {
        let i = y * self.w + x;
        if self.counts[i] == 0.0 {
            self.touched.push(i);
        }
        self.votes[i] += v * frac;
        self.counts[i] += frac;
    }

    #[inline]
    fn splat(&mut self, x: f64, y: f64, v: f64) {
        if !(x >= 0.0 && y >= 0.0) {
            return;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        if x0 + 1 >= self.w || y0 + 1 >= self.h {
            return;
        }
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        // keep every touched cell non-zero in `counts`
        let eps = f64::MIN_POSITIVE;
        self.add(x0, y0, v, (1.0 - fx) * (1.0 - fy) + eps);
        self.add(x0 + 1, y0, v, fx * (1.0 - fy) + eps);
        self.add(x0, y0 + 1, v, (1.0 - fx) * fy + eps);
        self.add(x0 + 1, y0 + 1, v, fx * fy + eps);
    }

    /// Largest 3x3 weighted sum among admissible touched cells, with the
    /// matching 3x3 vote count.
    fn peak(&self, admissible: impl Fn(f64, f64) -> bool) -> Option<(f64, f64, f64, f64)> {
        let mut best: Option<(f64, usize)> = None;
        let sum3 = |plane: &[f64], i: usize| {
            let (x, y) = (i % self.w, i / self.w);
            let mut s = 0.0;
            for dy in 0..3 {
                let row = (y + dy - 1) * self.w;
                s += plane[row + x - 1] + plane[row + x] + plane[row + x + 1];
            }
            s
        };
        for &i in &self.touched {
            let (x, y) = (i % self.w, i / self.w);
            if x == 0 || y == 0 || x + 1 >= self.w || y + 1 >= self.h {
                continue;
            }
            let s = sum3(&self.votes, i);
            let wins = match best {
                None => true,
                // row-major index order == (cy, cx) lexicographic
                Some((bs, bi)) => s > bs || (s == bs && i < bi),
            };
            if wins && admissible(x as f64, y as f64) {
                best = Some((s, i));
            }
        }
        best.map(|(s, i)| ((i % self.w) as f64, (i / self.w) as f64, s, sum3(&self.counts, i)))
    }

    fn clear(&mut self) {
        for &i in &self.touched {
            self.votes[i] = 0.0;
            self.counts[i] = 0.0;
        }
        self.touched.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::SourceChannel;

    /// Black disk r=40 on a mid-gray disk r=120 on white.
    fn target(cx: f64, cy: f64) -> IrisImage {
        let (w, h) = (640, 480);
        let mut px = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                // 4x4 supersampling for clean edges
                let mut acc = 0.0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let fx = x as f64 + (sx as f64 + 0.5) / 4.0 - 0.5;
                        let fy = y as f64 + (sy as f64 + 0.5) / 4.0 - 0.5;
                        let d = (fx - cx).hypot(fy - cy);
                        acc += if d < 40.0 {
                            0.0
                        } else if d < 120.0 {
                            128.0
                        } else {
                            255.0
                        };
                    }
                }
                px[y * w + x] = (acc / 16.0f64).round() as u8;
            }
        }
        IrisImage::new("target", w, h, px, SourceChannel::Nir).unwrap()
    }

    #[test]
    fn recovers_synthetic_circles() {
        let seg = segment(&target(320.0, 240.0), &HoughConfig::default()).unwrap();
        for (c, r) in [(seg.pupil, 40.0), (seg.iris, 120.0)] {
            assert!((c.cx - 320.0).abs() <= 2.0, "{c:?}");
            assert!((c.cy - 240.0).abs() <= 2.0, "{c:?}");
            assert!((c.r - r).abs() <= 2.0, "{c:?}");
        }
    }

    #[test]
    fn translation_equivariance() {
        let cfg = HoughConfig::default();
        let a = segment(&target(320.0, 240.0), &cfg).unwrap();
        let b = segment(&target(333.0, 231.0), &cfg).unwrap();
        for (ca, cb) in [(a.pupil, b.pupil), (a.iris, b.iris)] {
            assert!((cb.cx - ca.cx - 13.0).abs() <= 1.0);
            assert!((cb.cy - ca.cy + 9.0).abs() <= 1.0);
        }
    }

    #[test]
    fn deterministic() {
        let img = target(300.0, 250.0);
        let cfg = HoughConfig::default();
        assert_eq!(segment(&img, &cfg).unwrap(), segment(&img, &cfg).unwrap());
    }

    #[test]
    fn constant_image_has_no_boundary() {
        let img = IrisImage::filled("c", 640, 480, 90).unwrap();
        assert!(matches!(
            segment(&img, &HoughConfig::default()),
            Err(SegmentationError::NoBoundaryFound { .. })
        ));
    }

    #[test]
    fn inverted_ranges_rejected_before_processing() {
        let cfg = HoughConfig {
            pupil_r_range: [50.0, 60.0],
            iris_r_range: [10.0, 20.0],
            ..HoughConfig::default()
        };
        let img = IrisImage::filled("c", 64, 64, 0).unwrap();
        assert!(matches!(segment(&img, &cfg), Err(SegmentationError::Config(_))));
    }

    fn concentric(rp: f64, ri: f64) -> Segmentation {
        Segmentation::new(Circle::new(150.0, 150.0, rp), Circle::new(150.0, 150.0, ri)).unwrap()
    }

    #[test]
    fn annulus_area_matches_analytic() {
        let m = default_annulus_mask(&concentric(30.0, 90.0), (300, 300));
        let expected = PI * (90.0f64.powi(2) - 30.0f64.powi(2));
        assert!((m.count_ones() as f64 - expected).abs() / expected < 0.01);

        // off-lattice centre: integer centre and radii put whole lattice rings on the boundary
        let thin_seg = Segmentation::new(Circle::new(150.5, 150.5, 89.0), Circle::new(150.5, 150.5, 90.0)).unwrap();
        let thin = default_annulus_mask(&thin_seg, (300, 300));
        let expected = PI * (90.0f64.powi(2) - 89.0f64.powi(2));
        assert!((thin.count_ones() as f64 - expected).abs() / expected < 0.05);
        assert!(!thin.get(150, 150 + 95));
    }

    #[test]
    fn annulus_exhaustive_small() {
        let seg = Segmentation::new(Circle::new(31.3, 30.7, 7.5), Circle::new(32.0, 31.0, 25.2)).unwrap();
        let m = default_annulus_mask(&seg, (64, 64));
        for y in 0..64 {
            for x in 0..64 {
                let (fx, fy) = (x as f64, y as f64);
                if seg.pupil.contains(fx, fy) || !seg.iris.contains(fx, fy) {
                    assert!(!m.get(y, x));
                }
            }
        }
    }

    #[test]
    fn mask_attachment() {
        let seg = concentric(30.0, 90.0);
        let ones = IrisImage::filled("m", 640, 480, 255).unwrap();
        let s = attach_mask(seg.clone(), &ones, 128, (640, 480)).unwrap();
        assert_eq!(s.occlusion_mask.unwrap().count_ones(), 640 * 480);
        let zeros = IrisImage::filled("m", 640, 480, 0).unwrap();
        let s = attach_mask(seg.clone(), &zeros, 128, (640, 480)).unwrap();
        assert_eq!(s.occlusion_mask.unwrap().count_ones(), 0);
        let small = IrisImage::filled("m", 100, 100, 255).unwrap();
        assert!(matches!(
            attach_mask(seg, &small, 128, (640, 480)),
            Err(SegmentationError::DimensionMismatch { .. })
        ));
    }
}
