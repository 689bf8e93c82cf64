//! Synthetic eye renderer for tests, fixtures and benchmarks.
//!
//! An identity is a random band-pass texture defined in normalized polar
//! coordinates (radial fraction, angle). Captures render that texture into a
//! 640x480 frame with a dark pupil, bright sclera, optional eyelid occlusion,
//! rotation and sensor noise. Because the texture lives in polar space, a
//! rotation by `k` angular samples produces an exactly shifted rubber-sheet.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::bitmap::Bitmap;
use crate::geometry::{Circle, Segmentation};
use crate::image::{IrisImage, SourceChannel};
use crate::metadata::{Eye, Gender, SampleMetadata};

pub const FRAME: (usize, usize) = (640, 480);
/// Speckle amplitude of the reference in-focus capture.
pub const SHARP_DETAIL: f64 = 50.0;
const RASTER_ROWS: usize = 96;
const RASTER_COLS: usize = 1024;
const FINE_ROWS: usize = 160;
const FINE_COLS: usize = 2048;
const PUPIL_GRAY: f64 = 28.0;
const SCLERA_GRAY: f64 = 200.0;
const EYELID_GRAY: f64 = 165.0;
const IRIS_MEAN: f64 = 118.0;
const IRIS_STD: f64 = 22.0;
/// Iris texture never gets as dark as the pupil.
const IRIS_FLOOR: f64 = 60.0;

/// Identity-specific iris texture.
#[derive(Debug, Clone)]
pub struct SyntheticIdentity {
    pub seed: u64,
    pub pupil_r: f64,
    pub iris_r: f64,
    raster: Vec<f64>,
    /// Pixel-scale detail: amplitude and an unsmoothed fine raster.
    speckle: Option<(f64, Vec<f64>)>,
}

impl SyntheticIdentity {
    pub fn new(seed: u64) -> Self {
        Self::with_detail(seed, 0.0)
    }

    /// `detail` adds unsmoothed speckle of that standard deviation (gray
    /// levels), which makes the capture sharp in the Laplacian sense.
    pub fn with_detail(seed: u64, detail: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x01de_4717);
        let pupil_r = rng.random_range(38.0..52.0);
        let iris_r = rng.random_range(112.0..128.0);
        let fine = band(&mut rng, 5.0, 3.0);
        let coarse = band(&mut rng, 12.0, 6.0);
        let raster = (0..RASTER_ROWS * RASTER_COLS)
            .map(|i| (IRIS_MEAN + IRIS_STD * (fine[i] + 0.8 * coarse[i]) / 1.28).max(IRIS_FLOOR))
            .collect();
        let speckle = (detail > 0.0).then(|| {
            let fine = (0..FINE_ROWS * FINE_COLS)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            (detail, fine)
        });
        Self {
            seed,
            pupil_r,
            iris_r,
            raster,
            speckle,
        }
    }

    /// Texture at radial fraction `rho` in [0, 1] and angle `theta`.
    fn texture(&self, rho: f64, theta: f64) -> f64 {
        let y = (rho * (RASTER_ROWS - 1) as f64).clamp(0.0, (RASTER_ROWS - 1) as f64);
        let x = theta.rem_euclid(TAU) / TAU * RASTER_COLS as f64;
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let y1 = (y0 + 1).min(RASTER_ROWS - 1);
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let x0 = x0 % RASTER_COLS;
        let x1 = (x0 + 1) % RASTER_COLS;
        let at = |r: usize, c: usize| self.raster[r * RASTER_COLS + c];
        let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
        let bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
        let base = top + (bot - top) * fy;
        match &self.speckle {
            Some((amp, fine)) => {
                let r = ((rho * FINE_ROWS as f64) as usize).min(FINE_ROWS - 1);
                let c = ((theta.rem_euclid(TAU) / TAU * FINE_COLS as f64) as usize) % FINE_COLS;
                base + amp * fine[r * FINE_COLS + c]
            }
            None => base,
        }
    }
}

/// Unit-variance Gaussian-filtered noise on the polar raster (angle wraps).
fn band(rng: &mut ChaCha8Rng, sigma_cols: f64, sigma_rows: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..RASTER_ROWS * RASTER_COLS)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let kernel = |s: f64| -> Vec<f64> {
        let h = (3.0 * s).ceil().max(1.0) as isize;
        let k: Vec<f64> = (-h..=h).map(|d| (-(d * d) as f64 / (2.0 * s * s)).exp()).collect();
        let sum: f64 = k.iter().sum();
        k.into_iter().map(|v| v / sum).collect()
    };
    let kc = kernel(sigma_cols);
    let kr = kernel(sigma_rows);
    let (hc, hr) = ((kc.len() / 2) as isize, (kr.len() / 2) as isize);
    let mut tmp = vec![0.0; noise.len()];
    for r in 0..RASTER_ROWS {
        for c in 0..RASTER_COLS {
            tmp[r * RASTER_COLS + c] = kc
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    w * noise
                        [r * RASTER_COLS + (c as isize + i as isize - hc).rem_euclid(RASTER_COLS as isize) as usize]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; noise.len()];
    for r in 0..RASTER_ROWS {
        for c in 0..RASTER_COLS {
            out[r * RASTER_COLS + c] = kr
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let rr = (r as isize + i as isize - hr).clamp(0, RASTER_ROWS as isize - 1) as usize;
                    w * tmp[rr * RASTER_COLS + c]
                })
                .sum();
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
    out.into_iter().map(|v| (v - mean) / sd).collect()
}

/// Acquisition conditions of one capture.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureParams {
    pub center: (f64, f64),
    /// Added to the identity's pupil radius (dilation).
    pub pupil_delta: f64,
    /// Counter-clockwise in image coordinates (y down), radians.
    pub rotation: f64,
    pub noise_sigma: f64,
    /// Share of the iris annulus hidden by the upper eyelid.
    pub occlusion: f64,
    pub noise_seed: u64,
}

impl Default for CaptureParams {
    fn default() -> Self {
        Self {
            center: (320.0, 240.0),
            pupil_delta: 0.0,
            rotation: 0.0,
            noise_sigma: 0.0,
            occlusion: 0.0,
            noise_seed: 0,
        }
    }
}

impl CaptureParams {
    /// Degraded capture: centre jitter of up to 15 px, rotation within
    /// `±max_rotation_deg`, pupil dilation of up to 2 px.
    pub fn degraded(seed: u64, noise_sigma: f64, max_rotation_deg: f64, occlusion: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00ca_970e);
        Self {
            center: (
                320.0 + rng.random_range(-15.0..15.0),
                240.0 + rng.random_range(-15.0..15.0),
            ),
            pupil_delta: rng.random_range(-2.0..2.0),
            rotation: rng.random_range(-max_rotation_deg..=max_rotation_deg).to_radians(),
            noise_sigma,
            occlusion,
            noise_seed: seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCapture {
    pub image: IrisImage,
    /// Usable-texture mask (eyelid region cleared), image-sized.
    pub occlusion_mask: Bitmap,
    pub truth: Segmentation,
}

impl SyntheticCapture {
    /// Mask as an 8-bit raster (255 usable, 0 occluded).
    pub fn mask_image(&self) -> IrisImage {
        let (w, h) = (self.image.width(), self.image.height());
        let px = (0..w * h)
            .map(|i| if self.occlusion_mask.get(i / w, i % w) { 255 } else { 0 })
            .collect();
        IrisImage::new(format!("{}_mask", self.image.id), w, h, px, SourceChannel::Nir).expect("frame size")
    }
}

pub fn render(identity: &SyntheticIdentity, params: &CaptureParams, id: impl Into<String>) -> SyntheticCapture {
    let (w, h) = FRAME;
    let (cx, cy) = params.center;
    let rp = identity.pupil_r + params.pupil_delta;
    let ri = identity.iris_r;
    let truth = Segmentation::new(Circle::new(cx, cy, rp), Circle::new(cx, cy, ri)).expect("valid synthetic geometry");

    let lid_y = eyelid_line(cy, rp, ri, params.occlusion);
    let sample = |x: f64, y: f64| -> f64 {
        if y < lid_y {
            return EYELID_GRAY;
        }
        let (dx, dy) = (x - cx, y - cy);
        let d = dx.hypot(dy);
        if d < rp {
            PUPIL_GRAY
        } else if d <= ri {
            identity.texture((d - rp) / (ri - rp), dy.atan2(dx) - params.rotation)
        } else {
            SCLERA_GRAY
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0)).expect("finite sigma");
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = 0.0;
            for (ox, oy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                v += sample(fx + ox, fy + oy);
            }
            v /= 4.0;
            if params.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            px.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    let image = IrisImage::new(id, w, h, px, SourceChannel::Nir).expect("frame size");
    let occlusion_mask = Bitmap::from_fn(h, w, |y, _| (y as f64) >= lid_y + 0.5);
    SyntheticCapture {
        image,
        occlusion_mask,
        truth,
    }
}

/// Horizontal eyelid edge hiding `fraction` of the annulus area.
fn eyelid_line(cy: f64, rp: f64, ri: f64, fraction: f64) -> f64 {
    if fraction <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let area = |y_cut: f64| -> f64 {
        // annulus area above y_cut, by numerical integration over rows
        let mut a = 0.0;
        let mut y = cy - ri;
        while y < y_cut {
            let dy = y + 0.25 - cy;
            let outer = (ri * ri - dy * dy).max(0.0).sqrt();
            let inner = (rp * rp - dy * dy).max(0.0).sqrt();
            a += 2.0 * (outer - inner) * 0.5;
            y += 0.5;
        }
        a
    };
    let total = std::f64::consts::PI * (ri * ri - rp * rp);
    let (mut lo, mut hi) = (cy - ri, cy + ri);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if area(mid) < fraction * total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Metadata for capture `capture` of synthetic identity `identity`.
pub fn synthetic_metadata(identity: usize, capture: usize) -> SampleMetadata {
    let mut rng = ChaCha8Rng::seed_from_u64(identity as u64);
    SampleMetadata {
        sample_id: format!("id{identity:03}_c{capture}"),
        subject_id: format!("subj{identity:03}"),
        eye: Eye::Left,
        session: capture as u32 + 1,
        pmi_hours: rng.random_range(5.0..400.0f64).round() + 24.0 * capture as f64,
        age_years: rng.random_range(18..90),
        gender: if identity.is_multiple_of(2) {
            Gender::Male
        } else {
            Gender::Female
        },
        image_path: format!("id{identity:03}_c{capture}.png"),
    }
}

/// Degradation applied to every capture of a [`dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    pub noise_sigma: f64,
    pub max_rotation_deg: f64,
    /// Fraction of the annulus hidden by the eyelid.
    pub occlusion: f64,
}

/// `identities x captures` degraded captures with their metadata, ordered
/// by identity then capture. Identity `i` has texture seed
/// `seed * 1_000_003 + i`; every capture draws its own jitter and noise.
pub fn dataset(
    identities: usize,
    captures: usize,
    degradation: &Degradation,
    seed: u64,
) -> Vec<(SampleMetadata, SyntheticCapture)> {
    use rayon::prelude::*;

    (0..identities * captures)
        .into_par_iter()
        .map(|k| {
            let (i, c) = (k / captures, k % captures);
            let id_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let identity = SyntheticIdentity::new(id_seed);
            let params = CaptureParams::degraded(
                id_seed.wrapping_mul(64).wrapping_add(c as u64),
                degradation.noise_sigma,
                degradation.max_rotation_deg,
                degradation.occlusion,
            );
            let meta = synthetic_metadata(i, c);
            let capture = render(&identity, &params, meta.sample_id.clone());
            (meta, capture)
        })
        .collect()
}
