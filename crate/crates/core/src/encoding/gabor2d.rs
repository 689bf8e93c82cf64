//! 2D Gabor phase quantisation.
//!
//! Each filter is a complex Gabor kernel whose carrier runs along the angular
//! axis (orientation 0) and is rotated by the configured orientations. Every
//! grid sample yields two bits per filter: the signs of the real and the
//! imaginary response.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{DigestBuilder, EncoderId, EncodingError, ZERO_RESPONSE_EPS};
use crate::bitmap::Bitmap;
use crate::normalization::PolarIris;
use crate::template::{IrisTemplate, ParamsDigest};

/// Envelope truncation, in standard deviations.
const SUPPORT_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborBankConfig {
    /// Carrier wavelengths in polar columns.
    pub wavelengths: Vec<f64>,
    /// Envelope sigma along the carrier, as a fraction of the wavelength.
    pub sigma_ratio: f64,
    /// Carrier orientations in radians; 0 runs along the angle.
    pub orientations: Vec<f64>,
    /// (radial, angular) spacing of the sampling grid.
    pub grid_stride: (usize, usize),
    /// Envelope sigma across the carrier, as a fraction of the wavelength.
    pub radial_sigma_ratio: f64,
}

impl Default for GaborBankConfig {
    fn default() -> Self {
        Self {
            wavelengths: vec![18.0, 27.0, 36.0],
            sigma_ratio: 0.5,
            orientations: vec![0.0],
            grid_stride: (4, 2),
            radial_sigma_ratio: 1.0 / 6.0,
        }
    }
}

impl GaborBankConfig {
    pub fn filter_count(&self) -> usize {
        self.wavelengths.len() * self.orientations.len()
    }

    pub fn digest(&self) -> ParamsDigest {
        DigestBuilder::new(EncoderId::Gabor2d)
            .f64s(&self.wavelengths)
            .f64(self.sigma_ratio)
            .f64s(&self.orientations)
            .usize(self.grid_stride.0)
            .usize(self.grid_stride.1)
            .f64(self.radial_sigma_ratio)
            .finish()
    }

    fn validate(&self) -> Result<(), EncodingError> {
        let bad = |m: &str| Err(EncodingError::Config(m.to_owned()));
        if self.filter_count() == 0 {
            return bad("at least one wavelength and one orientation required");
        }
        if self.wavelengths.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return bad("wavelengths must be positive");
        }
        if !(self.sigma_ratio > 0.0 && self.radial_sigma_ratio > 0.0) {
            return bad("sigma ratios must be positive");
        }
        if self.grid_stride.0 == 0 || self.grid_stride.1 == 0 {
            return bad("grid stride must be positive");
        }
        if 2 * self.filter_count() > u8::MAX as usize {
            return bad("too many filters");
        }
        Ok(())
    }

    pub(crate) fn kernels(&self) -> Vec<GaborKernel> {
        let mut out = Vec::new();
        for &wl in &self.wavelengths {
            for &orient in &self.orientations {
                out.push(GaborKernel::new(
                    wl,
                    self.sigma_ratio * wl,
                    self.radial_sigma_ratio * wl,
                    orient,
                ));
            }
        }
        out
    }
}

pub(crate) struct GaborKernel {
    /// Half extents (radial, angular) of the support box.
    pub half: (usize, usize),
    /// (dr, da, real, imag)
    taps: Vec<(isize, isize, f64, f64)>,
}

impl GaborKernel {
    fn new(wavelength: f64, sigma_along: f64, sigma_across: f64, orientation: f64) -> Self {
        let (s, c) = orientation.sin_cos();
        let a = SUPPORT_SIGMAS * sigma_along;
        let b = SUPPORT_SIGMAS * sigma_across;
        let half_a = ((a * c).hypot(b * s)).ceil() as isize;
        let half_r = ((a * s).hypot(b * c)).ceil() as isize;
        let mut taps = Vec::new();
        for dr in -half_r..=half_r {
            for da in -half_a..=half_a {
                let u = da as f64 * c + dr as f64 * s;
                let v = -(da as f64) * s + dr as f64 * c;
                let env = (-(u * u) / (2.0 * sigma_along * sigma_along)
                    - (v * v) / (2.0 * sigma_across * sigma_across))
                    .exp();
                let ph = TAU * u / wavelength;
                taps.push((dr, da, env * ph.cos(), env * ph.sin()));
            }
        }
        // zero mean and unit energy
        let n = taps.len() as f64;
        let mean_re = taps.iter().map(|t| t.2).sum::<f64>() / n;
        let mean_im = taps.iter().map(|t| t.3).sum::<f64>() / n;
        for t in &mut taps {
            t.2 -= mean_re;
            t.3 -= mean_im;
        }
        let energy = taps.iter().map(|t| t.2 * t.2 + t.3 * t.3).sum::<f64>().sqrt();
        for t in &mut taps {
            t.2 /= energy;
            t.3 /= energy;
        }
        Self {
            half: (half_r as usize, half_a as usize),
            taps,
        }
    }

    #[inline]
    fn respond(&self, p: &PolarIris, r0: usize, a0: usize) -> (f64, f64) {
        let cols = p.cols() as isize;
        let tex = p.texture();
        let (mut re, mut im) = (0.0, 0.0);
        for &(dr, da, kr, ki) in &self.taps {
            let r = (r0 as isize + dr) as usize;
            let a = (a0 as isize + da).rem_euclid(cols) as usize;
            let v = tex[r * p.cols() + a];
            re += kr * v;
            im += ki * v;
        }
        (re, im)
    }
}

/// Counts unusable samples in boxes with circular wrap along the columns.
struct UnusableCounter {
    rows: usize,
    cols: usize,
    /// prefix sums over rows x (2 * cols) (mask repeated once), 1-based
    sums: Vec<u32>,
}

impl UnusableCounter {
    fn new(mask: &Bitmap) -> Self {
        let (rows, cols) = mask.dims();
        let w = 2 * cols + 1;
        let mut sums = vec![0u32; (rows + 1) * w];
        for r in 0..rows {
            for c in 0..2 * cols {
                let bad = !mask.get(r, c % cols) as u32;
                sums[(r + 1) * w + c + 1] = bad + sums[r * w + c + 1] + sums[(r + 1) * w + c] - sums[r * w + c];
            }
        }
        Self { rows, cols, sums }
    }

    /// Unusable count in rows `r0..=r1`, columns `c0..=c0+len-1` (wrapping).
    fn count(&self, r0: usize, r1: usize, c0: isize, len: usize) -> u32 {
        debug_assert!(r1 < self.rows && len <= self.cols);
        let w = 2 * self.cols + 1;
        let c0 = c0.rem_euclid(self.cols as isize) as usize;
        let c1 = c0 + len;
        self.sums[(r1 + 1) * w + c1] + self.sums[r0 * w + c0] - self.sums[r0 * w + c1] - self.sums[(r1 + 1) * w + c0]
    }
}

pub fn encode_gabor2d(p: &PolarIris, cfg: &GaborBankConfig) -> Result<IrisTemplate, EncodingError> {
    cfg.validate()?;
    let (rows, cols) = (p.rows(), p.cols());
    let kernels = cfg.kernels();
    for k in &kernels {
        let (sr, sa) = (2 * k.half.0 + 1, 2 * k.half.1 + 1);
        if sr > rows || sa > cols {
            return Err(EncodingError::FilterLargerThanGrid {
                support_rows: sr,
                support_cols: sa,
                rows,
                cols,
            });
        }
    }
    let (stride_r, stride_a) = cfg.grid_stride;
    if cols % stride_a != 0 {
        return Err(EncodingError::Config(format!(
            "angular stride {stride_a} does not divide {cols} columns"
        )));
    }
    let sample_rows: Vec<usize> = (stride_r / 2..rows).step_by(stride_r).collect();
    let (trows, tcols) = (sample_rows.len(), cols / stride_a);

    let unusable = UnusableCounter::new(&p.mask);
    let mut planes = vec![Bitmap::new(trows, tcols); 2 * kernels.len()];
    let mut mask = Bitmap::filled(trows, tcols, true);
    for (ti, &r0) in sample_rows.iter().enumerate() {
        for tj in 0..tcols {
            let a0 = tj * stride_a;
            let mut valid = true;
            for (f, k) in kernels.iter().enumerate() {
                let (hr, ha) = k.half;
                if r0 < hr
                    || r0 + hr >= rows
                    || unusable.count(r0 - hr, r0 + hr, a0 as isize - ha as isize, 2 * ha + 1) > 0
                {
                    valid = false;
                }
                let (re, im) = k.respond_checked(p, r0, a0);
                if re.hypot(im) < ZERO_RESPONSE_EPS {
                    valid = false;
                }
                planes[2 * f].set(ti, tj, re > 0.0);
                planes[2 * f + 1].set(ti, tj, im > 0.0);
            }
            mask.set(ti, tj, valid);
        }
    }
    Ok(IrisTemplate::new(EncoderId::Gabor2d, planes, mask, cfg.digest()).expect("consistent template"))
}

impl GaborKernel {
    /// Response with radial replication at the grid border; such samples are
    /// masked anyway but still get deterministic bits.
    fn respond_checked(&self, p: &PolarIris, r0: usize, a0: usize) -> (f64, f64) {
        let (hr, _) = self.half;
        if r0 >= hr && r0 + hr < p.rows() {
            return self.respond(p, r0, a0);
        }
        let cols = p.cols() as isize;
        let tex = p.texture();
        let (mut re, mut im) = (0.0, 0.0);
        for &(dr, da, kr, ki) in &self.taps {
            let r = (r0 as isize + dr).clamp(0, p.rows() as isize - 1) as usize;
            let a = (a0 as isize + da).rem_euclid(cols) as usize;
            let v = tex[r * p.cols() + a];
            re += kr * v;
            im += ki * v;
        }
        (re, im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::test_support::random_polar;

    #[test]
    fn bit_capacity() {
        let cfg = GaborBankConfig::default();
        let p = random_polar(64, 512, 1, false);
        let t = encode_gabor2d(&p, &cfg).unwrap();
        let grid = t.rows() * t.cols();
        assert_eq!(t.bitplanes.len() * grid, 2 * cfg.filter_count() * grid);
        assert_eq!(t.bitplanes.len(), 6);
        assert_eq!((t.rows(), t.cols()), (16, 256));
    }

    #[test]
    fn kernels_are_zero_mean() {
        for k in GaborBankConfig::default().kernels() {
            let (re, im) = k.taps.iter().fold((0.0, 0.0), |acc, t| (acc.0 + t.2, acc.1 + t.3));
            assert!(re.abs() < 1e-12 && im.abs() < 1e-12);
        }
    }

    #[test]
    fn angular_shift_equivariance() {
        let cfg = GaborBankConfig::default();
        for seed in 0..100u64 {
            let p = random_polar(64, 512, seed, seed % 2 == 0);
            let s = 2 * ((seed as i64 * 7) % 40 - 20);
            let base = encode_gabor2d(&p, &cfg).unwrap();
            let shifted = encode_gabor2d(&p.rotated(s), &cfg).unwrap();
            let k = s / 2;
            for (a, b) in base.bitplanes.iter().zip(&shifted.bitplanes) {
                assert_eq!(&b.rotate_cols(k), a, "seed {seed}");
            }
            assert_eq!(shifted.mask.rotate_cols(k), base.mask);
        }
    }

    #[test]
    fn inversion_flips_valid_bits() {
        let cfg = GaborBankConfig::default();
        for seed in 0..20u64 {
            let p = random_polar(64, 512, seed, true);
            let a = encode_gabor2d(&p, &cfg).unwrap();
            let b = encode_gabor2d(&p.map_texture(|v| 255.0 - v), &cfg).unwrap();
            assert_eq!(a.mask, b.mask);
            for (pa, pb) in a.bitplanes.iter().zip(&b.bitplanes) {
                for r in 0..a.rows() {
                    for c in 0..a.cols() {
                        if a.mask.get(r, c) {
                            assert_ne!(pa.get(r, c), pb.get(r, c));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn filter_larger_than_grid() {
        let cfg = GaborBankConfig {
            wavelengths: vec![200.0],
            ..Default::default()
        };
        let p = random_polar(16, 128, 3, false);
        assert!(matches!(
            encode_gabor2d(&p, &cfg),
            Err(EncodingError::FilterLargerThanGrid { .. })
        ));
    }

    #[test]
    fn mask_requires_full_support() {
        let cfg = GaborBankConfig::default();
        let mut p = random_polar(64, 512, 9, false);
        p.mask.set(32, 100, false);
        let t = encode_gabor2d(&p, &cfg).unwrap();
        let (hr, ha) = cfg.kernels().iter().map(|k| k.half).max().unwrap();
        // the grid sample nearest to the hole lies inside every support box
        assert!(!t.mask.get(8, 50));
        // samples whose boxes avoid the hole stay valid
        let far = (100 + ha + 4) / 2;
        assert!(t.mask.get(8, far));
        assert!(hr < 32);
    }
}
