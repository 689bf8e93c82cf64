//! Row-wise 1D log-Gabor encoding.
//!
//! Each polar row is treated as a periodic signal along the angle and
//! filtered in the frequency domain by a one-sided log-Gabor transfer
//! function, which yields an analytic (complex) response. Its phase quadrant
//! gives two bits per sample.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DigestBuilder, EncoderId, EncodingError, ZERO_RESPONSE_EPS};
use crate::bitmap::Bitmap;
use crate::normalization::PolarIris;
use crate::template::{IrisTemplate, ParamsDigest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogGaborConfig {
    /// Centre wavelength in polar columns (f0 = 1 / wavelength).
    pub center_wavelength: f64,
    /// Bandwidth parameter sigma / f0, in (0, 1).
    pub sigma_on_f: f64,
}

impl LogGaborConfig {
    /// Default for a grid of `cols` angular samples: wavelength `cols / 24`.
    pub fn for_cols(cols: usize) -> Self {
        Self {
            center_wavelength: cols as f64 / 24.0,
            sigma_on_f: 0.5,
        }
    }

    pub fn digest(&self) -> ParamsDigest {
        DigestBuilder::new(EncoderId::LogGabor1d)
            .f64(self.center_wavelength)
            .f64(self.sigma_on_f)
            .finish()
    }

    /// Transfer function magnitude at normalised frequency `f` (cycles per
    /// sample); zero at DC and for negative frequencies.
    pub fn transfer(&self, f: f64) -> f64 {
        if f <= 0.0 {
            return 0.0;
        }
        let f0 = 1.0 / self.center_wavelength;
        let l = (f / f0).ln();
        let s = self.sigma_on_f.ln();
        (-(l * l) / (2.0 * s * s)).exp()
    }
}

impl Default for LogGaborConfig {
    fn default() -> Self {
        Self::for_cols(crate::normalization::DEFAULT_COLS)
    }
}

/// Complex log-Gabor response of every polar sample, row-major.
pub fn loggabor_response(p: &PolarIris, cfg: &LogGaborConfig) -> Vec<Complex<f64>> {
    let (rows, cols) = (p.rows(), p.cols());
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(cols);
    let inv = planner.plan_fft_inverse(cols);
    let filter: Vec<f64> = (0..cols)
        .map(|k| {
            // strictly positive frequencies below Nyquist
            if k == 0 || 2 * k >= cols {
                0.0
            } else {
                cfg.transfer(k as f64 / cols as f64)
            }
        })
        .collect();
    let mut out = Vec::with_capacity(rows * cols);
    let mut buf = vec![Complex::new(0.0, 0.0); cols];
    for r in 0..rows {
        for (b, &v) in buf.iter_mut().zip(p.row(r)) {
            *b = Complex::new(v, 0.0);
        }
        fwd.process(&mut buf);
        for (b, &h) in buf.iter_mut().zip(&filter) {
            *b *= h;
        }
        inv.process(&mut buf);
        out.extend(buf.iter().map(|z| z / cols as f64));
    }
    out
}

pub fn encode_loggabor1d(p: &PolarIris, cfg: &LogGaborConfig) -> Result<IrisTemplate, EncodingError> {
    if cfg.center_wavelength.is_nan() || cfg.center_wavelength < 4.0 {
        return Err(EncodingError::Config(format!(
            "center_wavelength {} must be at least 4",
            cfg.center_wavelength
        )));
    }
    if !(cfg.sigma_on_f > 0.0 && cfg.sigma_on_f < 1.0) {
        return Err(EncodingError::Config(format!(
            "sigma_on_f {} must lie in (0, 1)",
            cfg.sigma_on_f
        )));
    }
    let (rows, cols) = (p.rows(), p.cols());
    if (cols as f64) < 4.0 * cfg.center_wavelength {
        return Err(EncodingError::GridTooNarrow {
            cols,
            wavelength: cfg.center_wavelength,
        });
    }
    let resp = loggabor_response(p, cfg);
    let mut re_plane = Bitmap::new(rows, cols);
    let mut im_plane = Bitmap::new(rows, cols);
    let mut mask = Bitmap::new(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let z = resp[r * cols + c];
            re_plane.set(r, c, z.re > 0.0);
            im_plane.set(r, c, z.im > 0.0);
            mask.set(r, c, p.mask.get(r, c) && z.norm() >= ZERO_RESPONSE_EPS);
        }
    }
    Ok(
        IrisTemplate::new(EncoderId::LogGabor1d, vec![re_plane, im_plane], mask, cfg.digest())
            .expect("consistent template"),
    )
}
