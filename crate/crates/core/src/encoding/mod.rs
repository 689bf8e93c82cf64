//! Iris-code encoders.
//!
//! Three families are provided, all producing an [`IrisTemplate`] of sign
//! bits plus a validity mask:
//!
//! * [`gabor2d`]: 2D Gabor phase quantisation on a sub-sampled grid,
//! * [`loggabor1d`]: row-wise 1D log-Gabor phase quadrant coding,
//! * [`bif`]: binarised responses of a loadable bank of zero-mean kernels.
//!
//! Responses whose magnitude is below [`ZERO_RESPONSE_EPS`] produce a 0 bit
//! and are masked out.

pub mod bif;
pub mod gabor2d;
pub mod loggabor1d;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::normalization::PolarIris;
use crate::template::{IrisTemplate, ParamsDigest};

pub use bif::{encode_bif, load_kernel_bank, KernelBank, KernelSource};
pub use gabor2d::{encode_gabor2d, GaborBankConfig};
pub use loggabor1d::{encode_loggabor1d, LogGaborConfig};

pub const ZERO_RESPONSE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderId {
    Gabor2d,
    LogGabor1d,
    Bif,
}

impl EncoderId {
    pub const ALL: [EncoderId; 3] = [EncoderId::Gabor2d, EncoderId::LogGabor1d, EncoderId::Bif];

    pub fn code(self) -> u8 {
        match self {
            EncoderId::Gabor2d => 1,
            EncoderId::LogGabor1d => 2,
            EncoderId::Bif => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(EncoderId::Gabor2d),
            2 => Some(EncoderId::LogGabor1d),
            3 => Some(EncoderId::Bif),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderId::Gabor2d => "gabor2d",
            EncoderId::LogGabor1d => "loggabor1d",
            EncoderId::Bif => "bif",
        }
    }
}

impl fmt::Display for EncoderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gabor2d" | "gabor" => Ok(EncoderId::Gabor2d),
            "loggabor1d" | "loggabor" | "lg" => Ok(EncoderId::LogGabor1d),
            "bif" | "bsif" | "hdbif" => Ok(EncoderId::Bif),
            other => Err(format!("unknown encoder `{other}` (gabor2d, loggabor1d, bif)")),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EncodingError {
    #[error("filter support {support_rows}x{support_cols} exceeds polar grid {rows}x{cols}")]
    FilterLargerThanGrid {
        support_rows: usize,
        support_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("polar grid with {cols} columns is narrower than 4 x wavelength {wavelength}")]
    GridTooNarrow { cols: usize, wavelength: f64 },
    #[error("kernel size {kernel} exceeds polar grid {rows}x{cols}")]
    KernelLargerThanGrid { kernel: usize, rows: usize, cols: usize },
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("malformed kernel bank: {0}")]
    BadKernelFile(String),
    #[error("kernel {index} has mean {mean:e}, expected zero")]
    NonZeroMeanKernel { index: usize, mean: f64 },
}

/// A fully configured encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderConfig {
    Gabor2d(GaborBankConfig),
    LogGabor1d(LogGaborConfig),
    Bif(KernelBank),
}

impl EncoderConfig {
    /// Default configuration of `id` for a polar grid with `cols` columns.
    pub fn default_for(id: EncoderId, cols: usize) -> Self {
        match id {
            EncoderId::Gabor2d => EncoderConfig::Gabor2d(GaborBankConfig::default()),
            EncoderId::LogGabor1d => EncoderConfig::LogGabor1d(LogGaborConfig::for_cols(cols)),
            EncoderId::Bif => EncoderConfig::Bif(KernelBank::fallback()),
        }
    }

    pub fn id(&self) -> EncoderId {
        match self {
            EncoderConfig::Gabor2d(_) => EncoderId::Gabor2d,
            EncoderConfig::LogGabor1d(_) => EncoderId::LogGabor1d,
            EncoderConfig::Bif(_) => EncoderId::Bif,
        }
    }

    pub fn digest(&self) -> ParamsDigest {
        match self {
            EncoderConfig::Gabor2d(c) => c.digest(),
            EncoderConfig::LogGabor1d(c) => c.digest(),
            EncoderConfig::Bif(b) => b.digest(),
        }
    }

    /// Angular sub-sampling: polar columns per template column.
    pub fn angular_stride(&self) -> usize {
        match self {
            EncoderConfig::Gabor2d(c) => c.grid_stride.1,
            _ => 1,
        }
    }
}

pub fn encode(polar: &PolarIris, cfg: &EncoderConfig) -> Result<IrisTemplate, EncodingError> {
    match cfg {
        EncoderConfig::Gabor2d(c) => encode_gabor2d(polar, c),
        EncoderConfig::LogGabor1d(c) => encode_loggabor1d(polar, c),
        EncoderConfig::Bif(b) => encode_bif(polar, b),
    }
}

/// Accumulates configuration fields into an 8-byte digest.
pub(crate) struct DigestBuilder(Sha256);

impl DigestBuilder {
    pub fn new(id: EncoderId) -> Self {
        let mut h = Sha256::new();
        h.update(b"pmiris-encoder");
        h.update([id.code()]);
        Self(h)
    }

    pub fn f64(mut self, v: f64) -> Self {
        self.0.update(v.to_bits().to_be_bytes());
        self
    }

    pub fn usize(mut self, v: usize) -> Self {
        self.0.update((v as u64).to_be_bytes());
        self
    }

    pub fn f64s(mut self, vs: &[f64]) -> Self {
        self = self.usize(vs.len());
        for &v in vs {
            self = self.f64(v);
        }
        self
    }

    pub fn finish(self) -> ParamsDigest {
        let full = self.0.finalize();
        let mut out = [0u8; 8];
        out.copy_from_slice(&full[..8]);
        out
    }
}
