//! Iris templates and the `PMIT` binary format.
//!
//! Layout (all multi-byte integers big-endian):
//!
//! | bytes | field            |
//! |-------|------------------|
//! | 4     | magic `PMIT`     |
//! | 1     | version (1)      |
//! | 1     | encoder id       |
//! | 2     | rows             |
//! | 2     | cols             |
//! | 1     | bitplane count   |
//! | 8     | params digest    |
//!
//! followed by each bitplane and then the mask, every plane packed row-major,
//! most significant bit first, and padded to a whole byte.

use thiserror::Error;

use crate::bitmap::Bitmap;
use crate::encoding::EncoderId;

pub const MAGIC: &[u8; 4] = b"PMIT";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 19;

pub type ParamsDigest = [u8; 8];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TemplateError {
    #[error("bad magic: expected PMIT")]
    BadMagic,
    #[error("unsupported template format version {0}")]
    VersionUnsupported(u8),
    #[error("template byte length {actual} does not match header ({expected})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("unknown encoder id {0}")]
    UnknownEncoder(u8),
    #[error("invalid template: {0}")]
    Invalid(String),
}

/// Binary iris code: one or more bitplanes plus a validity mask, all with
/// identical dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrisTemplate {
    pub encoder_id: EncoderId,
    pub bitplanes: Vec<Bitmap>,
    pub mask: Bitmap,
    pub params_digest: ParamsDigest,
}

impl IrisTemplate {
    pub fn new(
        encoder_id: EncoderId,
        bitplanes: Vec<Bitmap>,
        mask: Bitmap,
        params_digest: ParamsDigest,
    ) -> Result<Self, TemplateError> {
        let t = Self {
            encoder_id,
            bitplanes,
            mask,
            params_digest,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.bitplanes.is_empty() || self.bitplanes.len() > u8::MAX as usize {
            return Err(TemplateError::Invalid(format!(
                "{} bitplanes (1..=255 required)",
                self.bitplanes.len()
            )));
        }
        let dims = self.mask.dims();
        if self.bitplanes.iter().any(|p| p.dims() != dims) {
            return Err(TemplateError::Invalid("bitplane dimensions differ from mask".into()));
        }
        if dims.0 == 0 || dims.1 == 0 || dims.0 > u16::MAX as usize || dims.1 > u16::MAX as usize {
            return Err(TemplateError::Invalid(format!("dimensions {}x{}", dims.0, dims.1)));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.mask.rows()
    }

    pub fn cols(&self) -> usize {
        self.mask.cols()
    }

    /// Whether two templates can be compared bit for bit.
    pub fn compatible_with(&self, other: &IrisTemplate) -> bool {
        self.encoder_id == other.encoder_id
            && self.params_digest == other.params_digest
            && self.mask.dims() == other.mask.dims()
            && self.bitplanes.len() == other.bitplanes.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.mask.dims();
        let plane_bytes = (rows * cols).div_ceil(8);
        let mut out = Vec::with_capacity(HEADER_LEN + plane_bytes * (self.bitplanes.len() + 1));
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.encoder_id.code());
        out.extend_from_slice(&(rows as u16).to_be_bytes());
        out.extend_from_slice(&(cols as u16).to_be_bytes());
        out.push(self.bitplanes.len() as u8);
        out.extend_from_slice(&self.params_digest);
        for plane in self.bitplanes.iter().chain(std::iter::once(&self.mask)) {
            pack_plane(plane, &mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TemplateError> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(TemplateError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(TemplateError::LengthMismatch {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(TemplateError::VersionUnsupported(bytes[4]));
        }
        let encoder_id = EncoderId::from_code(bytes[5]).ok_or(TemplateError::UnknownEncoder(bytes[5]))?;
        let rows = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;
        let cols = u16::from_be_bytes([bytes[8], bytes[9]]) as usize;
        let count = bytes[10] as usize;
        let mut digest = [0u8; 8];
        digest.copy_from_slice(&bytes[11..19]);
        let plane_bytes = (rows * cols).div_ceil(8);
        let expected = HEADER_LEN + plane_bytes * (count + 1);
        if bytes.len() != expected {
            return Err(TemplateError::LengthMismatch {
                expected,
                actual: bytes.len(),
            });
        }
        let mut planes: Vec<Bitmap> = bytes[HEADER_LEN..]
            .chunks_exact(plane_bytes.max(1))
            .take(count + 1)
            .map(|chunk| unpack_plane(chunk, rows, cols))
            .collect();
        let mask = planes
            .pop()
            .ok_or_else(|| TemplateError::Invalid("missing mask".into()))?;
        Self::new(encoder_id, planes, mask, digest)
    }
}

fn pack_plane(plane: &Bitmap, out: &mut Vec<u8>) {
    let (rows, cols) = plane.dims();
    let mut byte = 0u8;
    let mut n = 0;
    for r in 0..rows {
        for c in 0..cols {
            byte = (byte << 1) | plane.get(r, c) as u8;
            n += 1;
            if n == 8 {
                out.push(byte);
                byte = 0;
                n = 0;
            }
        }
    }
    if n > 0 {
        out.push(byte << (8 - n));
    }
}

fn unpack_plane(bytes: &[u8], rows: usize, cols: usize) -> Bitmap {
    Bitmap::from_fn(rows, cols, |r, c| {
        let i = r * cols + c;
        bytes[i / 8] & (0x80 >> (i % 8)) != 0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_plane(rows: usize, cols: usize, seed: u64) -> Bitmap {
        let mut s = seed | 1;
        Bitmap::from_fn(rows, cols, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            s & 1 == 1
        })
    }

    fn sample(rows: usize, cols: usize, planes: usize, seed: u64) -> IrisTemplate {
        IrisTemplate::new(
            EncoderId::LogGabor1d,
            (0..planes).map(|i| random_plane(rows, cols, seed + i as u64)).collect(),
            random_plane(rows, cols, seed ^ 0xabcdef),
            seed.to_be_bytes(),
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_64x512() {
        let t = sample(64, 512, 2, 42);
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 19 + 3 * 64 * 512 / 8);
        assert_eq!(IrisTemplate::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn header_layout() {
        let t = sample(3, 5, 1, 7);
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"PMIT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], EncoderId::LogGabor1d.code());
        assert_eq!(&bytes[6..10], &[0, 3, 0, 5]);
        assert_eq!(bytes[10], 1);
        // 15 bits per plane -> 2 bytes
        assert_eq!(bytes.len(), 19 + 2 * 2);
        // first plane, MSB first
        let first = t.bitplanes[0].get(0, 0) as u8;
        assert_eq!(bytes[19] >> 7, first);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = sample(8, 64, 2, 1).to_bytes();
        assert!(matches!(
            IrisTemplate::from_bytes(&bytes[..bytes.len() - 1]),
            Err(TemplateError::LengthMismatch { .. })
        ));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert_eq!(IrisTemplate::from_bytes(&bad), Err(TemplateError::BadMagic));
        let mut v = bytes;
        v[4] = 9;
        assert_eq!(IrisTemplate::from_bytes(&v), Err(TemplateError::VersionUnsupported(9)));
    }

    proptest! {
        #[test]
        fn roundtrip_any_shape(rows in 1usize..20, cols in 1usize..130, planes in 1usize..5, seed in any::<u64>()) {
            let t = sample(rows, cols, planes, seed);
            prop_assert_eq!(IrisTemplate::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
