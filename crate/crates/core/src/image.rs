//! Grayscale iris rasters and their file formats (binary PGM and PNG).

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::Bitmap;

/// Smallest accepted side length.
pub const MIN_SIDE: usize = 64;
/// Curation size of the reference datasets; other sizes only raise a warning.
pub const CANONICAL_SIZE: (usize, usize) = (640, 480);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceChannel {
    #[default]
    Nir,
    RgbRed,
}

impl fmt::Display for SourceChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceChannel::Nir => "nir",
            SourceChannel::RgbRed => "rgb_red",
        })
    }
}

impl std::str::FromStr for SourceChannel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nir" => Ok(SourceChannel::Nir),
            "rgb_red" | "red" => Ok(SourceChannel::RgbRed),
            other => Err(format!("unknown channel `{other}` (expected nir or rgb_red)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image file: {0}")]
    CorruptFile(String),
    #[error("image is {width}x{height}, both sides must be at least {MIN_SIDE}")]
    DimensionTooSmall { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-bit grayscale raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct IrisImage {
    pub id: String,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub source_channel: SourceChannel,
}

impl fmt::Debug for IrisImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IrisImage")
            .field("id", &self.id)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("source_channel", &self.source_channel)
            .finish_non_exhaustive()
    }
}

impl IrisImage {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        source_channel: SourceChannel,
    ) -> Result<Self, ImageError> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(ImageError::DimensionTooSmall { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::PixelCount {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
            source_channel,
        })
    }

    pub fn filled(id: impl Into<String>, width: usize, height: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(id, width, height, vec![value; width * height], SourceChannel::Nir)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn is_canonical_size(&self) -> bool {
        (self.width, self.height) == CANONICAL_SIZE
    }

    /// Non-fatal observations about the raster.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.is_canonical_size() {
            w.push(format!(
                "image {} is {}x{}, curated data uses {}x{}",
                self.id, self.width, self.height, CANONICAL_SIZE.0, CANONICAL_SIZE.1
            ));
        }
        w
    }

    /// Bilinear sample at a real-valued position; `None` when any of the four
    /// neighbours falls outside the frame.
    #[inline]
    pub fn bilinear(&self, x: f64, y: f64) -> Option<(f64, [(usize, usize); 4])> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = x0 + 1;
        let y1 = y0 + 1;
        // Points on the last row/column still interpolate with weight 0.
        let (x1, fx) = if x1 >= self.width {
            if x0 + 1 == self.width && x == x0 as f64 {
                (x0, 0.0)
            } else {
                return None;
            }
        } else {
            (x1, x - x0 as f64)
        };
        let (y1, fy) = if y1 >= self.height {
            if y0 + 1 == self.height && y == y0 as f64 {
                (y0, 0.0)
            } else {
                return None;
            }
        } else {
            (y1, y - y0 as f64)
        };
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        Some((top + (bottom - top) * fy, [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]))
    }

    /// `size`×`size` mean filter with edge clamping (odd `size`).
    pub fn box_blurred(&self, size: usize) -> IrisImage {
        let (w, h) = (self.width, self.height);
        let half = (size / 2) as isize;
        let n = ((2 * half + 1) * (2 * half + 1)) as f64;
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut s = 0u32;
                for dy in -half..=half {
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -half..=half {
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        s += self.pixels[yy * w + xx] as u32;
                    }
                }
                out.push((s as f64 / n).round() as u8);
            }
        }
        IrisImage {
            id: self.id.clone(),
            width: w,
            height: h,
            pixels: out,
            source_channel: self.source_channel,
        }
    }

    /// Reads the image as an occlusion mask: nonzero pixels are usable.
    pub fn to_mask(&self) -> Bitmap {
        let w = self.width;
        Bitmap::from_fn(self.height, w, |y, x| self.pixels[y * w + x] != 0)
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        encode_pgm(self.width, self.height, &self.pixels)
    }

    pub fn encode_png(&self) -> Vec<u8> {
        encode_png_gray(self.width, self.height, &self.pixels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let bytes = match extension(path).as_deref() {
            Some("png") => self.encode_png(),
            _ => self.encode_pgm(),
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Reads a PGM (P5) or PNG file. RGB input is reduced by taking the red
/// plane, which requires `channel == RgbRed`.
pub fn load_image(path: impl AsRef<Path>, channel: SourceChannel) -> Result<IrisImage, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_image(&bytes, id, channel)
}

/// Decodes in-memory PGM/PNG bytes.
pub fn decode_image(bytes: &[u8], id: impl Into<String>, channel: SourceChannel) -> Result<IrisImage, ImageError> {
    const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";
    if bytes.starts_with(b"P5") {
        let (w, h, pixels) = decode_pgm(bytes)?;
        IrisImage::new(id, w, h, pixels, channel)
    } else if bytes.starts_with(PNG_MAGIC) {
        decode_png(bytes, id.into(), channel)
    } else {
        Err(ImageError::UnsupportedFormat("expected binary PGM (P5) or PNG".into()))
    }
}

fn decode_png(bytes: &[u8], id: String, channel: SourceChannel) -> Result<IrisImage, ImageError> {
    use ::image::{DynamicImage, ImageFormat};

    let img = ::image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImageError::CorruptFile(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(buf) => {
            require_red(channel)?;
            buf.pixels().map(|p| p.0[0]).collect()
        }
        DynamicImage::ImageRgba8(buf) => {
            require_red(channel)?;
            buf.pixels().map(|p| p.0[0]).collect()
        }
        other => {
            return Err(ImageError::UnsupportedFormat(format!(
                "PNG color type {:?} (only 8-bit gray or RGB)",
                other.color()
            )))
        }
    };
    IrisImage::new(id, w, h, pixels, channel)
}

fn require_red(channel: SourceChannel) -> Result<(), ImageError> {
    match channel {
        SourceChannel::RgbRed => Ok(()),
        SourceChannel::Nir => Err(ImageError::UnsupportedFormat(
            "RGB input is only accepted with the rgb_red channel".into(),
        )),
    }
}

/// Parses a binary 8-bit PGM. Comments are allowed between header tokens.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageError> {
    let corrupt = |m: &str| ImageError::CorruptFile(m.to_owned());
    if !bytes.starts_with(b"P5") {
        return Err(ImageError::UnsupportedFormat("not a binary PGM".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(corrupt("truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("malformed PGM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedFormat(format!(
            "PGM maxval {maxval} (only 8-bit)"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(corrupt("missing raster separator"));
    }
    pos += 1;
    let n = w.checked_mul(h).ok_or_else(|| corrupt("PGM dimensions overflow"))?;
    let data = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated PGM raster"))?;
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(ImageError::DimensionTooSmall { width: w, height: h });
    }
    let pixels = if maxval == 255 {
        data.to_vec()
    } else {
        data.iter()
            .map(|&v| ((v as u32 * 255 + maxval as u32 / 2) / maxval as u32).min(255) as u8)
            .collect()
    };
    Ok((w, h, pixels))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Binary PBM (P4); a set bit is written as black (1).
pub fn encode_pbm(mask: &Bitmap) -> Vec<u8> {
    let (rows, cols) = mask.dims();
    let mut out = format!("P4\n{cols} {rows}\n").into_bytes();
    for r in 0..rows {
        let mut byte = 0u8;
        for c in 0..cols {
            if mask.get(r, c) {
                byte |= 0x80 >> (c % 8);
            }
            if c % 8 == 7 {
                out.push(byte);
                byte = 0;
            }
        }
        if cols % 8 != 0 {
            out.push(byte);
        }
    }
    out
}

pub fn encode_png_gray(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let encoder = ::image::codecs::png::PngEncoder::new(&mut out);
    ::image::ImageEncoder::write_image(
        encoder,
        pixels,
        width as u32,
        height as u32,
        ::image::ExtendedColorType::L8,
    )
    .expect("in-memory PNG encoding");
    out
}

/// Gray + alpha PNG, used for maps with absent cells.
pub fn encode_png_gray_alpha(width: usize, height: usize, pixels: &[[u8; 2]]) -> Vec<u8> {
    let flat: Vec<u8> = pixels.iter().flatten().copied().collect();
    let mut out = Vec::new();
    let encoder = ::image::codecs::png::PngEncoder::new(&mut out);
    ::image::ImageEncoder::write_image(
        encoder,
        &flat,
        width as u32,
        height as u32,
        ::image::ExtendedColorType::La8,
    )
    .expect("in-memory PNG encoding");
    out
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_pgm_loads() {
        let bytes = encode_pgm(640, 480, &vec![128; 640 * 480]);
        let img = decode_image(&bytes, "c", SourceChannel::Nir).unwrap();
        assert_eq!((img.width(), img.height()), (640, 480));
        assert!(img.pixels().iter().all(|&p| p == 128));
        assert!(img.warnings().is_empty());
    }

    #[test]
    fn red_plane_extraction() {
        let mut rgb = ::image::RgbImage::new(64, 64);
        for p in rgb.pixels_mut() {
            *p = ::image::Rgb([10, 200, 200]);
        }
        let mut bytes = Vec::new();
        rgb.write_to(&mut std::io::Cursor::new(&mut bytes), ::image::ImageFormat::Png)
            .unwrap();
        let img = decode_image(&bytes, "rgb", SourceChannel::RgbRed).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 10));
        assert!(matches!(
            decode_image(&bytes, "rgb", SourceChannel::Nir),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn tiny_image_rejected() {
        let bytes = encode_pgm(8, 8, &[0; 64]);
        assert!(matches!(
            decode_image(&bytes, "t", SourceChannel::Nir),
            Err(ImageError::DimensionTooSmall { width: 8, height: 8 })
        ));
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(
            decode_image(b"GIF89a", "g", SourceChannel::Nir),
            Err(ImageError::UnsupportedFormat(_))
        ));
        let mut bytes = encode_pgm(64, 64, &[1; 64 * 64]);
        bytes.truncate(100);
        assert!(matches!(
            decode_image(&bytes, "p", SourceChannel::Nir),
            Err(ImageError::CorruptFile(_))
        ));
        assert!(matches!(
            decode_image(b"\x89PNG\r\n\x1a\nbroken", "p", SourceChannel::Nir),
            Err(ImageError::CorruptFile(_))
        ));
    }

    #[test]
    fn pgm_with_comment_and_png_roundtrip() {
        let mut bytes = b"P5\n# scanner\n64 64\n255\n".to_vec();
        bytes.extend((0..64 * 64).map(|i| (i % 251) as u8));
        let img = decode_image(&bytes, "x", SourceChannel::Nir).unwrap();
        let again = decode_image(&img.encode_png(), "x", SourceChannel::Nir).unwrap();
        assert_eq!(img.pixels(), again.pixels());
    }

    #[test]
    fn loader_is_deterministic() {
        let bytes = encode_pgm(70, 65, &(0..70 * 65).map(|i| (i * 7 % 256) as u8).collect::<Vec<_>>());
        let a = decode_image(&bytes, "a", SourceChannel::Nir).unwrap();
        let b = decode_image(&bytes, "a", SourceChannel::Nir).unwrap();
        assert_eq!(a, b);
    }
}
