//! Rubber-sheet unwrapping of the iris annulus onto a fixed polar grid.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::bitmap::Bitmap;
use crate::geometry::{GeometryError, Segmentation};
use crate::image::{encode_pbm, encode_pgm, IrisImage};

pub const DEFAULT_ROWS: usize = 64;
pub const DEFAULT_COLS: usize = 512;
pub const MIN_ROWS: usize = 8;
pub const MIN_COLS: usize = 64;
/// Share of out-of-frame samples above which the unwrap is rejected.
pub const MAX_OUT_OF_FRAME: f64 = 0.95;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NormalizationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("polar grid {rows}x{cols} below the minimum {MIN_ROWS}x{MIN_COLS}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("{fraction:.3} of polar samples fall outside the image")]
    OutOfFrame { fraction: f64 },
}

/// Unwrapped iris: `rows` radial samples (pupil to limbus) by `cols` angular
/// samples, column `a` at angle `2πa/cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarIris {
    rows: usize,
    cols: usize,
    texture: Vec<f64>,
    pub mask: Bitmap,
}

impl PolarIris {
    pub fn new(rows: usize, cols: usize, texture: Vec<f64>, mask: Bitmap) -> Self {
        assert_eq!(texture.len(), rows * cols, "texture size");
        assert_eq!(mask.dims(), (rows, cols), "mask size");
        Self {
            rows,
            cols,
            texture,
            mask,
        }
    }

    /// Fully usable polar texture built from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let texture = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::new(rows, cols, texture, Bitmap::filled(rows, cols, true))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.texture[row * self.cols + col]
    }

    pub fn texture(&self) -> &[f64] {
        &self.texture
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.texture[row * self.cols..(row + 1) * self.cols]
    }

    /// Circular shift along the angle: `out[r][c] = self[r][(c - shift) mod cols]`,
    /// i.e. the effect of rotating the eye by `shift` columns.
    pub fn rotated(&self, shift: i64) -> PolarIris {
        let cols = self.cols as i64;
        let src = |c: usize| (c as i64 - shift).rem_euclid(cols) as usize;
        let texture = (0..self.rows * self.cols)
            .map(|i| self.texture[(i / self.cols) * self.cols + src(i % self.cols)])
            .collect();
        let mask = Bitmap::from_fn(self.rows, self.cols, |r, c| self.mask.get(r, src(c)));
        PolarIris::new(self.rows, self.cols, texture, mask)
    }

    pub fn map_texture(&self, f: impl Fn(f64) -> f64) -> PolarIris {
        PolarIris::new(
            self.rows,
            self.cols,
            self.texture.iter().map(|&v| f(v)).collect(),
            self.mask.clone(),
        )
    }

    /// Texture as PGM and mask as PBM, for inspection.
    pub fn debug_dump(&self) -> (Vec<u8>, Vec<u8>) {
        let px: Vec<u8> = self
            .texture
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        (encode_pgm(self.cols, self.rows, &px), encode_pbm(&self.mask))
    }
}

/// Samples the annulus on a `rows x cols` grid. Row `i` lies at fraction
/// `(i + 0.5) / rows` of the way from the pupil to the iris boundary along
/// the segment joining the two boundary points at the same angle; pixel
/// values are interpolated bilinearly and a mask bit is set only when all
/// four interpolation neighbours are in frame and usable.
pub fn rubber_sheet(
    img: &IrisImage,
    seg: &Segmentation,
    rows: usize,
    cols: usize,
) -> Result<PolarIris, NormalizationError> {
    seg.validate_for(img.width(), img.height())?;
    if rows < MIN_ROWS || cols < MIN_COLS {
        return Err(NormalizationError::GridTooSmall { rows, cols });
    }
    let mut texture = vec![0.0; rows * cols];
    let mut mask = Bitmap::new(rows, cols);
    let mut outside = 0usize;
    for a in 0..cols {
        let theta = TAU * a as f64 / cols as f64;
        let (px, py) = seg.pupil.point_at(theta);
        let (ix, iy) = seg.iris.point_at(theta);
        for r in 0..rows {
            let t = (r as f64 + 0.5) / rows as f64;
            let x = px + t * (ix - px);
            let y = py + t * (iy - py);
            match img.bilinear(x, y) {
                Some((v, neighbours)) => {
                    texture[r * cols + a] = v;
                    if neighbours.iter().all(|&(nx, ny)| seg.usable(nx, ny)) {
                        mask.set(r, a, true);
                    }
                }
                None => outside += 1,
            }
        }
    }
    let fraction = outside as f64 / (rows * cols) as f64;
    if fraction > MAX_OUT_OF_FRAME {
        return Err(NormalizationError::OutOfFrame { fraction });
    }
    Ok(PolarIris::new(rows, cols, texture, mask))
}

/// Share of usable polar samples.
pub fn polar_mask_coverage(p: &PolarIris) -> f64 {
    p.mask.coverage()
}
