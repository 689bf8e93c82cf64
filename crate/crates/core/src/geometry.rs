//! Circle model for pupil and iris boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmap::Bitmap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, r: f64) -> Self {
        Self { cx, cy, r }
    }

    pub fn center_distance(&self, other: &Circle) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).hypot(y - self.cy) <= self.r
    }

    /// Point on the circle at `angle` radians (image coordinates, y down).
    #[inline]
    pub fn point_at(&self, angle: f64) -> (f64, f64) {
        (self.cx + self.r * angle.cos(), self.cy + self.r * angle.sin())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("pupil radius {pupil} must be positive and smaller than iris radius {iris}")]
    DegenerateGeometry { pupil: f64, iris: f64 },
    #[error("pupil center lies outside the iris circle")]
    PupilOutsideIris,
    #[error("occlusion mask is {mask_w}x{mask_h}, image is {img_w}x{img_h}")]
    MaskDimensions {
        mask_w: usize,
        mask_h: usize,
        img_w: usize,
        img_h: usize,
    },
}

/// Pupil and iris boundaries plus an optional occlusion mask.
///
/// The mask has one bit per image pixel (`rows == height`, `cols == width`);
/// a set bit marks usable iris texture.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub pupil: Circle,
    pub iris: Circle,
    pub occlusion_mask: Option<Bitmap>,
}

impl Segmentation {
    pub fn new(pupil: Circle, iris: Circle) -> Result<Self, GeometryError> {
        let seg = Self {
            pupil,
            iris,
            occlusion_mask: None,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.pupil.r > 0.0 && self.pupil.r < self.iris.r) {
            return Err(GeometryError::DegenerateGeometry {
                pupil: self.pupil.r,
                iris: self.iris.r,
            });
        }
        if !self.iris.contains(self.pupil.cx, self.pupil.cy) {
            return Err(GeometryError::PupilOutsideIris);
        }
        Ok(())
    }

    pub fn validate_for(&self, width: usize, height: usize) -> Result<(), GeometryError> {
        self.validate()?;
        if let Some(mask) = &self.occlusion_mask {
            if mask.dims() != (height, width) {
                return Err(GeometryError::MaskDimensions {
                    mask_w: mask.cols(),
                    mask_h: mask.rows(),
                    img_w: width,
                    img_h: height,
                });
            }
        }
        Ok(())
    }

    /// Whether pixel `(x, y)` is usable according to the occlusion mask
    /// (always true without a mask).
    #[inline]
    pub fn usable(&self, x: usize, y: usize) -> bool {
        self.occlusion_mask.as_ref().is_none_or(|m| m.get(y, x))
    }

    pub fn to_json(&self, mask_path: Option<&str>) -> SegmentationJson {
        SegmentationJson {
            pupil: self.pupil,
            iris: self.iris,
            mask_path: mask_path.map(str::to_owned),
        }
    }
}

/// Interchange form: `{"pupil":{..},"iris":{..},"mask_path":..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationJson {
    pub pupil: Circle,
    pub iris: Circle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

impl SegmentationJson {
    /// Circles only; the caller resolves `mask_path`.
    pub fn to_segmentation(&self) -> Result<Segmentation, GeometryError> {
        Segmentation::new(self.pupil, self.iris)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_radii() {
        let err = Segmentation::new(Circle::new(0.0, 0.0, 50.0), Circle::new(0.0, 0.0, 50.0));
        assert!(matches!(err, Err(GeometryError::DegenerateGeometry { .. })));
    }

    #[test]
    fn json_shape() {
        let seg = Segmentation::new(Circle::new(1.0, 2.0, 3.0), Circle::new(1.0, 2.0, 9.0)).unwrap();
        let v = serde_json::to_value(seg.to_json(None)).unwrap();
        assert_eq!(v["pupil"]["r"], 3.0);
        assert!(v.get("mask_path").is_none());
    }
}
