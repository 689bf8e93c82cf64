//! Image quality metrics in the style of ISO/IEC 29794-6 and the pair
//! features used for quality density plots.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Segmentation};
use crate::image::IrisImage;
use crate::segmentation::in_annulus;

/// Laplacian variance at which SHARPNESS reaches 50.
pub const SHARPNESS_CONSTANT: f64 = 1800.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QualityError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("metric {0} is absent from at least one record")]
    MetricAbsent(QualityMetric),
    #[error("no pairs to bin")]
    EmptyInput,
    #[error("bin counts must be positive")]
    BadBins,
}

/// Metrics that need iris pixels are `None` when the usable area is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub struct QualityRecord {
    pub usable_iris_area: f64,
    pub iris_sclera_contrast: Option<f64>,
    pub gray_scale_utilization: Option<f64>,
    pub iris_radius: f64,
    pub pupil_iris_ratio: f64,
    pub iris_pupil_concentricity: f64,
    pub sharpness: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QualityMetric {
    UsableIrisArea,
    IrisScleraContrast,
    GrayScaleUtilization,
    IrisRadius,
    PupilIrisRatio,
    IrisPupilConcentricity,
    Sharpness,
}

impl QualityMetric {
    pub const ALL: [QualityMetric; 7] = [
        QualityMetric::UsableIrisArea,
        QualityMetric::IrisScleraContrast,
        QualityMetric::GrayScaleUtilization,
        QualityMetric::IrisRadius,
        QualityMetric::PupilIrisRatio,
        QualityMetric::IrisPupilConcentricity,
        QualityMetric::Sharpness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QualityMetric::UsableIrisArea => "USABLE_IRIS_AREA",
            QualityMetric::IrisScleraContrast => "IRIS_SCLERA_CONTRAST",
            QualityMetric::GrayScaleUtilization => "GRAY_SCALE_UTILIZATION",
            QualityMetric::IrisRadius => "IRIS_RADIUS",
            QualityMetric::PupilIrisRatio => "PUPIL_IRIS_RATIO",
            QualityMetric::IrisPupilConcentricity => "IRIS_PUPIL_CONCENTRICITY",
            QualityMetric::Sharpness => "SHARPNESS",
        }
    }
}

impl fmt::Display for QualityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QualityMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.name() == up)
            .ok_or_else(|| format!("unknown quality metric `{s}`"))
    }
}

impl QualityRecord {
    pub fn get(&self, metric: QualityMetric) -> Option<f64> {
        match metric {
            QualityMetric::UsableIrisArea => Some(self.usable_iris_area),
            QualityMetric::IrisScleraContrast => self.iris_sclera_contrast,
            QualityMetric::GrayScaleUtilization => self.gray_scale_utilization,
            QualityMetric::IrisRadius => Some(self.iris_radius),
            QualityMetric::PupilIrisRatio => Some(self.pupil_iris_ratio),
            QualityMetric::IrisPupilConcentricity => Some(self.iris_pupil_concentricity),
            QualityMetric::Sharpness => self.sharpness,
        }
    }
}

pub fn compute_quality(img: &IrisImage, seg: &Segmentation) -> Result<QualityRecord, QualityError> {
    seg.validate_for(img.width(), img.height())?;
    let (w, h) = (img.width(), img.height());
    let (icx, icy, ri) = (seg.iris.cx, seg.iris.cy, seg.iris.r);

    // Bounding box of the sclera band covers everything we look at.
    let reach = 1.25 * ri + 1.0;
    let x0 = ((icx - reach).floor().max(0.0)) as usize;
    let x1 = ((icx + reach).ceil().max(0.0) as usize).min(w - 1);
    let y0 = ((icy - reach).floor().max(0.0)) as usize;
    let y1 = ((icy + reach).ceil().max(0.0) as usize).min(h - 1);

    let mut annulus = 0usize;
    let mut usable = Vec::new();
    let mut iris_band = Vec::new();
    let mut sclera_band = Vec::new();
    let mut histogram = [0u64; 256];
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (fx, fy) = (x as f64, y as f64);
            let d = (fx - icx).hypot(fy - icy);
            let v = img.get(x, y);
            if (1.05 * ri..=1.25 * ri).contains(&d) {
                sclera_band.push(v);
            }
            if !in_annulus(seg, fx, fy) {
                continue;
            }
            annulus += 1;
            if !seg.usable(x, y) {
                continue;
            }
            usable.push((x, y));
            histogram[v as usize] += 1;
            if d >= 0.8 * ri && d < ri {
                iris_band.push(v);
            }
        }
    }

    let usable_iris_area = if annulus == 0 {
        0.0
    } else {
        100.0 * usable.len() as f64 / annulus as f64
    };

    let iris_sclera_contrast = match (median(&mut iris_band), median(&mut sclera_band)) {
        (Some(mi), Some(ms)) if mi + ms > 0.0 => Some((100.0 * (ms - mi) / (ms + mi)).clamp(0.0, 100.0)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };

    let gray_scale_utilization = (!usable.is_empty()).then(|| entropy(&histogram));
    let sharpness = laplacian_variance(img, &usable).map(|s| 100.0 * s / (s + SHARPNESS_CONSTANT));

    Ok(QualityRecord {
        usable_iris_area,
        iris_sclera_contrast,
        gray_scale_utilization,
        iris_radius: ri,
        pupil_iris_ratio: seg.pupil.r / ri,
        iris_pupil_concentricity: (1.0 - seg.pupil.center_distance(&seg.iris) / ri).clamp(0.0, 1.0),
        sharpness,
    })
}

fn median(v: &mut [u8]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    })
}

fn entropy(histogram: &[u64; 256]) -> f64 {
    let total: u64 = histogram.iter().sum();
    let h: f64 = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Variance of the 4-neighbour Laplacian over interior usable pixels.
fn laplacian_variance(img: &IrisImage, pixels: &[(usize, usize)]) -> Option<f64> {
    let (w, h) = (img.width(), img.height());
    let mut n = 0usize;
    let (mut sum, mut sum2) = (0.0, 0.0);
    for &(x, y) in pixels {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            continue;
        }
        let c = img.get(x, y) as f64;
        let l =
            img.get(x - 1, y) as f64 + img.get(x + 1, y) as f64 + img.get(x, y - 1) as f64 + img.get(x, y + 1) as f64
                - 4.0 * c;
        n += 1;
        sum += l;
        sum2 += l * l;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    Some((sum2 / n as f64 - mean * mean).max(0.0))
}

/// `((f1 + f2) / 2, f1 - f2)` for one metric.
pub fn pair_features(
    f1: &QualityRecord,
    f2: &QualityRecord,
    metric: QualityMetric,
) -> Result<(f64, f64), QualityError> {
    match (f1.get(metric), f2.get(metric)) {
        (Some(a), Some(b)) => Ok(((a + b) / 2.0, a - b)),
        _ => Err(QualityError::MetricAbsent(metric)),
    }
}

/// Normalized 2D histogram over `(avg, diff)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Row-major, `values[iy * nx + ix]`; sums to 1.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }
}

pub fn quality_heatmap_bins(pairs: &[(f64, f64)], bins: (usize, usize)) -> Result<DensityGrid, QualityError> {
    let (nx, ny) = bins;
    if nx == 0 || ny == 0 {
        return Err(QualityError::BadBins);
    }
    if pairs.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    let range = |f: fn(&(f64, f64)) -> f64| {
        pairs
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let x_range = range(|p| p.0);
    let y_range = range(|p| p.1);
    let index = |v: f64, (lo, hi): (f64, f64), n: usize| -> usize {
        if hi <= lo {
            0
        } else {
            (((v - lo) / (hi - lo) * n as f64).floor() as usize).min(n - 1)
        }
    };
    let mut values = vec![0.0; nx * ny];
    let weight = 1.0 / pairs.len() as f64;
    for &(x, y) in pairs {
        values[index(y, y_range, ny) * nx + index(x, x_range, nx)] += weight;
    }
    Ok(DensityGrid {
        nx,
        ny,
        x_range,
        y_range,
        values,
    })
}
