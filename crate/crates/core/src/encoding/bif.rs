//! Binarised image features from a bank of zero-mean kernels.
//!
//! Kernel banks are loaded from a text file:
//!
//! ```text
//! k n
//! <k lines of k decimals>   # kernel 1
//! ...                       # kernels 2..n
//! ```
//!
//! Without a file a deterministic fallback bank is generated: smoothed,
//! windowed Gaussian noise, made zero-mean and orthonormalised.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DigestBuilder, EncoderId, EncodingError, ZERO_RESPONSE_EPS};
use crate::bitmap::Bitmap;
use crate::normalization::PolarIris;
use crate::template::{IrisTemplate, ParamsDigest};

pub const MAX_KERNELS: usize = 32;
pub const ZERO_MEAN_TOLERANCE: f64 = 1e-6;

const FALLBACK_SEED: u64 = 0x5eed_b1f0;
const FALLBACK_SIZE: usize = 17;
const FALLBACK_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSource {
    File,
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    size: usize,
    /// Row-major `size x size` kernels.
    kernels: Vec<Vec<f64>>,
    pub source: KernelSource,
}

impl KernelBank {
    pub fn new(size: usize, kernels: Vec<Vec<f64>>, source: KernelSource) -> Result<Self, EncodingError> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(EncodingError::BadKernelFile(format!("kernel size {size} must be odd")));
        }
        if kernels.is_empty() || kernels.len() > MAX_KERNELS {
            return Err(EncodingError::BadKernelFile(format!(
                "{} kernels (1..={MAX_KERNELS} allowed)",
                kernels.len()
            )));
        }
        for (index, k) in kernels.iter().enumerate() {
            if k.len() != size * size {
                return Err(EncodingError::BadKernelFile(format!(
                    "kernel {index} has {} values",
                    k.len()
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(EncodingError::BadKernelFile(format!(
                    "kernel {index} has non-finite values"
                )));
            }
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            if mean.abs() > ZERO_MEAN_TOLERANCE {
                return Err(EncodingError::NonZeroMeanKernel { index, mean });
            }
        }
        Ok(Self { size, kernels, source })
    }

    /// Deterministic 8 x 17 x 17 bank.
    pub fn fallback() -> Self {
        let k = FALLBACK_SIZE;
        let mut rng = ChaCha8Rng::seed_from_u64(FALLBACK_SEED);
        let h = (k / 2) as f64;
        let window: Vec<f64> = (0..k * k)
            .map(|i| {
                let (y, x) = ((i / k) as f64 - h, (i % k) as f64 - h);
                (-(x * x + y * y) / (2.0 * (k as f64 / 4.0).powi(2))).exp()
            })
            .collect();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(FALLBACK_COUNT);
        while basis.len() < FALLBACK_COUNT {
            let noise: Vec<f64> = (0..k * k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut v: Vec<f64> = smooth(&noise, k, 2.0).iter().zip(&window).map(|(a, w)| a * w).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            // Gram-Schmidt; combinations of zero-mean vectors stay zero-mean
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        Self::new(k, basis, KernelSource::Fallback).expect("fallback bank is valid")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bit_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels(&self) -> &[Vec<f64>] {
        &self.kernels
    }

    pub fn digest(&self) -> ParamsDigest {
        let mut d = DigestBuilder::new(EncoderId::Bif).usize(self.size);
        for k in &self.kernels {
            d = d.f64s(k);
        }
        d.finish()
    }

    pub fn parse(text: &str) -> Result<Self, EncodingError> {
        let bad = |m: String| EncodingError::BadKernelFile(m);
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad header token `{t}`"))))
            .collect::<Result<_, _>>()?;
        let [k, n] = nums[..] else {
            return Err(bad(format!("header `{header}` must be `k n`")));
        };
        let mut kernels = Vec::with_capacity(n);
        for idx in 0..n {
            let mut values = Vec::with_capacity(k * k);
            for row in 0..k {
                let line = lines
                    .next()
                    .ok_or_else(|| bad(format!("kernel {idx}: missing row {row}")))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad(format!("kernel {idx}: bad value `{t}`"))))
                    .collect::<Result<_, _>>()?;
                if vals.len() != k {
                    return Err(bad(format!(
                        "kernel {idx} row {row}: {} values, expected {k}",
                        vals.len()
                    )));
                }
                values.extend(vals);
            }
            kernels.push(values);
        }
        if lines.next().is_some() {
            return Err(bad("trailing data after last kernel".into()));
        }
        Self::new(k, kernels, KernelSource::File)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.size, self.kernels.len());
        for k in &self.kernels {
            for row in k.chunks(self.size) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
        }
        s
    }
}

/// Loads a bank from `path`, or the fallback bank when `path` is `None`.
pub fn load_kernel_bank(path: Option<&Path>) -> Result<KernelBank, EncodingError> {
    match path {
        None => Ok(KernelBank::fallback()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| EncodingError::BadKernelFile(format!("{}: {e}", p.display())))?;
            KernelBank::parse(&text)
        }
    }
}

fn smooth(v: &[f64], k: usize, sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; k * k];
        for y in 0..k {
            for x in 0..k {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (i, &t) in taps.iter().enumerate() {
                    let d = i as isize - radius;
                    let (sx, sy) = if horizontal {
                        (x as isize + d, y as isize)
                    } else {
                        (x as isize, y as isize + d)
                    };
                    if (0..k as isize).contains(&sx) && (0..k as isize).contains(&sy) {
                        acc += t * src[sy as usize * k + sx as usize];
                        wsum += t;
                    }
                }
                out[y * k + x] = acc / wsum;
            }
        }
        out
    };
    pass(&pass(v, true), false)
}

/// Kernel responses (one `rows x cols` map per kernel). Correlation without
/// kernel flip; columns wrap, rows are clamped.
pub fn bif_responses(p: &PolarIris, bank: &KernelBank) -> Vec<Vec<f64>> {
    let (rows, cols) = (p.rows(), p.cols());
    let k = bank.size;
    let h = (k / 2) as isize;
    // padded texture: rows clamped, columns wrapped
    let pw = cols + k - 1;
    let ph = rows + k - 1;
    let mut padded = vec![0.0; pw * ph];
    for y in 0..ph {
        let sr = (y as isize - h).clamp(0, rows as isize - 1) as usize;
        for x in 0..pw {
            let sc = (x as isize - h).rem_euclid(cols as isize) as usize;
            padded[y * pw + x] = p.at(sr, sc);
        }
    }
    bank.kernels
        .iter()
        .map(|kern| {
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    let mut acc = 0.0;
                    for i in 0..k {
                        let prow = &padded[(r + i) * pw + c..(r + i) * pw + c + k];
                        let krow = &kern[i * k..(i + 1) * k];
                        acc += prow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    out[r * cols + c] = acc;
                }
            }
            out
        })
        .collect()
}

pub fn encode_bif(p: &PolarIris, bank: &KernelBank) -> Result<IrisTemplate, EncodingError> {
    let (rows, cols) = (p.rows(), p.cols());
    let k = bank.size;
    if k > rows.min(cols) {
        return Err(EncodingError::KernelLargerThanGrid { kernel: k, rows, cols });
    }
    let responses = bif_responses(p, bank);
    let eroded = erode(&p.mask, k / 2);
    let mut mask = Bitmap::new(rows, cols);
    let mut planes = vec![Bitmap::new(rows, cols); bank.bit_count()];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let mut valid = eroded.get(r, c);
            for (plane, resp) in planes.iter_mut().zip(&responses) {
                plane.set(r, c, resp[i] > 0.0);
                if resp[i].abs() < ZERO_RESPONSE_EPS {
                    valid = false;
                }
            }
            mask.set(r, c, valid);
        }
    }
    Ok(IrisTemplate::new(EncoderId::Bif, planes, mask, bank.digest()).expect("consistent template"))
}

/// A sample stays usable only if every in-range sample of its
/// `(2h+1) x (2h+1)` window is usable (columns wrap).
fn erode(mask: &Bitmap, h: usize) -> Bitmap {
    let (rows, cols) = mask.dims();
    // horizontal pass
    let mut horiz = Bitmap::new(rows, cols);
    for r in 0..rows {
        let bad: Vec<bool> = (0..cols).map(|c| !mask.get(r, c)).collect();
        let span = (2 * h + 1).min(cols);
        let mut count = (0..span).filter(|&d| bad[(d + cols - h % cols) % cols]).count();
        for c in 0..cols {
            horiz.set(r, c, count == 0);
            let leaving = (c + cols - h % cols) % cols;
            let entering = (c + span - h % cols + cols) % cols;
            count -= bad[leaving] as usize;
            count += bad[entering] as usize;
        }
    }
    Bitmap::from_fn(rows, cols, |r, c| {
        let lo = r.saturating_sub(h);
        let hi = (r + h).min(rows - 1);
        (lo..=hi).all(|rr| horiz.get(rr, c))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::test_support::random_polar;

    #[test]
    fn fallback_is_deterministic_and_orthonormal() {
        let a = KernelBank::fallback();
        let b = KernelBank::fallback();
        assert_eq!(a, b);
        assert_eq!((a.size(), a.bit_count()), (17, 8));
        assert_eq!(a.source, KernelSource::Fallback);
        for (i, ki) in a.kernels().iter().enumerate() {
            for (j, kj) in a.kernels().iter().enumerate() {
                let d: f64 = ki.iter().zip(kj).map(|(x, y)| x * y).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn parse_file_bank() {
        let text = KernelBank::fallback().to_text();
        let bank = KernelBank::parse(&text).unwrap();
        assert_eq!(bank.bit_count(), 8);
        assert_eq!(bank.source, KernelSource::File);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.txt");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(load_kernel_bank(Some(&path)).unwrap().bit_count(), 8);
        assert_eq!(load_kernel_bank(None).unwrap(), KernelBank::fallback());
    }

    #[test]
    fn non_zero_mean_rejected() {
        let text = "3 1\n0.5 0.5 0.5\n0.5 0.5 0.5\n0.5 0.5 0.5\n";
        assert!(matches!(
            KernelBank::parse(text),
            Err(EncodingError::NonZeroMeanKernel { index: 0, .. })
        ));
        assert!(matches!(
            KernelBank::parse("3 1\n1 2\n"),
            Err(EncodingError::BadKernelFile(_))
        ));
        assert!(matches!(
            KernelBank::parse("4 1\n"),
            Err(EncodingError::BadKernelFile(_))
        ));
    }

    fn identity_minus_mean() -> KernelBank {
        let mut k = vec![-1.0 / 9.0; 9];
        k[4] += 1.0;
        KernelBank::new(3, vec![k], KernelSource::File).unwrap()
    }

    #[test]
    fn constant_texture_gives_zero_bits() {
        let p = PolarIris::from_fn(16, 64, |_, _| 120.0);
        let t = encode_bif(&p, &identity_minus_mean()).unwrap();
        assert_eq!(t.bitplanes.len(), 1);
        assert_eq!(t.bitplanes[0].count_ones(), 0);
        assert_eq!(t.mask.count_ones(), 0);
    }

    #[test]
    fn negation_flips_valid_bits() {
        let bank = KernelBank::fallback();
        for seed in 0..10u64 {
            let p = random_polar(32, 256, seed, true);
            let a = encode_bif(&p, &bank).unwrap();
            let b = encode_bif(&p.map_texture(|v| -v), &bank).unwrap();
            assert_eq!(a.bitplanes.len(), bank.bit_count());
            assert_eq!(a.mask, b.mask);
            for (pa, pb) in a.bitplanes.iter().zip(&b.bitplanes) {
                let flipped = pa.and(&a.mask).count_ones() + pb.and(&a.mask).count_ones();
                assert_eq!(flipped, a.mask.count_ones());
            }
        }
    }

    #[test]
    fn circular_shift_equivariance() {
        let bank = KernelBank::fallback();
        for seed in 0..100u64 {
            let p = random_polar(24, 256, seed, true);
            let s = (seed as i64 * 13) % 61 - 30;
            let a = encode_bif(&p, &bank).unwrap();
            let b = encode_bif(&p.rotated(s), &bank).unwrap();
            assert_eq!(b.mask.rotate_cols(s), a.mask, "seed {seed}");
            for (pa, pb) in a.bitplanes.iter().zip(&b.bitplanes) {
                assert_eq!(&pb.rotate_cols(s), pa, "seed {seed}");
            }
        }
    }

    #[test]
    fn erosion_matches_naive() {
        let p = random_polar(20, 70, 5, true);
        let h = 3usize;
        let e = erode(&p.mask, h);
        for r in 0..20usize {
            for c in 0..70usize {
                let naive = (r.saturating_sub(h)..=(r + h).min(19)).all(|rr| {
                    (-(h as isize)..=h as isize).all(|d| p.mask.get(rr, (c as isize + d).rem_euclid(70) as usize))
                });
                assert_eq!(e.get(r, c), naive, "({r},{c})");
            }
        }
    }

    #[test]
    fn kernel_larger_than_grid() {
        let p = PolarIris::from_fn(8, 64, |_, c| c as f64);
        assert!(matches!(
            encode_bif(&p, &KernelBank::fallback()),
            Err(EncodingError::KernelLargerThanGrid { .. })
        ));
    }
}
