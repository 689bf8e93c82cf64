//! `--config` files: one `key = value` per line, `#` starts a comment.
//!
//! | key | meaning |
//! |---|---|
//! | `pupil_r_min`, `pupil_r_max` | pupil radius search range (px) |
//! | `iris_r_min`, `iris_r_max` | iris radius search range (px) |
//! | `gradient_threshold` | minimum edge magnitude |
//! | `accumulator_step` | coarse Hough radius step (px) |
//! | `contrast_gamma` | contrast adjustment before edge detection |
//! | `polar_rows`, `polar_cols` | rubber-sheet grid |
//! | `gabor_wavelengths` | comma list, polar columns |
//! | `gabor_orientations` | comma list, degrees |
//! | `gabor_sigma_ratio`, `gabor_radial_sigma_ratio` | envelope widths |
//! | `gabor_stride` | `radial,angular` sampling stride |
//! | `loggabor_wavelength`, `loggabor_sigma_on_f` | 1-D log-Gabor filter |
//! | `bif_kernels` | kernel bank file |
//! | `max_shift`, `overlap_floor` | matcher |
//! | `seed`, `jobs` | same as the flags |
//!
//! `--set key=value` flags are applied after the file, and `--seed` /
//! `--jobs` after both.

use std::path::Path;

use anyhow::{bail, Context, Result};
use pmiris_core::encoding::bif::load_kernel_bank;
use pmiris_core::encoding::LogGaborConfig;
use pmiris_core::PipelineConfig;

#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Parses `key = value` lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, found `{line}`", n + 1);
        };
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| anyhow::anyhow!("invalid value `{v}` for `{key}`"))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

impl Settings {
    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "pupil_r_min" => p.hough.pupil_r_range[0] = num(key, v)?,
            "pupil_r_max" => p.hough.pupil_r_range[1] = num(key, v)?,
            "iris_r_min" => p.hough.iris_r_range[0] = num(key, v)?,
            "iris_r_max" => p.hough.iris_r_range[1] = num(key, v)?,
            "gradient_threshold" => p.hough.gradient_threshold = num(key, v)?,
            "accumulator_step" => p.hough.accumulator_step = num(key, v)?,
            "contrast_gamma" => p.hough.contrast_gamma = num(key, v)?,
            "polar_rows" => p.polar_rows = num(key, v)?,
            "polar_cols" => p.polar_cols = num(key, v)?,
            "gabor_wavelengths" => p.gabor.wavelengths = list(key, v)?,
            "gabor_orientations" => p.gabor.orientations = list(key, v)?.into_iter().map(f64::to_radians).collect(),
            "gabor_sigma_ratio" => p.gabor.sigma_ratio = num(key, v)?,
            "gabor_radial_sigma_ratio" => p.gabor.radial_sigma_ratio = num(key, v)?,
            "gabor_stride" => {
                let parts: Vec<usize> = v.split(',').map(|s| num(key, s.trim())).collect::<Result<_>>()?;
                let [r, c] = parts[..] else {
                    bail!("`gabor_stride` takes `radial,angular`, found `{v}`");
                };
                p.gabor.grid_stride = (r, c);
            }
            "loggabor_wavelength" | "loggabor_sigma_on_f" => {
                let cols = p.polar_cols;
                let lg = p.loggabor.get_or_insert_with(|| LogGaborConfig::for_cols(cols));
                if key == "loggabor_wavelength" {
                    lg.center_wavelength = num(key, v)?;
                } else {
                    lg.sigma_on_f = num(key, v)?;
                }
            }
            "bif_kernels" => p.bif = load_kernel_bank(Some(Path::new(v))).with_context(|| format!("loading `{v}`"))?,
            "max_shift" => p.matching.max_shift = num(key, v)?,
            "overlap_floor" => p.matching.overlap_floor = num(key, v)?,
            "seed" => self.seed = Some(num(key, v)?),
            "jobs" => self.jobs = Some(num(key, v)?),
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    pub fn load(config: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (k, v) in parse_pairs(&text).with_context(|| format!("in {}", path.display()))? {
                s.apply(&k, &v).with_context(|| format!("in {}", path.display()))?;
            }
        }
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set expects key=value, found `{o}`");
            };
            s.apply(k.trim(), v.trim())?;
        }
        s.pipeline.validate()?;
        Ok(s)
    }
}
