//! Pipeline parameters and their flat `key = value` text form.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::backproject::BackprojectParams;
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::patch::{format_transforms, parse_transforms, FeatureWeights, Transform, MAX_PATCH_WIDTH, MIN_PATCH_WIDTH};
use crate::resample::{Interpolation, DEFAULT_SIGMA_RATIO};

pub const MIN_FACTOR: usize = 2;
pub const MAX_FACTOR: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub factor: usize,
    pub method: Interpolation,
    pub patch_size: usize,
    pub overlap: usize,
    pub weights: FeatureWeights,
    /// `None` means `0.5 * patch_size^2`.
    pub epsilon: Option<f32>,
    pub metric: Metric,
    pub transforms: Vec<Transform>,
    pub k: usize,
    pub smooth_weight: f64,
    pub backproject: BackprojectParams,
    pub equalize: bool,
    pub equalize_radius: f64,
    pub contrast_c: Option<f32>,
    pub blur_sigma_ratio: f64,
    pub dump_intermediates: Option<PathBuf>,
    /// 0 uses every available core.
    pub threads: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            factor: 2,
            method: Interpolation::Bicubic,
            patch_size: 8,
            overlap: 4,
            weights: FeatureWeights::default(),
            epsilon: None,
            metric: Metric::L1,
            transforms: Transform::ALL.to_vec(),
            k: 5,
            smooth_weight: 1.0,
            backproject: BackprojectParams::default(),
            equalize: false,
            equalize_radius: 8.0,
            contrast_c: None,
            blur_sigma_ratio: DEFAULT_SIGMA_RATIO,
            dump_intermediates: None,
            threads: 0,
            seed: 0,
        }
    }
}

/// Every key accepted by [`PipelineConfig::set`], in `to_kv` order.
pub const KEYS: &[&str] = &[
    "factor",
    "method",
    "patch-size",
    "overlap",
    "w-edge",
    "w-lum",
    "w-chroma",
    "epsilon",
    "metric",
    "transforms",
    "k",
    "smooth-weight",
    "bp-lambda",
    "bp-iters",
    "bp-tol",
    "equalize",
    "equalize-radius",
    "contrast-c",
    "blur-sigma-ratio",
    "dump-intermediates",
    "threads",
    "seed",
];

fn parse<T: FromStr>(key: &'static str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::param(key, format!("`{v}`: {e}")))
}

fn parse_bool(key: &'static str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::param(key, format!("`{v}` is not a boolean"))),
    }
}

fn optional<T: FromStr>(key: &'static str, v: &str, none: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if v == none {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

impl PipelineConfig {
    pub fn epsilon_value(&self) -> f32 {
        self.epsilon
            .unwrap_or(0.5 * (self.patch_size * self.patch_size) as f32)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let key = KEYS
            .iter()
            .copied()
            .find(|k| *k == key.trim())
            .ok_or_else(|| Error::param("config", format!("unknown key `{}`", key.trim())))?;
        match key {
            "factor" => self.factor = parse(key, v)?,
            "method" => self.method = parse(key, v)?,
            "patch-size" => self.patch_size = parse(key, v)?,
            "overlap" => self.overlap = parse(key, v)?,
            "w-edge" => self.weights.edge = parse(key, v)?,
            "w-lum" => self.weights.lum = parse(key, v)?,
            "w-chroma" => self.weights.chroma = parse(key, v)?,
            "epsilon" => self.epsilon = optional(key, v, "auto")?,
            "metric" => self.metric = parse(key, v)?,
            "transforms" => self.transforms = parse_transforms(v)?,
            "k" => self.k = parse(key, v)?,
            "smooth-weight" => self.smooth_weight = parse(key, v)?,
            "bp-lambda" => self.backproject.lambda = parse(key, v)?,
            "bp-iters" => self.backproject.max_iterations = parse(key, v)?,
            "bp-tol" => self.backproject.tolerance = parse(key, v)?,
            "equalize" => self.equalize = parse_bool(key, v)?,
            "equalize-radius" => self.equalize_radius = parse(key, v)?,
            "contrast-c" => self.contrast_c = optional(key, v, "none")?,
            "blur-sigma-ratio" => {
                self.blur_sigma_ratio = parse(key, v)?;
                self.backproject.sigma_ratio = self.blur_sigma_ratio;
            }
            "dump-intermediates" => {
                self.dump_intermediates = if v == "none" { None } else { Some(PathBuf::from(v)) }
            }
            "threads" => self.threads = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            _ => unreachable!("key table and match disagree"),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "factor" => self.factor.to_string(),
            "method" => self.method.to_string(),
            "patch-size" => self.patch_size.to_string(),
            "overlap" => self.overlap.to_string(),
            "w-edge" => self.weights.edge.to_string(),
            "w-lum" => self.weights.lum.to_string(),
            "w-chroma" => self.weights.chroma.to_string(),
            "epsilon" => self.epsilon.map_or("auto".into(), |e| e.to_string()),
            "metric" => self.metric.to_string(),
            "transforms" => format_transforms(&self.transforms),
            "k" => self.k.to_string(),
            "smooth-weight" => self.smooth_weight.to_string(),
            "bp-lambda" => self.backproject.lambda.to_string(),
            "bp-iters" => self.backproject.max_iterations.to_string(),
            "bp-tol" => self.backproject.tolerance.to_string(),
            "equalize" => self.equalize.to_string(),
            "equalize-radius" => self.equalize_radius.to_string(),
            "contrast-c" => self.contrast_c.map_or("none".into(), |c| c.to_string()),
            "blur-sigma-ratio" => self.blur_sigma_ratio.to_string(),
            "dump-intermediates" => self
                .dump_intermediates
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
            "threads" => self.threads.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// One `key = value` line per key.
    pub fn to_kv(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                reason: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(k, v).map_err(|e| Error::Config {
                line: n + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_FACTOR..=MAX_FACTOR).contains(&self.factor) {
            return Err(Error::param(
                "factor",
                format!("{} is outside {MIN_FACTOR}..={MAX_FACTOR}", self.factor),
            ));
        }
        if !(MIN_PATCH_WIDTH..=MAX_PATCH_WIDTH).contains(&self.patch_size) {
            return Err(Error::param(
                "patch-size",
                format!("{} is outside {MIN_PATCH_WIDTH}..={MAX_PATCH_WIDTH}", self.patch_size),
            ));
        }
        if self.overlap >= self.patch_size {
            return Err(Error::param("overlap", "must be smaller than the patch size"));
        }
        self.weights.validate()?;
        if let Some(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::param("epsilon", format!("{e} is not a finite non-negative value")));
            }
        }
        if self.transforms.is_empty() {
            return Err(Error::param("transforms", "at least one transform is required"));
        }
        if self.k == 0 {
            return Err(Error::param("k", "must be at least 1"));
        }
        if !(self.smooth_weight >= 0.0 && self.smooth_weight.is_finite()) {
            return Err(Error::param("smooth-weight", "must be finite and non-negative"));
        }
        self.backproject.validate()?;
        if !(self.equalize_radius > 0.0 && self.equalize_radius.is_finite()) {
            return Err(Error::param("equalize-radius", "must be positive"));
        }
        if let Some(c) = self.contrast_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::param("contrast-c", "must be positive"));
            }
        }
        if !(self.blur_sigma_ratio > 0.0 && self.blur_sigma_ratio.is_finite()) {
            return Err(Error::param("blur-sigma-ratio", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = PipelineConfig::default();
        let text = d.to_kv();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(PipelineConfig::from_kv(&text).unwrap(), d);
        assert_eq!(d.epsilon_value(), 32.0);
    }

    #[test]
    fn non_default_round_trip() {
        let mut c = PipelineConfig::default();
        c.apply_kv(
            "# comment\nfactor = 3\nmethod=bilinear\nepsilon = 4.5\ntransforms = identity,rot180\n\
             contrast-c = 10\nequalize = on\ndump-intermediates = /tmp/x\nmetric = l2\nblur-sigma-ratio = 0.4\n",
        )
        .unwrap();
        assert_eq!(c.factor, 3);
        assert_eq!(c.method, Interpolation::Bilinear);
        assert_eq!(c.epsilon_value(), 4.5);
        assert_eq!(c.backproject.sigma_ratio, 0.4);
        assert_eq!(PipelineConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn errors_name_line_and_key() {
        let err = PipelineConfig::from_kv("factor = 2\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
        assert!(PipelineConfig::from_kv("factor 2").is_err());
        assert!(PipelineConfig::from_kv("factor = 5").is_err());
        assert!(PipelineConfig::from_kv("factor = 1").is_err());
        assert!(PipelineConfig::from_kv("k = 0").is_err());
        assert!(PipelineConfig::from_kv("overlap = 8").is_err());
        assert!(PipelineConfig::from_kv("bp-lambda = 2").is_err());
        assert!(PipelineConfig::from_kv("epsilon = -1").is_err());
    }
}
