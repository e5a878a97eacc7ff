//! Enlargement, reduction, Gaussian blur and the band-pass / contrast
//! filters built on them.
//!
//! All operations are separable and plane-wise. Pixel centers sit at
//! `(i + 0.5) / n` in normalized coordinates for every resampler, and every
//! out-of-range tap reads a half-sample mirror reflection of the image.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Default ratio between Gaussian sigma and the blur radius.
pub const DEFAULT_SIGMA_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Interpolation {
    Nearest,
    Bilinear,
    #[default]
    Bicubic,
}

impl Interpolation {
    pub const ALL: [Interpolation; 3] = [
        Interpolation::Nearest,
        Interpolation::Bilinear,
        Interpolation::Bicubic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Bilinear => "bilinear",
            Interpolation::Bicubic => "bicubic",
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "bilinear" => Ok(Interpolation::Bilinear),
            "bicubic" => Ok(Interpolation::Bicubic),
            other => Err(Error::param(
                "method",
                format!("`{other}` is not one of nearest, bilinear, bicubic"),
            )),
        }
    }
}

/// Symmetric, odd-length filter kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel1D {
    taps: Vec<f64>,
}

impl Kernel1D {
    /// Normalized Gaussian with `sigma = radius * sigma_ratio`, truncated at
    /// `ceil(2 * sigma)` taps on each side.
    pub fn gaussian(radius: f64, sigma_ratio: f64) -> Result<Self> {
        if !(radius >= 1.0) {
            return Err(Error::param("radius", format!("{radius} < 1")));
        }
        if !(sigma_ratio > 0.0) {
            return Err(Error::param("sigma ratio", format!("{sigma_ratio} <= 0")));
        }
        let sigma = radius * sigma_ratio;
        let half = (2.0 * sigma).ceil() as i64;
        let mut taps: Vec<f64> = (-half..=half)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        Ok(Kernel1D { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        (self.taps.len() - 1) / 2
    }
}

/// Half-sample symmetric reflection of an arbitrary index into `0..n`.
#[inline]
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let k = i.rem_euclid(period);
    (if k >= n { period - 1 - k } else { k }) as usize
}

/// Precomputed taps for resampling one axis.
#[derive(Debug, Clone)]
struct AxisTaps {
    out_len: usize,
    taps: usize,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl AxisTaps {
    fn build(out_len: usize, taps: usize, mut f: impl FnMut(usize, &mut Vec<(i64, f64)>)) -> Self {
        let mut index = Vec::with_capacity(out_len * taps);
        let mut weight = Vec::with_capacity(out_len * taps);
        let mut scratch = Vec::with_capacity(taps);
        for i in 0..out_len {
            scratch.clear();
            f(i, &mut scratch);
            debug_assert_eq!(scratch.len(), taps);
            for &(j, w) in &scratch {
                index.push(j as usize);
                weight.push(w);
            }
        }
        AxisTaps {
            out_len,
            taps,
            index,
            weight,
        }
    }

    fn convolution(len: usize, kernel: &Kernel1D) -> Self {
        let r = kernel.radius() as i64;
        AxisTaps::build(len, kernel.taps.len(), |i, out| {
            for (k, &w) in kernel.taps.iter().enumerate() {
                out.push((reflect(i as i64 + k as i64 - r, len) as i64, w));
            }
        })
    }

    fn enlarge(in_len: usize, factor: usize, method: Interpolation) -> Self {
        let out_len = in_len * factor;
        let f = factor as i64;
        // Source coordinate of output pixel i is (2i + 1 - F) / 2F.
        let source = move |i: usize| -> (i64, f64) {
            let num = 2 * i as i64 + 1 - f;
            let den = 2 * f;
            let base = num.div_euclid(den);
            let t = num.rem_euclid(den) as f64 / den as f64;
            (base, t)
        };
        match method {
            Interpolation::Nearest => AxisTaps::build(out_len, 1, |i, out| {
                out.push(((i / factor) as i64, 1.0));
            }),
            Interpolation::Bilinear => AxisTaps::build(out_len, 2, |i, out| {
                let (base, t) = source(i);
                out.push((reflect(base, in_len) as i64, 1.0 - t));
                out.push((reflect(base + 1, in_len) as i64, t));
            }),
            Interpolation::Bicubic => AxisTaps::build(out_len, 4, |i, out| {
                let (base, t) = source(i);
                for k in -1..=2i64 {
                    let w = catmull_rom((k as f64 - t).abs());
                    out.push((reflect(base + k, in_len) as i64, w));
                }
            }),
        }
    }

    fn reduce(in_len: usize, factor: usize, sigma_ratio: f64) -> Self {
        let out_len = in_len / factor;
        let sigma = factor as f64 * sigma_ratio;
        let support = (2.0 * sigma).ceil();
        // Offsets from an output center to input centers are the same for
        // every output pixel, so the tap pattern is computed once.
        let f = factor as i64;
        let lo = (-support - 0.5 + (f as f64) / 2.0).floor() as i64;
        let hi = (support - 0.5 + (f as f64) / 2.0).ceil() as i64;
        let mut rel: Vec<(i64, f64)> = Vec::new();
        for j in lo..=hi {
            // Input center j + 0.5 relative to output center F/2.
            let d = j as f64 + 0.5 - f as f64 / 2.0;
            if d.abs() <= support {
                rel.push((j, (-(d * d) / (2.0 * sigma * sigma)).exp()));
            }
        }
        let sum: f64 = rel.iter().map(|r| r.1).sum();
        rel.iter_mut().for_each(|r| r.1 /= sum);
        AxisTaps::build(out_len, rel.len(), |i, out| {
            for &(j, w) in &rel {
                out.push((reflect(i as i64 * f + j, in_len) as i64, w));
            }
        })
    }
}

/// Keys cubic with a = -0.5.
fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

fn resample_plane(src: &[f32], w: usize, h: usize, xs: &AxisTaps, ys: &AxisTaps) -> Vec<f32> {
    let ow = xs.out_len;
    let oh = ys.out_len;
    let mut tmp = vec![0.0f64; ow * h];
    tmp.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let base = x * xs.taps;
            let mut acc = 0.0;
            for k in 0..xs.taps {
                acc += xs.weight[base + k] * line[xs.index[base + k]] as f64;
            }
            *out = acc;
        }
    });
    let mut dst = vec![0.0f32; ow * oh];
    dst.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        let base = y * ys.taps;
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..ys.taps {
                acc += ys.weight[base + k] * tmp[ys.index[base + k] * ow + x];
            }
            *out = acc as f32;
        }
    });
    dst
}

fn check_factor(factor: usize) -> Result<()> {
    if factor < 2 {
        return Err(Error::param("factor", format!("{factor} < 2")));
    }
    Ok(())
}

/// Enlarges every plane by an integer factor.
pub fn enlarge(r: &Raster, factor: usize, method: Interpolation) -> Result<Raster> {
    check_factor(factor)?;
    let xs = AxisTaps::enlarge(r.width(), factor, method);
    let ys = AxisTaps::enlarge(r.height(), factor, method);
    r.map_planes(|p, w, h| Ok((xs.out_len, ys.out_len, resample_plane(p, w, h, &xs, &ys))))
}

/// Gaussian prefilter (`sigma = factor * sigma_ratio`) sampled at the centers
/// of the reduced grid. Extents must be multiples of `factor`; see
/// [`crop_to_multiple`].
pub fn reduce_with(r: &Raster, factor: usize, sigma_ratio: f64) -> Result<Raster> {
    check_factor(factor)?;
    if !(sigma_ratio > 0.0) {
        return Err(Error::param("sigma ratio", format!("{sigma_ratio} <= 0")));
    }
    if r.width() % factor != 0 || r.height() % factor != 0 {
        return Err(Error::param(
            "factor",
            format!(
                "{}x{} is not divisible by {factor}",
                r.width(),
                r.height()
            ),
        ));
    }
    let xs = AxisTaps::reduce(r.width(), factor, sigma_ratio);
    let ys = AxisTaps::reduce(r.height(), factor, sigma_ratio);
    r.map_planes(|p, w, h| Ok((xs.out_len, ys.out_len, resample_plane(p, w, h, &xs, &ys))))
}

pub fn reduce(r: &Raster, factor: usize) -> Result<Raster> {
    reduce_with(r, factor, DEFAULT_SIGMA_RATIO)
}

/// Crops to the largest extent divisible by `factor`, anchored top-left.
/// Returns the raster unchanged when already divisible.
pub fn crop_to_multiple(r: &Raster, factor: usize) -> Result<Raster> {
    check_factor(factor)?;
    let w = r.width() / factor * factor;
    let h = r.height() / factor * factor;
    if w == 0 || h == 0 {
        return Err(Error::param(
            "factor",
            format!("{}x{} is smaller than one {factor}x{factor} block", r.width(), r.height()),
        ));
    }
    if (w, h) == r.extent() {
        Ok(r.clone())
    } else {
        r.crop(0, 0, w, h)
    }
}

pub fn gaussian_blur_with(r: &Raster, radius: f64, sigma_ratio: f64) -> Result<Raster> {
    let kernel = Kernel1D::gaussian(radius, sigma_ratio)?;
    let xs = AxisTaps::convolution(r.width(), &kernel);
    let ys = AxisTaps::convolution(r.height(), &kernel);
    r.map_planes(|p, w, h| Ok((w, h, resample_plane(p, w, h, &xs, &ys))))
}

pub fn gaussian_blur(r: &Raster, radius: f64) -> Result<Raster> {
    gaussian_blur_with(r, radius, DEFAULT_SIGMA_RATIO)
}

/// `r - blur(r)`, keeping only frequencies above the blur cutoff.
pub fn band_pass_with(r: &Raster, radius: f64, sigma_ratio: f64) -> Result<Raster> {
    let low = gaussian_blur_with(r, radius, sigma_ratio)?;
    r.zip_with(&low, |a, b| a - b)
}

pub fn band_pass(r: &Raster, radius: f64) -> Result<Raster> {
    band_pass_with(r, radius, DEFAULT_SIGMA_RATIO)
}

/// `r / (blur(r) + c)`, elementwise.
pub fn contrast_normalize_with(r: &Raster, radius: f64, c: f32, sigma_ratio: f64) -> Result<Raster> {
    if !(c > 0.0) {
        return Err(Error::param("contrast constant", format!("{c} <= 0")));
    }
    let low = gaussian_blur_with(r, radius, sigma_ratio)?;
    r.zip_with(&low, |v, l| v / (l + c))
}

pub fn contrast_normalize(r: &Raster, radius: f64, c: f32) -> Result<Raster> {
    contrast_normalize_with(r, radius, c, DEFAULT_SIGMA_RATIO)
}
