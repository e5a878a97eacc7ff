//! Iterative correction of a candidate image so that its reduction matches
//! the low-resolution target.

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::resample::{self, Interpolation, DEFAULT_SIGMA_RATIO};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackprojectParams {
    pub lambda: f64,
    pub max_iterations: usize,
    /// Mean absolute residual, in 8-bit levels, at which iteration stops.
    pub tolerance: f64,
    pub sigma_ratio: f64,
}

impl Default for BackprojectParams {
    fn default() -> Self {
        BackprojectParams {
            lambda: 1.0,
            max_iterations: 50,
            tolerance: 0.5,
            sigma_ratio: DEFAULT_SIGMA_RATIO,
        }
    }
}

impl BackprojectParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::param("bp-lambda", format!("{} is outside (0, 1]", self.lambda)));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("bp-iters", "must be at least 1"));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::param("bp-tol", format!("{} is not a finite non-negative value", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backprojected {
    pub image: Raster,
    /// Correction steps applied to the returned image.
    pub iterations: usize,
    pub mean_abs: f64,
    pub converged: bool,
    /// Residual before each step and after the last one.
    pub trace: Vec<f64>,
}

fn check_extents(candidate: &Raster, target: &Raster, factor: usize) -> Result<()> {
    let expected = (target.width() * factor, target.height() * factor);
    if candidate.extent() != expected {
        return Err(Error::ExtentMismatch {
            expected,
            found: candidate.extent(),
        });
    }
    if candidate.names() != target.names() {
        return Err(Error::ChannelLayout {
            expected: target.names(),
            found: candidate.names(),
        });
    }
    Ok(())
}

/// `target - reduce(candidate)` and its mean absolute value.
pub fn residual(candidate: &Raster, target: &Raster, factor: usize) -> Result<(Raster, f64)> {
    residual_with(candidate, target, factor, DEFAULT_SIGMA_RATIO)
}

pub fn residual_with(candidate: &Raster, target: &Raster, factor: usize, sigma_ratio: f64) -> Result<(Raster, f64)> {
    check_extents(candidate, target, factor)?;
    let reduced = resample::reduce_with(candidate, factor, sigma_ratio)?;
    let diff = target.zip_with(&reduced, |t, r| t - r)?;
    let m = diff.mean_abs();
    Ok((diff, m))
}

/// Runs `C <- C + lambda * enlarge(target - reduce(C))` until the residual
/// drops to the tolerance or the iteration budget runs out. If a step makes
/// the residual grow, iteration stops and the previous image is returned.
pub fn backproject(candidate: &Raster, target: &Raster, factor: usize, p: &BackprojectParams) -> Result<Backprojected> {
    p.validate()?;
    let mut image = candidate.clone();
    let (mut diff, mut m) = residual_with(&image, target, factor, p.sigma_ratio)?;
    let mut trace = vec![m];
    let mut iterations = 0;
    let lambda = p.lambda as f32;
    while m > p.tolerance && iterations < p.max_iterations {
        let step = resample::enlarge(&diff, factor, Interpolation::Bicubic)?;
        let next = image.zip_with(&step, |c, d| c + lambda * d)?;
        let (next_diff, next_m) = residual_with(&next, target, factor, p.sigma_ratio)?;
        trace.push(next_m);
        if next_m > m {
            log::warn!("back-projection residual rose from {m:.4} to {next_m:.4}; stopping");
            break;
        }
        image = next;
        diff = next_diff;
        m = next_m;
        iterations += 1;
    }
    Ok(Backprojected {
        image,
        iterations,
        mean_abs: m,
        converged: m <= p.tolerance,
        trace,
    })
}
