//! Planar float images.
//!
//! A [`Raster`] holds one or more named planes of `f32` samples in row-major
//! order. Luminosity-like planes use the nominal range `[0, 255]`; band-pass
//! planes are signed. Quantization to 8 bits happens only in [`io`].

mod color;
pub mod io;

pub use color::{lab_to_rgb, rgb_to_lab, LAB_NEUTRAL};
pub use io::{load_image, save_image, save_mask};

use crate::error::{Error, Result};

pub const RGB: [&str; 3] = ["R", "G", "B"];
pub const LAB: [&str; 3] = ["L", "A", "B"];

/// Column/row address of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PixelCoord {
    pub x: usize,
    pub y: usize,
}

impl PixelCoord {
    pub const fn new(x: usize, y: usize) -> Self {
        PixelCoord { x, y }
    }
}

// Raster order: rows first.
impl Ord for PixelCoord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for PixelCoord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub name: String,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    planes: Vec<Plane>,
}

impl Raster {
    /// Zero-filled raster with the given plane names.
    pub fn new(width: usize, height: usize, names: &[&str]) -> Result<Self> {
        Self::filled(width, height, names, 0.0)
    }

    pub fn filled(width: usize, height: usize, names: &[&str], value: f32) -> Result<Self> {
        check_extent(width, height)?;
        if names.is_empty() {
            return Err(Error::param("channels", "at least one plane is required"));
        }
        Ok(Raster {
            width,
            height,
            planes: names
                .iter()
                .map(|n| Plane {
                    name: n.to_string(),
                    data: vec![value; width * height],
                })
                .collect(),
        })
    }

    pub fn from_planes(width: usize, height: usize, planes: Vec<Plane>) -> Result<Self> {
        check_extent(width, height)?;
        if planes.is_empty() {
            return Err(Error::param("channels", "at least one plane is required"));
        }
        for p in &planes {
            if p.data.len() != width * height {
                return Err(Error::param(
                    "samples",
                    format!(
                        "plane {} has {} samples, expected {}",
                        p.name,
                        p.data.len(),
                        width * height
                    ),
                ));
            }
        }
        Ok(Raster {
            width,
            height,
            planes,
        })
    }

    /// Single-plane raster.
    pub fn from_plane(width: usize, height: usize, name: &str, data: Vec<f32>) -> Result<Self> {
        Self::from_planes(
            width,
            height,
            vec![Plane {
                name: name.to_string(),
                data,
            }],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channel_count(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Plane] {
        &mut self.planes
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    pub fn names(&self) -> Vec<String> {
        self.planes.iter().map(|p| p.name.clone()).collect()
    }

    pub fn has_layout(&self, names: &[&str]) -> bool {
        self.planes.len() == names.len() && self.planes.iter().zip(names).all(|(p, n)| p.name == *n)
    }

    pub(crate) fn require_layout(&self, names: &[&str]) -> Result<()> {
        if self.has_layout(names) {
            Ok(())
        } else {
            Err(Error::ChannelLayout {
                expected: names.iter().map(|s| s.to_string()).collect(),
                found: self.names(),
            })
        }
    }

    pub fn plane_index(&self, name: &str) -> Option<usize> {
        self.planes.iter().position(|p| p.name == name)
    }

    pub fn plane(&self, name: &str) -> Option<&[f32]> {
        self.planes
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.data.as_slice())
    }

    pub fn plane_at(&self, c: usize) -> &[f32] {
        &self.planes[c].data
    }

    pub fn plane_at_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.planes[c].data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.planes[c].data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        let w = self.width;
        self.planes[c].data[y * w + x] = v;
    }

    /// Copy of one plane as a single-plane raster.
    pub fn select(&self, name: &str) -> Result<Raster> {
        let data = self.plane(name).ok_or_else(|| Error::ChannelLayout {
            expected: vec![name.to_string()],
            found: self.names(),
        })?;
        Raster::from_plane(self.width, self.height, name, data.to_vec())
    }

    pub fn renamed(mut self, names: &[&str]) -> Result<Raster> {
        if names.len() != self.planes.len() {
            return Err(Error::ChannelLayout {
                expected: names.iter().map(|s| s.to_string()).collect(),
                found: self.names(),
            });
        }
        for (p, n) in self.planes.iter_mut().zip(names) {
            p.name = n.to_string();
        }
        Ok(self)
    }

    /// Applies `f` to every plane, keeping names.
    pub fn map_planes<F>(&self, mut f: F) -> Result<Raster>
    where
        F: FnMut(&[f32], usize, usize) -> Result<(usize, usize, Vec<f32>)>,
    {
        let mut extent = None;
        let mut planes = Vec::with_capacity(self.planes.len());
        for p in &self.planes {
            let (w, h, data) = f(&p.data, self.width, self.height)?;
            extent = Some((w, h));
            planes.push(Plane {
                name: p.name.clone(),
                data,
            });
        }
        let (w, h) = extent.expect("raster has at least one plane");
        Raster::from_planes(w, h, planes)
    }

    /// Elementwise combination of two rasters with equal extent and plane count.
    pub fn zip_with(&self, other: &Raster, f: impl Fn(f32, f32) -> f32) -> Result<Raster> {
        if self.extent() != other.extent() {
            return Err(Error::ExtentMismatch {
                expected: self.extent(),
                found: other.extent(),
            });
        }
        if self.planes.len() != other.planes.len() {
            return Err(Error::ChannelLayout {
                expected: self.names(),
                found: other.names(),
            });
        }
        let planes = self
            .planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| Plane {
                name: a.name.clone(),
                data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
            })
            .collect();
        Raster::from_planes(self.width, self.height, planes)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            planes: self
                .planes
                .iter()
                .map(|p| Plane {
                    name: p.name.clone(),
                    data: p.data.iter().map(|&v| f(v)).collect(),
                })
                .collect(),
        }
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Raster> {
        check_extent(width, height)?;
        if x + width > self.width || y + height > self.height {
            return Err(Error::param(
                "crop",
                format!(
                    "{}x{} at ({}, {}) exceeds {}x{}",
                    width, height, x, y, self.width, self.height
                ),
            ));
        }
        let planes = self
            .planes
            .iter()
            .map(|p| {
                let mut data = Vec::with_capacity(width * height);
                for row in y..y + height {
                    let start = row * self.width + x;
                    data.extend_from_slice(&p.data[start..start + width]);
                }
                Plane {
                    name: p.name.clone(),
                    data,
                }
            })
            .collect();
        Raster::from_planes(width, height, planes)
    }

    /// Left-right mirror image.
    pub fn flipped_h(&self) -> Raster {
        let w = self.width;
        let mut out = self.clone();
        for (dst, src) in out.planes.iter_mut().zip(&self.planes) {
            for (drow, srow) in dst.data.chunks_mut(w).zip(src.data.chunks(w)) {
                for (d, s) in drow.iter_mut().zip(srow.iter().rev()) {
                    *d = *s;
                }
            }
        }
        out
    }

    /// Top-bottom mirror image.
    pub fn flipped_v(&self) -> Raster {
        let w = self.width;
        let mut out = self.clone();
        for (dst, src) in out.planes.iter_mut().zip(&self.planes) {
            for (drow, srow) in dst.data.chunks_mut(w).zip(src.data.chunks(w).rev()) {
                drow.copy_from_slice(srow);
            }
        }
        out
    }

    /// Mean absolute difference over all samples of all planes.
    pub fn mean_abs_diff(&self, other: &Raster) -> Result<f64> {
        let diff = self.zip_with(other, |a, b| a - b)?;
        Ok(diff.mean_abs())
    }

    pub fn mean_abs(&self) -> f64 {
        let n = (self.len() * self.planes.len()) as f64;
        self.planes
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|&v| v.abs() as f64)
            .sum::<f64>()
            / n
    }

    pub fn mean(&self) -> f64 {
        let n = (self.len() * self.planes.len()) as f64;
        self.planes
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|&v| v as f64)
            .sum::<f64>()
            / n
    }
}

fn check_extent(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::param(
            "extent",
            format!("{width}x{height} raster has no pixels"),
        ));
    }
    Ok(())
}
