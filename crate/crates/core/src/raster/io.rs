//! PNG / binary PPM input and PNG output.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{DynamicImage, ImageError, ImageFormat};

use super::{Plane, Raster, RGB};
use crate::error::{Error, Result};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

fn sniff(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.starts_with(PNG_MAGIC) {
        Some(ImageFormat::Png)
    } else if bytes.starts_with(b"P6") {
        Some(ImageFormat::Pnm)
    } else {
        None
    }
}

/// Loads a PNG (8-bit RGB or grayscale) or binary PPM (P6) file as an
/// `R,G,B` raster with samples in `[0, 255]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let format = sniff(&bytes).ok_or_else(|| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: "expected PNG or binary PPM (P6)".into(),
    })?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| match e {
        ImageError::Unsupported(u) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: u.to_string(),
        },
        other => Error::CorruptData {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })?;
    Ok(from_dynamic(&img))
}

fn from_dynamic(img: &DynamicImage) -> Raster {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut planes: Vec<Plane> = RGB
        .iter()
        .map(|n| Plane {
            name: n.to_string(),
            data: Vec::with_capacity(w * h),
        })
        .collect();
    for px in rgb.pixels() {
        for (c, plane) in planes.iter_mut().enumerate() {
            plane.data.push(px.0[c] as f32);
        }
    }
    Raster::from_planes(w, h, planes).expect("decoded image has a valid extent")
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.clamp(0.0, 255.0).round() as u8
    }
}

/// Writes an `R,G,B` or single-plane raster as an 8-bit PNG. Samples are
/// clamped to `[0, 255]` and rounded.
pub fn save_image(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (r.width() as u32, r.height() as u32);
    let img = if r.has_layout(&RGB) {
        let mut buf = Vec::with_capacity(r.len() * 3);
        for i in 0..r.len() {
            for c in 0..3 {
                buf.push(quantize(r.plane_at(c)[i]));
            }
        }
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, buf).expect("buffer size"))
    } else if r.channel_count() == 1 {
        let buf = r.plane_at(0).iter().map(|&v| quantize(v)).collect();
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, buf).expect("buffer size"))
    } else {
        return Err(Error::ChannelLayout {
            expected: RGB.iter().map(|s| s.to_string()).collect(),
            found: r.names(),
        });
    };
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Unwritable {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

/// Writes a boolean mask as a 1-bit grayscale PNG (`true` = white).
pub fn save_mask(width: usize, height: usize, bits: &[bool], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    assert_eq!(bits.len(), width * height, "mask size");
    let unwritable = |detail: String| Error::Unwritable {
        path: path.to_path_buf(),
        detail,
    };
    let file = File::create(path).map_err(|e| unwritable(e.to_string()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let row_bytes = width.div_ceil(8);
    let mut packed = vec![0u8; row_bytes * height];
    for y in 0..height {
        for x in 0..width {
            if bits[y * width + x] {
                packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let mut writer = enc.write_header().map_err(|e| unwritable(e.to_string()))?;
    writer
        .write_image_data(&packed)
        .map_err(|e| unwritable(e.to_string()))?;
    writer.finish().map_err(|e| unwritable(e.to_string()))
}
