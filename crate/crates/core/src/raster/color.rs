//! sRGB <-> CIELAB (D65).
//!
//! L* is rescaled from `[0, 100]` to `[0, 255]`; a* and b* are offset by
//! [`LAB_NEUTRAL`] so gray sits at the middle of the 8-bit range.

use super::{Plane, Raster, LAB, RGB};
use crate::error::Result;

pub const LAB_NEUTRAL: f32 = 128.0;

const L_SCALE: f64 = 255.0 / 100.0;

// D65 reference white.
const XN: f64 = 0.950_47;
const YN: f64 = 1.0;
const ZN: f64 = 1.088_83;

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn f_lab(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn f_lab_inv(t: f64) -> f64 {
    let t3 = t * t * t;
    if t3 > EPSILON {
        t3
    } else {
        (116.0 * t - 16.0) / KAPPA
    }
}

/// One pixel, RGB in `[0, 255]` to scaled LAB.
pub(crate) fn rgb_pixel_to_lab(r: f32, g: f32, b: f32) -> [f32; 3] {
    let r = srgb_to_linear(r as f64 / 255.0);
    let g = srgb_to_linear(g as f64 / 255.0);
    let b = srgb_to_linear(b as f64 / 255.0);

    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;

    let fx = f_lab(x / XN);
    let fy = f_lab(y / YN);
    let fz = f_lab(z / ZN);

    let l = 116.0 * fy - 16.0;
    let a = 500.0 * (fx - fy);
    let bb = 200.0 * (fy - fz);
    [
        (l * L_SCALE) as f32,
        (a + LAB_NEUTRAL as f64) as f32,
        (bb + LAB_NEUTRAL as f64) as f32,
    ]
}

pub(crate) fn lab_pixel_to_rgb(l: f32, a: f32, b: f32) -> [f32; 3] {
    let l = l as f64 / L_SCALE;
    let a = a as f64 - LAB_NEUTRAL as f64;
    let bb = b as f64 - LAB_NEUTRAL as f64;

    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - bb / 200.0;

    let x = XN * f_lab_inv(fx);
    let y = if l > KAPPA * EPSILON {
        fy * fy * fy
    } else {
        l / KAPPA
    } * YN;
    let z = ZN * f_lab_inv(fz);

    let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let bl = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;

    [r, g, bl].map(|c| (linear_to_srgb(c.max(0.0)) * 255.0) as f32)
}

fn convert(
    r: &Raster,
    from: &[&str; 3],
    to: &[&str; 3],
    f: fn(f32, f32, f32) -> [f32; 3],
) -> Result<Raster> {
    r.require_layout(from)?;
    let n = r.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let (p0, p1, p2) = (r.plane_at(0), r.plane_at(1), r.plane_at(2));
    for i in 0..n {
        let v = f(p0[i], p1[i], p2[i]);
        out[0][i] = v[0];
        out[1][i] = v[1];
        out[2][i] = v[2];
    }
    let planes = out
        .into_iter()
        .zip(to)
        .map(|(data, name)| Plane {
            name: name.to_string(),
            data,
        })
        .collect();
    Raster::from_planes(r.width(), r.height(), planes)
}

/// Converts an `R,G,B` raster to `L,A,B`.
pub fn rgb_to_lab(r: &Raster) -> Result<Raster> {
    convert(r, &RGB, &LAB, rgb_pixel_to_lab)
}

/// Converts an `L,A,B` raster back to `R,G,B`. Out-of-gamut values are not
/// clamped except for negative linear light.
pub fn lab_to_rgb(r: &Raster) -> Result<Raster> {
    convert(r, &LAB, &RGB, lab_pixel_to_rgb)
}
