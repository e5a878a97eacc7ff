#![allow(dead_code)]

use gcsr::raster::{Raster, RGB};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> Raster {
    let mut r = Raster::new(w, h, &RGB).unwrap();
    for y in 0..h {
        for x in 0..w {
            let v = f(x, y);
            for c in 0..3 {
                r.set(c, x, y, v);
            }
        }
    }
    r
}

/// Soft-edged diagonal stripes, period about 7 pixels.
pub fn stripes(w: usize, h: usize) -> Raster {
    gray(w, h, |x, y| {
        let t = (x as f32 + 0.5 * y as f32) * std::f32::consts::TAU / 7.0;
        128.0 + 80.0 * (3.0 * t.sin()).tanh()
    })
}

/// Independent uniform gray noise.
pub fn noise(w: usize, h: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f32> = (0..w * h).map(|_| rng.random_range(48..=208) as f32).collect();
    gray(w, h, |x, y| vals[y * w + x])
}

/// Left half from `a`, right half from `b`.
pub fn side_by_side(a: &Raster, b: &Raster) -> Raster {
    let (w, h) = a.extent();
    let mut out = a.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in w / 2..w {
                out.set(c, x, y, b.get(c, x, y));
            }
        }
    }
    out
}
