//! Overlapping patch grids and weighted patch feature vectors.
//!
//! A feature is the concatenation of one `w x w` block per active plane
//! (band-pass luminosity, raw luminosity, then the two chroma planes), each
//! block already multiplied by its weight. Plain L1 distance between two
//! features therefore equals the weighted sum of per-plane L1 distances.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::raster::{PixelCoord, Raster};

pub const MIN_PATCH_WIDTH: usize = 2;
pub const MAX_PATCH_WIDTH: usize = 64;

/// Pixel-order permutation applied to a square block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Transform {
    #[default]
    Identity,
    FlipH,
    FlipV,
    Rot180,
}

impl Transform {
    pub const ALL: [Transform; 4] = [
        Transform::Identity,
        Transform::FlipH,
        Transform::FlipV,
        Transform::Rot180,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::FlipH => "flip_h",
            Transform::FlipV => "flip_v",
            Transform::Rot180 => "rot180",
        }
    }

    /// Every supported transform is its own inverse.
    pub fn inverse(self) -> Transform {
        self
    }

    /// Position in the untransformed block that lands at `(x, y)`.
    #[inline]
    pub fn source_of(self, x: usize, y: usize, w: usize) -> (usize, usize) {
        match self {
            Transform::Identity => (x, y),
            Transform::FlipH => (w - 1 - x, y),
            Transform::FlipV => (x, w - 1 - y),
            Transform::Rot180 => (w - 1 - x, w - 1 - y),
        }
    }

    /// Permutes one `w x w` row-major block.
    pub fn apply_block(self, block: &[f32], w: usize, out: &mut [f32]) {
        debug_assert_eq!(block.len(), w * w);
        for y in 0..w {
            for x in 0..w {
                let (sx, sy) = self.source_of(x, y, w);
                out[y * w + x] = block[sy * w + sx];
            }
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Transform::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| {
                Error::param(
                    "transforms",
                    format!("`{s}` is not one of identity, flip_h, flip_v, rot180"),
                )
            })
    }
}

/// Parses a comma-separated transform list, keeping enumeration order and
/// dropping duplicates.
pub fn parse_transforms(s: &str) -> Result<Vec<Transform>> {
    let mut seen: Vec<Transform> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let t: Transform = part.parse()?;
        if !seen.contains(&t) {
            seen.push(t);
        }
    }
    if seen.is_empty() {
        return Err(Error::param("transforms", "empty transform set"));
    }
    seen.sort();
    Ok(seen)
}

pub fn format_transforms(ts: &[Transform]) -> String {
    ts.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(",")
}

/// Location of one patch in one of the indexed images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatchRef {
    pub source: u32,
    pub origin: PixelCoord,
    pub transform: Transform,
}

impl PatchRef {
    pub fn new(source: u32, x: usize, y: usize) -> Self {
        PatchRef {
            source,
            origin: PixelCoord::new(x, y),
            transform: Transform::Identity,
        }
    }

    pub fn with_transform(self, transform: Transform) -> Self {
        PatchRef { transform, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGridSpec {
    pub patch_width: usize,
    pub overlap: usize,
    pub width: usize,
    pub height: usize,
}

impl PatchGridSpec {
    pub fn new(patch_width: usize, overlap: usize, width: usize, height: usize) -> Result<Self> {
        if !(MIN_PATCH_WIDTH..=MAX_PATCH_WIDTH).contains(&patch_width) {
            return Err(Error::param(
                "patch-size",
                format!("{patch_width} outside {MIN_PATCH_WIDTH}..={MAX_PATCH_WIDTH}"),
            ));
        }
        if overlap < 1 || overlap >= patch_width {
            return Err(Error::param(
                "overlap",
                format!("{overlap} outside 1..{patch_width}"),
            ));
        }
        if patch_width > width || patch_width > height {
            return Err(Error::param(
                "patch-size",
                format!("{patch_width} exceeds the {width}x{height} image"),
            ));
        }
        Ok(PatchGridSpec {
            patch_width,
            overlap,
            width,
            height,
        })
    }

    pub fn stride(&self) -> usize {
        self.patch_width - self.overlap
    }

    fn axis(&self, len: usize) -> Vec<usize> {
        let (w, s) = (self.patch_width, self.stride());
        let mut out = Vec::new();
        let mut p = 0;
        loop {
            if p + w >= len {
                out.push(len - w);
                return out;
            }
            out.push(p);
            p += s;
        }
    }
}

/// Patch origins in raster order; the last row and column are clamped to the
/// image edge.
pub fn build_grid(spec: &PatchGridSpec) -> Vec<PixelCoord> {
    let xs = spec.axis(spec.width);
    let ys = spec.axis(spec.height);
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| PixelCoord::new(x, y)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWeights {
    pub edge: f32,
    pub lum: f32,
    pub chroma: f32,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            edge: 1.0,
            lum: 0.25,
            chroma: 0.25,
        }
    }
}

impl FeatureWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w-edge", self.edge), ("w-lum", self.lum), ("w-chroma", self.chroma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param("weights", format!("{name} = {v} must be >= 0")));
            }
        }
        if self.edge == 0.0 && self.lum == 0.0 && self.chroma == 0.0 {
            return Err(Error::param("weights", "all feature weights are zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeature {
    pub values: Vec<f32>,
    pub patch: PatchRef,
    pub width: usize,
}

impl PatchFeature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Permutes every plane block of `f` by `t` and composes `t` onto its tag.
pub fn transform_feature(f: &PatchFeature, t: Transform) -> PatchFeature {
    let block = f.width * f.width;
    let mut values = vec![0.0; f.values.len()];
    for (src, dst) in f.values.chunks(block).zip(values.chunks_mut(block)) {
        t.apply_block(src, f.width, dst);
    }
    PatchFeature {
        values,
        patch: f.patch.with_transform(compose(f.patch.transform, t)),
        width: f.width,
    }
}

/// Composition of two transforms from the supported group.
pub fn compose(a: Transform, b: Transform) -> Transform {
    use Transform::*;
    let bits = |t| match t {
        Identity => 0u8,
        FlipH => 1,
        FlipV => 2,
        Rot180 => 3,
    };
    match bits(a) ^ bits(b) {
        0 => Identity,
        1 => FlipH,
        2 => FlipV,
        _ => Rot180,
    }
}

#[derive(Debug, Clone)]
struct WeightedPlane {
    weight: f32,
    data: Arc<Vec<f32>>,
}

/// Weighted planes from which patch features are cut. Shared by the search
/// index so features never need to be stored.
#[derive(Debug, Clone)]
pub struct FeaturePlanes {
    width: usize,
    height: usize,
    patch_width: usize,
    planes: Vec<WeightedPlane>,
}

impl FeaturePlanes {
    /// `bandpass` and `lum` are single-plane rasters; `chroma` carries the
    /// `A` and `B` planes. Zero-weight planes are left out of the feature.
    pub fn new(
        bandpass: &Raster,
        lum: &Raster,
        chroma: Option<&Raster>,
        weights: &FeatureWeights,
        patch_width: usize,
    ) -> Result<Self> {
        weights.validate()?;
        let extent = bandpass.extent();
        for r in [Some(lum), chroma].into_iter().flatten() {
            if r.extent() != extent {
                return Err(Error::ExtentMismatch {
                    expected: extent,
                    found: r.extent(),
                });
            }
        }
        let mut planes = Vec::new();
        let mut push = |weight: f32, data: &[f32]| {
            if weight > 0.0 {
                planes.push(WeightedPlane {
                    weight,
                    data: Arc::new(data.to_vec()),
                });
            }
        };
        push(weights.edge, bandpass.plane_at(0));
        push(weights.lum, lum.plane_at(0));
        if let Some(c) = chroma {
            let a = c.plane("A").ok_or_else(|| chroma_layout(c))?;
            let b = c.plane("B").ok_or_else(|| chroma_layout(c))?;
            push(weights.chroma, a);
            push(weights.chroma, b);
        }
        if planes.is_empty() {
            return Err(Error::param("weights", "no active feature plane"));
        }
        if patch_width > extent.0 || patch_width > extent.1 {
            return Err(Error::param(
                "patch-size",
                format!("{patch_width} exceeds the {}x{} image", extent.0, extent.1),
            ));
        }
        Ok(FeaturePlanes {
            width: extent.0,
            height: extent.1,
            patch_width,
            planes,
        })
    }

    pub fn patch_width(&self) -> usize {
        self.patch_width
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn dim(&self) -> usize {
        self.planes.len() * self.patch_width * self.patch_width
    }

    pub fn check_origin(&self, origin: PixelCoord) -> Result<()> {
        let w = self.patch_width;
        if origin.x + w > self.width || origin.y + w > self.height {
            return Err(Error::PatchOutOfBounds {
                x: origin.x,
                y: origin.y,
                width: w,
                image_width: self.width,
                image_height: self.height,
            });
        }
        Ok(())
    }

    /// Writes the feature at `origin` in `transform` pixel order.
    pub fn write_feature(&self, origin: PixelCoord, transform: Transform, out: &mut [f32]) {
        let w = self.patch_width;
        let mut k = 0;
        for p in &self.planes {
            for y in 0..w {
                for x in 0..w {
                    let (sx, sy) = transform.source_of(x, y, w);
                    out[k] = p.weight * p.data[(origin.y + sy) * self.width + origin.x + sx];
                    k += 1;
                }
            }
        }
    }

    /// Component `d` of the untransformed feature at `origin`.
    #[inline]
    pub fn coord(&self, origin: PixelCoord, d: usize) -> f32 {
        let block = self.patch_width * self.patch_width;
        let p = &self.planes[d / block];
        let r = d % block;
        let (x, y) = (r % self.patch_width, r / self.patch_width);
        p.weight * p.data[(origin.y + y) * self.width + origin.x + x]
    }

    pub fn feature(&self, patch: PatchRef) -> Result<PatchFeature> {
        self.check_origin(patch.origin)?;
        let mut values = vec![0.0; self.dim()];
        self.write_feature(patch.origin, patch.transform, &mut values);
        Ok(PatchFeature {
            values,
            patch,
            width: self.patch_width,
        })
    }

    /// Distance from the untransformed patch at `origin` to `query`. May stop
    /// early and return any value above `bound` once the partial sum exceeds
    /// it.
    #[inline]
    pub fn distance(&self, origin: PixelCoord, query: &[f32], metric: Metric, bound: f32) -> f32 {
        let w = self.patch_width;
        let mut acc = 0.0f32;
        let mut q = query.iter();
        match metric {
            Metric::L1 => {
                for p in &self.planes {
                    for y in 0..w {
                        let row = (origin.y + y) * self.width + origin.x;
                        for &v in &p.data[row..row + w] {
                            acc += (p.weight * v - q.next().unwrap()).abs();
                        }
                        if acc > bound {
                            return acc;
                        }
                    }
                }
                acc
            }
            Metric::L2 => {
                let bound2 = if bound.is_finite() { bound * bound } else { f32::INFINITY };
                for p in &self.planes {
                    for y in 0..w {
                        let row = (origin.y + y) * self.width + origin.x;
                        for &v in &p.data[row..row + w] {
                            let d = p.weight * v - q.next().unwrap();
                            acc += d * d;
                        }
                        if acc > bound2 {
                            return acc.sqrt();
                        }
                    }
                }
                acc.sqrt()
            }
        }
    }

    /// Bytes held by the plane buffers.
    pub fn backing_bytes(&self) -> usize {
        self.planes.len() * self.width * self.height * std::mem::size_of::<f32>()
    }
}

fn chroma_layout(c: &Raster) -> Error {
    Error::ChannelLayout {
        expected: vec!["A".into(), "B".into()],
        found: c.names(),
    }
}

/// One-shot feature extraction for a single patch.
pub fn extract_feature(
    bandpass: &Raster,
    lum: &Raster,
    chroma: Option<&Raster>,
    patch: PatchRef,
    weights: &FeatureWeights,
    patch_width: usize,
) -> Result<PatchFeature> {
    FeaturePlanes::new(bandpass, lum, chroma, weights, patch_width)?.feature(patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::l1_distance;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, pw: usize, o: usize) -> Vec<PixelCoord> {
        build_grid(&PatchGridSpec::new(pw, o, w, h).unwrap())
    }

    #[test]
    fn grid_examples() {
        assert_eq!(grid(8, 8, 8, 4), vec![PixelCoord::new(0, 0)]);
        let xs: Vec<usize> = grid(12, 8, 8, 4).iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0, 4]);
        let xs: Vec<usize> = grid(13, 8, 8, 4).iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0, 4, 5]);
    }

    #[test]
    fn grid_rejects_bad_specs() {
        assert!(PatchGridSpec::new(9, 4, 8, 8).is_err());
        assert!(PatchGridSpec::new(8, 8, 8, 8).is_err());
        assert!(PatchGridSpec::new(8, 0, 8, 8).is_err());
        assert!(PatchGridSpec::new(1, 0, 8, 8).is_err());
        assert!(PatchGridSpec::new(65, 4, 100, 100).is_err());
    }

    proptest! {
        #[test]
        fn grid_covers_every_pixel(w in 8usize..40, h in 8usize..40, pw in 2usize..9, o in 1usize..8) {
            prop_assume!(o < pw && pw <= w && pw <= h);
            let spec = PatchGridSpec::new(pw, o, w, h).unwrap();
            let g = build_grid(&spec);
            let mut cover = vec![0u32; w * h];
            for p in &g {
                for y in p.y..p.y + pw {
                    for x in p.x..p.x + pw {
                        cover[y * w + x] += 1;
                    }
                }
            }
            prop_assert!(cover.iter().all(|&c| c >= 1));
            // Raster order.
            prop_assert!(g.windows(2).all(|a| a[0] < a[1]));
        }
    }

    fn ramp(w: usize, h: usize, name: &str, scale: f32) -> Raster {
        let data = (0..w * h).map(|i| scale * i as f32).collect();
        Raster::from_plane(w, h, name, data).unwrap()
    }

    #[test]
    fn flip_h_of_two_by_two() {
        let f = PatchFeature {
            values: vec![1.0, 2.0, 3.0, 4.0],
            patch: PatchRef::new(0, 0, 0),
            width: 2,
        };
        let g = transform_feature(&f, Transform::FlipH);
        assert_eq!(g.values, vec![2.0, 1.0, 4.0, 3.0]);
        assert_eq!(g.patch.transform, Transform::FlipH);
        assert_eq!(transform_feature(&f, Transform::Identity), f);
        for t in Transform::ALL {
            assert_eq!(transform_feature(&transform_feature(&f, t), t), f);
        }
    }

    #[test]
    fn zero_weights_drop_planes() {
        let bp = ramp(4, 4, "L", 1.0);
        let lum = ramp(4, 4, "L", 3.0);
        let w = FeatureWeights { edge: 1.0, lum: 0.0, chroma: 0.0 };
        let f = extract_feature(&bp, &lum, None, PatchRef::new(0, 1, 1), &w, 2).unwrap();
        assert_eq!(f.values, vec![5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn transformed_extraction_matches_transform_feature() {
        let bp = ramp(5, 5, "L", 1.0);
        let lum = ramp(5, 5, "L", -2.0);
        let chroma = Raster::from_planes(
            5,
            5,
            vec![
                crate::raster::Plane { name: "A".into(), data: (0..25).map(|v| v as f32 * 0.5).collect() },
                crate::raster::Plane { name: "B".into(), data: (0..25).map(|v| 100.0 - v as f32).collect() },
            ],
        )
        .unwrap();
        let fp = FeaturePlanes::new(&bp, &lum, Some(&chroma), &FeatureWeights::default(), 3).unwrap();
        assert_eq!(fp.dim(), 36);
        let base = fp.feature(PatchRef::new(0, 1, 2)).unwrap();
        for t in Transform::ALL {
            let direct = fp.feature(PatchRef::new(0, 1, 2).with_transform(t)).unwrap();
            assert_eq!(direct, transform_feature(&base, t));
        }
        assert!(fp.feature(PatchRef::new(0, 3, 0)).is_err());
    }

    #[test]
    fn weighted_l1_is_sum_of_terms() {
        // Hand-made 2x2 patches; distance computed per term then summed.
        let bp_a = Raster::from_plane(2, 2, "L", vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let bp_b = Raster::from_plane(2, 2, "L", vec![0.0, 2.0, 0.5, -1.0]).unwrap();
        let lum_a = Raster::from_plane(2, 2, "L", vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let lum_b = Raster::from_plane(2, 2, "L", vec![12.0, 18.0, 30.0, 44.0]).unwrap();
        let w = FeatureWeights { edge: 1.0, lum: 0.25, chroma: 0.0 };
        let fa = extract_feature(&bp_a, &lum_a, None, PatchRef::new(0, 0, 0), &w, 2).unwrap();
        let fb = extract_feature(&bp_b, &lum_b, None, PatchRef::new(1, 0, 0), &w, 2).unwrap();
        let edge_term = 1.0 + 4.0 + 0.0 + 4.0;
        let lum_term = 2.0 + 2.0 + 0.0 + 4.0;
        let d = l1_distance(&fa.values, &fb.values).unwrap();
        assert!((d - (edge_term + 0.25 * lum_term)).abs() < 1e-6);
    }

    #[test]
    fn early_exit_distance_agrees_with_full() {
        let bp = ramp(6, 6, "L", 1.0);
        let lum = ramp(6, 6, "L", 0.5);
        let fp = FeaturePlanes::new(&bp, &lum, None, &FeatureWeights::default(), 3).unwrap();
        let q = fp.feature(PatchRef::new(0, 2, 2)).unwrap();
        for m in [Metric::L1, Metric::L2] {
            let full = fp.distance(PixelCoord::new(0, 1), &q.values, m, f32::INFINITY);
            let oracle = m.distance(&fp.feature(PatchRef::new(0, 0, 1)).unwrap().values, &q.values);
            assert_eq!(full, oracle);
            assert!(fp.distance(PixelCoord::new(0, 1), &q.values, m, 1.0) > 1.0);
        }
    }

    proptest! {
        #[test]
        fn transforms_preserve_distances(a in proptest::collection::vec(-50f32..50.0, 18),
                                         b in proptest::collection::vec(-50f32..50.0, 18)) {
            let fa = PatchFeature { values: a, patch: PatchRef::new(0, 0, 0), width: 3 };
            let fb = PatchFeature { values: b, patch: PatchRef::new(0, 0, 0), width: 3 };
            let d = l1_distance(&fa.values, &fb.values).unwrap();
            for t in Transform::ALL {
                let dt = l1_distance(&transform_feature(&fa, t).values, &transform_feature(&fb, t).values).unwrap();
                prop_assert!((d - dt).abs() <= 1e-3 * d.max(1.0));
            }
        }
    }

    #[test]
    fn transform_list_parsing() {
        assert_eq!(parse_transforms("rot180,identity,rot180").unwrap(), vec![Transform::Identity, Transform::Rot180]);
        assert!(parse_transforms("").is_err());
        assert!(parse_transforms("rot90").is_err());
        assert_eq!(format_transforms(&Transform::ALL), "identity,flip_h,flip_v,rot180");
    }

    #[test]
    fn compose_table() {
        assert_eq!(compose(Transform::FlipH, Transform::FlipV), Transform::Rot180);
        for t in Transform::ALL {
            assert_eq!(compose(t, t), Transform::Identity);
            assert_eq!(compose(t, Transform::Identity), t);
        }
    }
}
