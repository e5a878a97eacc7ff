//! Approximate nearest-neighbor search over patch features.
//!
//! A k-d tree whose leaves hold indices into a [`FeatureSource`]; coordinates
//! are read back from the source on demand, so the tree itself costs a few
//! bytes per patch. Search is exact when `epsilon` is 0 and otherwise returns
//! neighbors within `epsilon` of the true ones (additive, in the metric's
//! units). Transformed matches are found by searching with the inversely
//! transformed query.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::patch::{FeaturePlanes, PatchFeature, PatchRef, Transform};
use crate::raster::PixelCoord;

pub const DEFAULT_LEAF_SIZE: usize = 8;

/// Random access to a set of equally sized feature vectors.
pub trait FeatureSource: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn patch_width(&self) -> usize;
    fn patch_ref(&self, i: usize) -> PatchRef;
    fn coord(&self, i: usize, d: usize) -> f32;
    fn write_feature(&self, i: usize, out: &mut [f32]);
    /// May return any value above `bound` once the distance exceeds it.
    fn distance(&self, i: usize, query: &[f32], metric: Metric, bound: f32) -> f32;
    /// Bytes owned by the source beyond the shared feature planes.
    fn overhead_bytes(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    source: u32,
    x: u32,
    y: u32,
}

/// Untransformed patches of one or more source images, cut from shared
/// [`FeaturePlanes`].
#[derive(Debug, Clone)]
pub struct SourcePatches {
    planes: Vec<FeaturePlanes>,
    entries: Vec<Entry>,
    patch_width: usize,
    dim: usize,
}

impl SourcePatches {
    /// Every patch origin of every source.
    pub fn dense(planes: Vec<FeaturePlanes>) -> Result<Self> {
        let origins: Vec<Vec<PixelCoord>> = planes
            .iter()
            .map(|p| {
                let (w, h) = p.extent();
                let n = p.patch_width();
                (0..=h - n)
                    .flat_map(|y| (0..=w - n).map(move |x| PixelCoord::new(x, y)))
                    .collect()
            })
            .collect();
        Self::with_origins(planes, origins)
    }

    pub fn with_origins(planes: Vec<FeaturePlanes>, origins: Vec<Vec<PixelCoord>>) -> Result<Self> {
        let first = planes.first().ok_or(Error::EmptyIndex)?;
        let (patch_width, dim) = (first.patch_width(), first.dim());
        if origins.len() != planes.len() {
            return Err(Error::LengthMismatch {
                expected: planes.len(),
                found: origins.len(),
            });
        }
        let mut entries = Vec::new();
        for (s, (p, os)) in planes.iter().zip(&origins).enumerate() {
            if p.patch_width() != patch_width || p.dim() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            for &o in os {
                p.check_origin(o)?;
                entries.push(Entry {
                    source: s as u32,
                    x: o.x as u32,
                    y: o.y as u32,
                });
            }
        }
        Ok(SourcePatches {
            planes,
            entries,
            patch_width,
            dim,
        })
    }

    pub fn planes(&self) -> &[FeaturePlanes] {
        &self.planes
    }

    pub fn backing_bytes(&self) -> usize {
        self.planes.iter().map(|p| p.backing_bytes()).sum()
    }
}

impl FeatureSource for SourcePatches {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn patch_width(&self) -> usize {
        self.patch_width
    }

    fn patch_ref(&self, i: usize) -> PatchRef {
        let e = self.entries[i];
        PatchRef::new(e.source, e.x as usize, e.y as usize)
    }

    #[inline]
    fn coord(&self, i: usize, d: usize) -> f32 {
        let e = self.entries[i];
        self.planes[e.source as usize].coord(PixelCoord::new(e.x as usize, e.y as usize), d)
    }

    fn write_feature(&self, i: usize, out: &mut [f32]) {
        let e = self.entries[i];
        self.planes[e.source as usize].write_feature(
            PixelCoord::new(e.x as usize, e.y as usize),
            Transform::Identity,
            out,
        );
    }

    #[inline]
    fn distance(&self, i: usize, query: &[f32], metric: Metric, bound: f32) -> f32 {
        let e = self.entries[i];
        self.planes[e.source as usize].distance(
            PixelCoord::new(e.x as usize, e.y as usize),
            query,
            metric,
            bound,
        )
    }

    fn overhead_bytes(&self) -> usize {
        self.entries.capacity() * std::mem::size_of::<Entry>()
    }
}

/// Features stored row-wise in one flat buffer.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    values: Vec<f32>,
    refs: Vec<PatchRef>,
    dim: usize,
    patch_width: usize,
}

impl FeatureMatrix {
    pub fn new(features: &[PatchFeature]) -> Result<Self> {
        let first = features.first().ok_or(Error::EmptyIndex)?;
        let (dim, patch_width) = (first.len(), first.width);
        if dim == 0 || dim % (patch_width * patch_width) != 0 {
            return Err(Error::param("feature", format!("length {dim} is not a whole number of blocks")));
        }
        let mut values = Vec::with_capacity(dim * features.len());
        for f in features {
            if f.len() != dim || f.width != patch_width {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    found: f.len(),
                });
            }
            values.extend_from_slice(&f.values);
        }
        Ok(FeatureMatrix {
            values,
            refs: features.iter().map(|f| f.patch).collect(),
            dim,
            patch_width,
        })
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

impl FeatureSource for FeatureMatrix {
    fn len(&self) -> usize {
        self.refs.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn patch_width(&self) -> usize {
        self.patch_width
    }

    fn patch_ref(&self, i: usize) -> PatchRef {
        self.refs[i]
    }

    fn coord(&self, i: usize, d: usize) -> f32 {
        self.values[i * self.dim + d]
    }

    fn write_feature(&self, i: usize, out: &mut [f32]) {
        out.copy_from_slice(self.row(i));
    }

    fn distance(&self, i: usize, query: &[f32], metric: Metric, _bound: f32) -> f32 {
        metric.distance(self.row(i), query)
    }

    fn overhead_bytes(&self) -> usize {
        self.values.capacity() * 4 + self.refs.capacity() * std::mem::size_of::<PatchRef>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexParams {
    pub metric: Metric,
    pub epsilon: f32,
    pub leaf_size: usize,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            metric: Metric::L1,
            epsilon: 0.0,
            leaf_size: DEFAULT_LEAF_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub patch: PatchRef,
    pub distance: f32,
}

impl Match {
    fn key_lt(&self, other: &Match) -> bool {
        self.distance < other.distance || (self.distance == other.distance && self.patch < other.patch)
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    /// `lo..=hi` is the extent of the node's cell along `dim`.
    Split {
        dim: u32,
        value: f32,
        lo: f32,
        hi: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        end: u32,
    },
}

pub struct PatchIndex<S> {
    source: S,
    params: IndexParams,
    perm: Vec<u32>,
    nodes: Vec<Node>,
    /// Bounding box of all features, one `(lo, hi)` per dimension.
    root_box: Vec<(f32, f32)>,
}

pub fn build_index<S: FeatureSource>(source: S, params: IndexParams) -> Result<PatchIndex<S>> {
    if source.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if source.len() > u32::MAX as usize {
        return Err(Error::param("index", "more than 2^32 patches"));
    }
    if !(params.epsilon >= 0.0 && params.epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("{} is not a finite non-negative value", params.epsilon)));
    }
    if params.leaf_size == 0 {
        return Err(Error::param("leaf-size", "must be at least 1"));
    }
    let mut perm: Vec<u32> = (0..source.len() as u32).collect();
    let mut builder = Builder {
        src: &source,
        leaf_size: params.leaf_size,
        nodes: Vec::new(),
        scratch: vec![0.0; source.dim()],
    };
    let n = perm.len();
    let mut cell = builder.bounds(&perm);
    let root_box = cell.clone();
    builder.node(&mut perm, 0, n, &mut cell);
    let nodes = builder.nodes;
    Ok(PatchIndex {
        source,
        params,
        perm,
        nodes,
        root_box,
    })
}

struct Builder<'a, S> {
    src: &'a S,
    leaf_size: usize,
    nodes: Vec<Node>,
    scratch: Vec<f32>,
}

impl<S: FeatureSource> Builder<'_, S> {
    fn bounds(&mut self, ids: &[u32]) -> Vec<(f32, f32)> {
        let mut b = vec![(f32::INFINITY, f32::NEG_INFINITY); self.src.dim()];
        for &i in ids {
            self.src.write_feature(i as usize, &mut self.scratch);
            for (d, &v) in self.scratch.iter().enumerate() {
                b[d].0 = b[d].0.min(v);
                b[d].1 = b[d].1.max(v);
            }
        }
        b
    }

    fn node(&mut self, perm: &mut [u32], start: usize, end: usize, cell: &mut [(f32, f32)]) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        if end - start <= self.leaf_size {
            return id;
        }
        // Widest spread of the points themselves; the first such dimension
        // on ties.
        let spread = self.bounds(&perm[start..end]);
        let (mut best, mut width) = (0, spread[0].1 - spread[0].0);
        for (d, &(lo, hi)) in spread.iter().enumerate().skip(1) {
            if hi - lo > width {
                best = d;
                width = hi - lo;
            }
        }
        if width <= 0.0 {
            return id;
        }
        let mid = (end - start) / 2;
        let src = self.src;
        let slice = &mut perm[start..end];
        slice.select_nth_unstable_by(mid, |&a, &b| {
            src.coord(a as usize, best)
                .total_cmp(&src.coord(b as usize, best))
                .then(a.cmp(&b))
        });
        let value = src.coord(slice[mid] as usize, best);
        let (lo, hi) = cell[best];
        cell[best].1 = value;
        let left = self.node(perm, start, start + mid, cell);
        cell[best] = (value, hi);
        let right = self.node(perm, start + mid, end, cell);
        cell[best] = (lo, hi);
        self.nodes[id as usize] = Node::Split {
            dim: best as u32,
            value,
            lo,
            hi,
            left,
            right,
        };
        id
    }
}

/// Fixed-capacity list of the best matches so far, kept sorted.
struct Best {
    k: usize,
    items: Vec<Match>,
}

impl Best {
    fn worst(&self) -> f32 {
        if self.items.len() < self.k {
            f32::INFINITY
        } else {
            self.items[self.k - 1].distance
        }
    }

    fn offer(&mut self, m: Match) {
        if self.items.len() == self.k {
            if !m.key_lt(&self.items[self.k - 1]) {
                return;
            }
            self.items.pop();
        }
        let at = self.items.partition_point(|x| x.key_lt(&m));
        self.items.insert(at, m);
    }
}

/// Pending cell in the search queue, ordered by lower bound then node id.
#[derive(Debug, Clone, Copy)]
struct Pending {
    rd: f64,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        other.rd.total_cmp(&self.rd).then(other.node.cmp(&self.node))
    }
}

impl<S: FeatureSource> PatchIndex<S> {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Bytes used by the tree and the source's per-patch bookkeeping, not
    /// counting shared feature planes.
    pub fn overhead_bytes(&self) -> usize {
        self.perm.capacity() * 4
            + self.nodes.capacity() * std::mem::size_of::<Node>()
            + self.root_box.capacity() * 8
            + self.source.overhead_bytes()
    }

    pub fn nearest(&self, query: &[f32]) -> Result<Match> {
        Ok(self.k_nearest(query, 1)?[0])
    }

    pub fn k_nearest(&self, query: &[f32], k: usize) -> Result<Vec<Match>> {
        self.k_nearest_with_transforms(query, k, &[Transform::Identity])
    }

    pub fn nearest_with_transforms(&self, query: &[f32], transforms: &[Transform]) -> Result<Match> {
        Ok(self.k_nearest_with_transforms(query, 1, transforms)?[0])
    }

    /// The `k` best matches over all patches under all `transforms`, ordered
    /// by distance then [`PatchRef`].
    pub fn k_nearest_with_transforms(&self, query: &[f32], k: usize, transforms: &[Transform]) -> Result<Vec<Match>> {
        let dim = self.dim();
        if query.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                found: query.len(),
            });
        }
        if transforms.is_empty() {
            return Err(Error::param("transforms", "empty transform set"));
        }
        let total = self.len() * transforms.len();
        if k == 0 || k > total {
            return Err(Error::KOutOfRange { k, len: total });
        }
        let mut best = Best {
            k,
            items: Vec::with_capacity(k + 1),
        };
        let w = self.source.patch_width();
        let mut buf = vec![0.0; dim];
        let mut heap = BinaryHeap::new();
        for &t in transforms {
            let values: &[f32] = if t == Transform::Identity {
                query
            } else {
                for (src, dst) in query.chunks(w * w).zip(buf.chunks_mut(w * w)) {
                    t.inverse().apply_block(src, w, dst);
                }
                &buf
            };
            self.search(values, t, &mut heap, &mut best);
        }
        Ok(best.items)
    }

    #[inline]
    fn offset(&self, q: f32, lo: f32, hi: f32) -> f64 {
        let d = if q < lo {
            lo as f64 - q as f64
        } else if q > hi {
            q as f64 - hi as f64
        } else {
            0.0
        };
        match self.params.metric {
            Metric::L1 => d,
            Metric::L2 => d * d,
        }
    }

    #[inline]
    fn lower_bound(&self, rd: f64) -> f64 {
        match self.params.metric {
            Metric::L1 => rd,
            Metric::L2 => rd.max(0.0).sqrt(),
        }
    }

    /// Whether a cell at reduced distance `rd` may still hold a result that
    /// improves on the current worst by more than epsilon. The relative
    /// slack absorbs f32 rounding in leaf distances so that epsilon = 0 stays
    /// exact.
    #[inline]
    fn worth_visiting(&self, rd: f64, best: &Best) -> bool {
        let worst = best.worst() as f64;
        self.lower_bound(rd) + self.params.epsilon as f64 <= worst + worst.abs() * 1e-5
    }

    /// Best-bin-first traversal: cells are expanded in order of their lower
    /// bound, and the search ends once no pending cell can help.
    fn search(&self, q: &[f32], transform: Transform, heap: &mut BinaryHeap<Pending>, best: &mut Best) {
        heap.clear();
        let rd: f64 = q
            .iter()
            .zip(&self.root_box)
            .map(|(&v, &(lo, hi))| self.offset(v, lo, hi))
            .sum();
        heap.push(Pending { rd, node: 0 });
        while let Some(Pending { rd, mut node }) = heap.pop() {
            if !self.worth_visiting(rd, best) {
                break;
            }
            loop {
                match self.nodes[node as usize] {
                    Node::Leaf { start, end } => {
                        for &i in &self.perm[start as usize..end as usize] {
                            let bound = best.worst();
                            let d = self.source.distance(i as usize, q, self.params.metric, bound);
                            if d <= bound {
                                let patch = self.source.patch_ref(i as usize).with_transform(transform);
                                best.offer(Match { patch, distance: d });
                            }
                        }
                        break;
                    }
                    Node::Split {
                        dim,
                        value,
                        lo,
                        hi,
                        left,
                        right,
                    } => {
                        let v = q[dim as usize];
                        let old = self.offset(v, lo, hi);
                        let (near, far, far_off) = if v < value {
                            (left, right, self.offset(v, value, hi))
                        } else {
                            (right, left, self.offset(v, lo, value))
                        };
                        let far_rd = rd - old + far_off;
                        if self.worth_visiting(far_rd, best) {
                            heap.push(Pending { rd: far_rd, node: far });
                        }
                        node = near;
                    }
                }
            }
        }
    }
}
