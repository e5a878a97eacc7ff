//! Min-cut seams between previously placed pixels and an incoming patch.
//!
//! Each pair of 4-neighbors `(p, q)` in the overlap costs
//! `|a(p) - b(p)| + |a(q) - b(q)|` to separate, where `a` is what the canvas
//! already holds and `b` is the new patch. Pixels constrained to the old side
//! hang off the source terminal, pixels constrained to the new side off the
//! sink; the minimum cut is found with shortest augmenting paths.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::raster::{PixelCoord, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    Free,
    /// Must keep the canvas value.
    Old,
    /// Must take the patch value.
    New,
}

/// Rectangle of luminosity values under one patch placement.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRegion {
    pub origin: PixelCoord,
    pub width: usize,
    pub height: usize,
    /// Canvas luminosity (`a`).
    pub old: Vec<f32>,
    /// Patch luminosity (`b`).
    pub new: Vec<f32>,
    pub constraints: Vec<Constraint>,
}

impl OverlapRegion {
    pub fn new(
        origin: PixelCoord,
        width: usize,
        height: usize,
        old: Vec<f32>,
        new: Vec<f32>,
        constraints: Vec<Constraint>,
    ) -> Result<Self> {
        let n = width * height;
        if n == 0 || old.len() != n || new.len() != n || constraints.len() != n {
            return Err(Error::param(
                "overlap",
                format!("{width}x{height} region with mismatched pixel buffers"),
            ));
        }
        Ok(OverlapRegion {
            origin,
            width,
            height,
            old,
            new,
            constraints,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, c: Constraint) -> usize {
        self.constraints.iter().filter(|&&k| k == c).count()
    }

    #[inline]
    pub fn energy(&self, p: usize, q: usize) -> f64 {
        (self.old[p] - self.new[p]).abs() as f64 + (self.old[q] - self.new[q]).abs() as f64
    }

    /// 4-neighbor pairs, row-major, right neighbor before down neighbor.
    pub fn neighbor_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (w, h) = (self.width, self.height);
        (0..h).flat_map(move |y| {
            (0..w).flat_map(move |x| {
                let p = y * w + x;
                let right = (x + 1 < w).then_some((p, p + 1));
                let down = (y + 1 < h).then_some((p, p + w));
                right.into_iter().chain(down)
            })
        })
    }

    /// Sum of pair energies across label changes of `mask`.
    pub fn seam_energy(&self, mask: &SeamMask) -> f64 {
        self.neighbor_pairs()
            .filter(|&(p, q)| mask.labels[p] != mask.labels[q])
            .map(|(p, q)| self.energy(p, q))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    KeepOld,
    TakeNew,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeamMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
}

impl SeamMask {
    pub fn uniform(width: usize, height: usize, label: Label) -> Self {
        SeamMask {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn takes_new(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == Label::TakeNew).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamArc {
    pub p: usize,
    pub q: usize,
    pub capacity: f64,
}

/// Flow network for one overlap region. Node `i < n` is pixel `i`; the two
/// terminals follow.
#[derive(Debug, Clone)]
pub struct SeamGraph {
    width: usize,
    height: usize,
    arcs: Vec<SeamArc>,
    terminal_capacity: f64,
    constraints: Vec<Constraint>,
}

impl SeamGraph {
    pub fn arcs(&self) -> &[SeamArc] {
        &self.arcs
    }

    pub fn terminal_capacity(&self) -> f64 {
        self.terminal_capacity
    }

    pub fn finite_capacity_sum(&self) -> f64 {
        self.arcs.iter().map(|a| a.capacity).sum()
    }
}

pub fn build_seam_graph(ov: &OverlapRegion) -> Result<SeamGraph> {
    if ov.count(Constraint::Old) == 0 {
        return Err(Error::EmptyConstraintSet("old-side"));
    }
    if ov.count(Constraint::New) == 0 {
        return Err(Error::EmptyConstraintSet("new-side"));
    }
    let arcs: Vec<SeamArc> = ov
        .neighbor_pairs()
        .map(|(p, q)| SeamArc {
            p,
            q,
            capacity: ov.energy(p, q),
        })
        .collect();
    let finite: f64 = arcs.iter().map(|a| a.capacity).sum();
    Ok(SeamGraph {
        width: ov.width,
        height: ov.height,
        arcs,
        terminal_capacity: finite + 1.0,
        constraints: ov.constraints.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinCut {
    pub mask: SeamMask,
    /// Capacity of arcs leaving the source side.
    pub cost: f64,
    /// Total flow pushed by the solver.
    pub flow: f64,
}

struct Edge {
    to: usize,
    residual: f64,
}

/// Edmonds-Karp max-flow; the old side of the mask is everything still
/// reachable from the source in the final residual graph.
pub fn min_cut(g: &SeamGraph) -> MinCut {
    let n = g.width * g.height;
    let source = n;
    let sink = n + 1;
    let mut edges: Vec<Edge> = Vec::with_capacity(4 * g.arcs.len() + 4 * n);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + 2];
    let mut add = |edges: &mut Vec<Edge>, u: usize, v: usize, cuv: f64, cvu: f64| {
        adj[u].push(edges.len());
        edges.push(Edge { to: v, residual: cuv });
        adj[v].push(edges.len());
        edges.push(Edge { to: u, residual: cvu });
    };
    for (p, c) in g.constraints.iter().enumerate() {
        match c {
            Constraint::Old => add(&mut edges, source, p, g.terminal_capacity, 0.0),
            Constraint::New => add(&mut edges, p, sink, g.terminal_capacity, 0.0),
            Constraint::Free => {}
        }
    }
    for a in &g.arcs {
        add(&mut edges, a.p, a.q, a.capacity, a.capacity);
    }

    let mut flow = 0.0;
    let mut prev = vec![usize::MAX; n + 2];
    loop {
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        let mut queue = VecDeque::from([source]);
        let mut seen = vec![false; n + 2];
        seen[source] = true;
        while let Some(u) = queue.pop_front() {
            if u == sink {
                break;
            }
            for &e in &adj[u] {
                let v = edges[e].to;
                if !seen[v] && edges[e].residual > 0.0 {
                    seen[v] = true;
                    prev[v] = e;
                    queue.push_back(v);
                }
            }
        }
        if !seen[sink] {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != source {
            let e = prev[v];
            push = push.min(edges[e].residual);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let e = prev[v];
            edges[e].residual -= push;
            edges[e ^ 1].residual += push;
            v = edges[e ^ 1].to;
        }
        flow += push;
    }

    // Residual reachability from the source.
    let mut reach = vec![false; n + 2];
    reach[source] = true;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &e in &adj[u] {
            let v = edges[e].to;
            if !reach[v] && edges[e].residual > 0.0 {
                reach[v] = true;
                queue.push_back(v);
            }
        }
    }
    let labels: Vec<Label> = (0..n)
        .map(|p| if reach[p] { Label::KeepOld } else { Label::TakeNew })
        .collect();
    let cost = g
        .arcs
        .iter()
        .filter(|a| reach[a.p] != reach[a.q])
        .map(|a| a.capacity)
        .sum();
    MinCut {
        mask: SeamMask {
            width: g.width,
            height: g.height,
            labels,
        },
        cost,
        flow,
    }
}

fn check_geometry(canvas: &Raster, patch: &Raster, origin: PixelCoord, w: usize, h: usize) -> Result<()> {
    if patch.extent() != (w, h) {
        return Err(Error::ExtentMismatch {
            expected: (w, h),
            found: patch.extent(),
        });
    }
    if patch.channel_count() != canvas.channel_count() {
        return Err(Error::ChannelLayout {
            expected: canvas.names(),
            found: patch.names(),
        });
    }
    if origin.x + w > canvas.width() || origin.y + h > canvas.height() {
        return Err(Error::PatchOutOfBounds {
            x: origin.x,
            y: origin.y,
            width: w.max(h),
            image_width: canvas.width(),
            image_height: canvas.height(),
        });
    }
    Ok(())
}

/// Copies patch pixels labeled [`Label::TakeNew`] into the canvas, on every
/// plane.
pub fn composite(canvas: &mut Raster, patch: &Raster, origin: PixelCoord, mask: &SeamMask) -> Result<()> {
    check_geometry(canvas, patch, origin, mask.width, mask.height)?;
    for c in 0..canvas.channel_count() {
        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.labels[y * mask.width + x] == Label::TakeNew {
                    canvas.set(c, origin.x + x, origin.y + y, patch.get(c, x, y));
                }
            }
        }
    }
    Ok(())
}

fn bfs_distance(ov: &OverlapRegion, from: Constraint) -> Vec<Option<u32>> {
    let (w, h) = (ov.width, ov.height);
    let mut dist = vec![None; w * h];
    let mut queue = VecDeque::new();
    for (p, &c) in ov.constraints.iter().enumerate() {
        if c == from {
            dist[p] = Some(0);
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        let d = dist[p].unwrap() + 1;
        let (x, y) = (p % w, p / w);
        let mut visit = |q: usize| {
            if dist[q].is_none() {
                dist[q] = Some(d);
                queue.push_back(q);
            }
        };
        if x > 0 {
            visit(p - 1);
        }
        if x + 1 < w {
            visit(p + 1);
        }
        if y > 0 {
            visit(p - w);
        }
        if y + 1 < h {
            visit(p + w);
        }
    }
    dist
}

/// Blend weights for feathering: 0 at old-constrained pixels, 1 at
/// new-constrained ones, linear in 4-connected distance between them.
pub fn feather_weights(ov: &OverlapRegion) -> Vec<f32> {
    let d_old = bfs_distance(ov, Constraint::Old);
    let d_new = bfs_distance(ov, Constraint::New);
    d_old
        .iter()
        .zip(&d_new)
        .map(|(o, n)| match (o, n) {
            (_, Some(0)) => 1.0,
            (Some(0), _) => 0.0,
            (Some(o), Some(n)) => *o as f32 / (*o + *n) as f32,
            (None, _) => 1.0,
            (Some(_), None) => 0.0,
        })
        .collect()
}

/// Linear ramp blend of the patch over the canvas across the overlap.
pub fn feather(canvas: &mut Raster, patch: &Raster, ov: &OverlapRegion) -> Result<()> {
    check_geometry(canvas, patch, ov.origin, ov.width, ov.height)?;
    let alpha = feather_weights(ov);
    for c in 0..canvas.channel_count() {
        for y in 0..ov.height {
            for x in 0..ov.width {
                let t = alpha[y * ov.width + x];
                let (cx, cy) = (ov.origin.x + x, ov.origin.y + y);
                let a = canvas.get(c, cx, cy);
                let b = patch.get(c, x, y);
                canvas.set(c, cx, cy, a + t * (b - a));
            }
        }
    }
    Ok(())
}
