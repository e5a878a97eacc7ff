//! Patch distances: L1, L2 and the earth mover's distance.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest patch width accepted by [`emd`]; the flow network has `w^4` arcs.
pub const EMD_MAX_WIDTH: usize = 8;

/// Masses are quantized to this many units per intensity level.
const MASS_UNITS: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Metric {
    #[default]
    L1,
    L2,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
        }
    }

    /// Lengths must match; checked only in debug builds.
    #[inline]
    pub fn distance(self, a: &[f32], b: &[f32]) -> f32 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, |s, d| s + d),
            Metric::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .fold(0.0, |s, d| s + d)
                .sqrt(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            other => Err(Error::param("metric", format!("`{other}` is not l1 or l2"))),
        }
    }
}

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

pub fn l1_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    same_len(a, b)?;
    Ok(Metric::L1.distance(a, b))
}

pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    same_len(a, b)?;
    Ok(Metric::L2.distance(a, b))
}

/// Non-negative mass on a `w x w` grid, one stack of blocks per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDistribution {
    width: usize,
    mass: Vec<f64>,
}

impl MassDistribution {
    pub fn new(width: usize, mass: Vec<f64>) -> Result<Self> {
        if width == 0 || mass.len() != width * width {
            return Err(Error::param(
                "mass",
                format!("{} masses do not form a {width}x{width} grid", mass.len()),
            ));
        }
        if let Some(bad) = mass.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::param("mass", format!("mass {bad} is not a finite value >= 0")));
        }
        Ok(MassDistribution { width, mass })
    }

    /// Uses luminosity samples directly as block heights.
    pub fn from_luminosity(width: usize, values: &[f32]) -> Result<Self> {
        Self::new(width, values.iter().map(|&v| v as f64).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn scaled_to(&self, total: f64) -> Result<Self> {
        let own = self.total();
        if own <= 0.0 {
            return Err(Error::param("mass", "cannot rescale a zero-mass distribution"));
        }
        let k = total / own;
        Ok(MassDistribution {
            width: self.width,
            mass: self.mass.iter().map(|m| m * k).collect(),
        })
    }

    /// Integer units summing to exactly `units` (largest-remainder rounding,
    /// ties to the lower index).
    fn quantize(&self, units: i64) -> Vec<i64> {
        let scaled: Vec<f64> = self.mass.iter().map(|m| m * MASS_UNITS).collect();
        let mut q: Vec<i64> = scaled.iter().map(|s| s.floor() as i64).collect();
        let mut rest = units - q.iter().sum::<i64>();
        if rest > 0 {
            let mut order: Vec<usize> = (0..q.len()).collect();
            order.sort_by(|&i, &j| {
                let (fi, fj) = (scaled[i] - scaled[i].floor(), scaled[j] - scaled[j].floor());
                fj.total_cmp(&fi).then(i.cmp(&j))
            });
            for &i in order.iter().cycle() {
                if rest == 0 {
                    break;
                }
                q[i] += 1;
                rest -= 1;
            }
        }
        q
    }
}

/// Earth mover's distance with Manhattan ground distance. `b` is rescaled to
/// the total mass of `a` first.
pub fn emd(a: &MassDistribution, b: &MassDistribution) -> Result<f64> {
    check_emd_width(a, b)?;
    let (ta, tb) = (a.total(), b.total());
    if ta == 0.0 && tb == 0.0 {
        return Ok(0.0);
    }
    if ta == 0.0 || tb == 0.0 {
        return Err(Error::UnequalMass { a: ta, b: tb });
    }
    emd_equal_mass(a, &b.scaled_to(ta)?)
}

/// Earth mover's distance between distributions that already carry the same
/// total mass (within `1e-6` relative).
pub fn emd_equal_mass(a: &MassDistribution, b: &MassDistribution) -> Result<f64> {
    check_emd_width(a, b)?;
    let (ta, tb) = (a.total(), b.total());
    if (ta - tb).abs() > 1e-6 * ta.abs().max(tb.abs()).max(1.0) {
        return Err(Error::UnequalMass { a: ta, b: tb });
    }
    let units = (ta * MASS_UNITS).round() as i64;
    if units == 0 {
        return Ok(0.0);
    }
    let supply = a.quantize(units);
    let demand = b.quantize(units);
    let cost = transport_cost(a.width, &supply, &demand);
    Ok(cost as f64 / MASS_UNITS)
}

fn check_emd_width(a: &MassDistribution, b: &MassDistribution) -> Result<()> {
    if a.width != b.width {
        return Err(Error::LengthMismatch {
            expected: a.mass.len(),
            found: b.mass.len(),
        });
    }
    if a.width > EMD_MAX_WIDTH {
        return Err(Error::PatchTooLarge {
            width: a.width,
            max: EMD_MAX_WIDTH,
        });
    }
    Ok(())
}

/// Optimal transport cost on the bipartite supply/demand network via
/// successive shortest paths with Johnson potentials.
fn transport_cost(width: usize, supply: &[i64], demand: &[i64]) -> i64 {
    let sources: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0).collect();
    let sinks: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0).collect();
    let total: i64 = supply.iter().sum();

    let mut net = FlowNetwork::new(2 + sources.len() + sinks.len());
    let s = 0;
    let t = 1;
    let src_node = |k: usize| 2 + k;
    let dst_node = |k: usize| 2 + sources.len() + k;
    for (k, &i) in sources.iter().enumerate() {
        net.add_arc(s, src_node(k), supply[i], 0);
    }
    for (k, &j) in sinks.iter().enumerate() {
        net.add_arc(dst_node(k), t, demand[j], 0);
    }
    for (ks, &i) in sources.iter().enumerate() {
        let (xi, yi) = ((i % width) as i64, (i / width) as i64);
        for (kd, &j) in sinks.iter().enumerate() {
            let (xj, yj) = ((j % width) as i64, (j / width) as i64);
            net.add_arc(src_node(ks), dst_node(kd), total, (xi - xj).abs() + (yi - yj).abs());
        }
    }
    let (flow, cost) = net.min_cost_flow(s, t, total);
    debug_assert_eq!(flow, total);
    cost
}

struct Arc {
    to: usize,
    cap: i64,
    cost: i64,
}

/// Residual network for integer min-cost flow.
struct FlowNetwork {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        FlowNetwork {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: i64) {
        self.adj[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap, cost });
        self.adj[to].push(self.arcs.len());
        self.arcs.push(Arc {
            to: from,
            cap: 0,
            cost: -cost,
        });
    }

    fn min_cost_flow(&mut self, s: usize, t: usize, limit: i64) -> (i64, i64) {
        let n = self.adj.len();
        let mut potential = vec![0i64; n];
        let mut flow = 0;
        let mut cost = 0;
        let mut dist = vec![i64::MAX; n];
        let mut prev_arc = vec![usize::MAX; n];
        while flow < limit {
            dist.iter_mut().for_each(|d| *d = i64::MAX);
            prev_arc.iter_mut().for_each(|p| *p = usize::MAX);
            dist[s] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0i64, s)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &e in &self.adj[u] {
                    let arc = &self.arcs[e];
                    if arc.cap == 0 {
                        continue;
                    }
                    let nd = d + arc.cost + potential[u] - potential[arc.to];
                    if nd < dist[arc.to] {
                        dist[arc.to] = nd;
                        prev_arc[arc.to] = e;
                        heap.push(Reverse((nd, arc.to)));
                    }
                }
            }
            if dist[t] == i64::MAX {
                break;
            }
            for v in 0..n {
                if dist[v] != i64::MAX {
                    potential[v] += dist[v];
                }
            }
            let mut push = limit - flow;
            let mut v = t;
            while v != s {
                let e = prev_arc[v];
                push = push.min(self.arcs[e].cap);
                v = self.arcs[e ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let e = prev_arc[v];
                self.arcs[e].cap -= push;
                self.arcs[e ^ 1].cap += push;
                cost += push * self.arcs[e].cost;
                v = self.arcs[e ^ 1].to;
            }
            flow += push;
        }
        (flow, cost)
    }
}
