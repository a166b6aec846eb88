#![allow(dead_code)]

use rand::Rng;
use skylane::duration::DurationFunction;
use skylane::model::CoarseGrid;
use skylane::scenario::{Bounds, Environment, Horizon, Region, Snapshot, TargetSpec, Vec2};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

// ---- static rectangle worlds ----------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub lo: Vec2,
    pub hi: Vec2,
}

impl Rect {
    pub fn contains(&self, p: Vec2) -> bool {
        let eps = 1e-9;
        p.x >= self.lo.x - eps && p.x <= self.hi.x + eps && p.y >= self.lo.y - eps && p.y <= self.hi.y + eps
    }

    fn distance(&self, p: Vec2) -> f64 {
        let dx = (self.lo.x - p.x).max(0.0).max(p.x - self.hi.x);
        let dy = (self.lo.y - p.y).max(0.0).max(p.y - self.hi.y);
        (dx * dx + dy * dy).sqrt()
    }

    /// Liang-Barsky clip of the closed segment against the closed rectangle.
    pub fn hits_segment(&self, a: Vec2, b: Vec2) -> bool {
        let d = b - a;
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let eps = 1e-9;
        for (p, q) in [
            (-d.x, a.x - (self.lo.x - eps)),
            (d.x, (self.hi.x + eps) - a.x),
            (-d.y, a.y - (self.lo.y - eps)),
            (d.y, (self.hi.y + eps) - a.y),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        t0 <= t1
    }
}

/// Static world with axis-aligned rectangular obstacles.
#[derive(Debug, Clone)]
pub struct RectWorld {
    pub bounds: Bounds,
    pub target: TargetSpec,
    pub rects: Vec<Rect>,
}

pub struct RectSnapshot<'a>(&'a RectWorld);

impl Snapshot for RectSnapshot<'_> {
    fn classify(&self, x: Vec2) -> Region {
        let w = self.0;
        if !w.bounds.contains(x) {
            Region::Outside
        } else if w.rects.iter().any(|r| r.contains(x)) {
            Region::Obstacle
        } else if w.target.contains(x) {
            Region::Target
        } else {
            Region::Free
        }
    }

    fn obstacle_nearby(&self, x: Vec2, reach: f64) -> bool {
        self.0.rects.iter().any(|r| r.distance(x) <= reach + 1e-9)
    }
}

impl Environment for RectWorld {
    type Snapshot<'a> = RectSnapshot<'a>;

    fn bounds(&self) -> Bounds {
        self.bounds
    }

    fn target(&self) -> TargetSpec {
        self.target
    }

    fn horizon(&self) -> Horizon {
        Horizon::StaticAfter(0.0)
    }

    fn snapshot(&self, _t: f64) -> RectSnapshot<'_> {
        RectSnapshot(self)
    }
}

/// Random world on a `(n-1) x (n-1)`-cell grid of spacing `dx` centered on
/// the origin. Rectangles are node-aligned, at least two cells wide, and
/// keep clear of the target. Any two of them either touch or are at least two
/// cells apart, and the same holds against the domain edge, so that every
/// passage has a free node across it. Every third world also gets a closed
/// ring that walls off a pocket of free nodes.
pub fn random_rect_world<R: Rng>(rng: &mut R, n: usize, dx: f64, index: usize) -> RectWorld {
    let half = (n - 1) as f64 * dx / 2.0;
    let bounds = Bounds {
        xmin: -half,
        xmax: half,
        ymin: -half,
        ymax: half,
    };
    let cells = n - 1;
    let node = |i: usize| -half + i as f64 * dx;
    let tc = Vec2::new(
        node(rng.gen_range(cells / 4..=3 * cells / 4)),
        node(rng.gen_range(cells / 4..=3 * cells / 4)),
    );
    let target = TargetSpec {
        center: tc,
        radius: 10.0,
    };
    let rect = |a: usize, b: usize, c: usize, d: usize| Rect {
        lo: Vec2::new(node(a), node(b)),
        hi: Vec2::new(node(c), node(d)),
    };
    let clear = |r: &Rect| r.distance(tc) > target.radius + 2.0 * dx;
    let resolvable = |gap: f64| gap <= 1e-9 || gap >= 2.0 * dx - 1e-9;
    let fits = |r: &Rect, placed: &[Rect]| {
        let edges = [r.lo.x - bounds.xmin, bounds.xmax - r.hi.x, r.lo.y - bounds.ymin, bounds.ymax - r.hi.y];
        edges.iter().all(|&g| resolvable(g))
            && placed.iter().all(|o| {
                let gx = (o.lo.x - r.hi.x).max(r.lo.x - o.hi.x).max(0.0);
                let gy = (o.lo.y - r.hi.y).max(r.lo.y - o.hi.y).max(0.0);
                resolvable(gx.max(gy))
            })
    };
    let mut rects: Vec<Rect> = Vec::new();
    if index % 3 == 0 {
        // ring of wall thickness 2 cells around an interior of 3..5 cells
        for _ in 0..100 {
            let inner = rng.gen_range(3..=5usize);
            let span = inner + 4;
            let ix = rng.gen_range(0..=cells - span);
            let iy = rng.gen_range(0..=cells - span);
            let outer = rect(ix, iy, ix + span, iy + span);
            if !clear(&outer) || !fits(&outer, &[]) {
                continue;
            }
            let (x0, y0, x1, y1) = (ix, iy, ix + span, iy + span);
            rects.push(rect(x0, y0, x1, y0 + 2));
            rects.push(rect(x0, y1 - 2, x1, y1));
            rects.push(rect(x0, y0, x0 + 2, y1));
            rects.push(rect(x1 - 2, y0, x1, y1));
            break;
        }
    }
    let want = rects.len() + rng.gen_range(3..=7);
    while rects.len() < want {
        let w = rng.gen_range(2..=10usize);
        let h = rng.gen_range(2..=10usize);
        let ix = rng.gen_range(0..=cells - w);
        let iy = rng.gen_range(0..=cells - h);
        let r = rect(ix, iy, ix + w, iy + h);
        if clear(&r) && fits(&r, &rects) {
            rects.push(r);
        }
    }
    RectWorld { bounds, target, rects }
}

// ---- 16-neighbour Dijkstra -------------------------------------------------

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub const NEIGHBOURS_16: [(i64, i64); 16] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
    (1, 2),
    (2, 1),
    (-1, 2),
    (-2, 1),
    (1, -2),
    (2, -1),
    (-1, -2),
    (-2, -1),
];

/// Shortest path lengths to the target boundary over the 16-neighbour graph
/// of grid nodes, indexed `[iy * n + ix]`. Edges may not touch a rectangle.
/// Nodes with a clear straight line to the nearest target point within one
/// knight move start at their Euclidean distance; target nodes are 0.
pub fn dijkstra16(world: &RectWorld, n: usize, dx: f64) -> Vec<f64> {
    let b = world.bounds;
    let pos = |i: usize| Vec2::new(b.xmin + (i % n) as f64 * dx, b.ymin + (i / n) as f64 * dx);
    let blocked = |p: Vec2| world.rects.iter().any(|r| r.contains(p));
    let clear = |a: Vec2, c: Vec2| !world.rects.iter().any(|r| r.hits_segment(a, c));
    let tc = world.target.center;
    let rt = world.target.radius;
    let mut dist = vec![f64::INFINITY; n * n];
    let mut heap = BinaryHeap::new();
    for i in 0..n * n {
        let p = pos(i);
        if blocked(p) {
            continue;
        }
        let r = p.dist(tc);
        if r <= rt {
            dist[i] = 0.0;
        } else if r - rt <= dx * 5f64.sqrt() + 1e-9 {
            let foot = tc + (p - tc) * (rt / r);
            if clear(p, foot) {
                dist[i] = r - rt;
            }
        }
        if dist[i].is_finite() {
            heap.push(Item(dist[i], i));
        }
    }
    while let Some(Item(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        let (ix, iy) = ((i % n) as i64, (i / n) as i64);
        for (ox, oy) in NEIGHBOURS_16 {
            let (jx, jy) = (ix + ox, iy + oy);
            if jx < 0 || jy < 0 || jx >= n as i64 || jy >= n as i64 {
                continue;
            }
            let j = jy as usize * n + jx as usize;
            let (a, c) = (pos(i), pos(j));
            if blocked(c) || !clear(a, c) {
                continue;
            }
            let nd = d + a.dist(c);
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Item(nd, j));
            }
        }
    }
    dist
}

// ---- duration tables -------------------------------------------------------

/// Secant envelope `(e_u, e_o)` over fine nodes `a..=b`, by direct scan.
pub fn brute_envelope(d: &DurationFunction, a: usize, b: usize) -> (f64, f64) {
    let (ta, tb) = (d.fine_times[a], d.fine_times[b]);
    let (da, db) = (d.fine_values[a], d.fine_values[b]);
    let mut under = 0.0f64;
    let mut over = 0.0f64;
    for k in a..=b {
        let sec = da + (db - da) * (d.fine_times[k] - ta) / (tb - ta);
        under = under.max(d.fine_values[k] - sec);
        over = over.max(sec - d.fine_values[k]);
    }
    (under, over)
}

/// Random table on `n` nodes over `[t0, t1]`: convex, concave or arbitrary
/// shape, values in `[base - amp, base + amp]`.
pub fn random_table<R: Rng>(rng: &mut R, id: u32, n: usize, t0: f64, t1: f64, base: f64, amp: f64) -> DurationFunction {
    let mut times: Vec<f64> = (0..n)
        .map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64)
        .collect();
    // jitter interior nodes while keeping the order
    for k in 1..n - 1 {
        let h = (t1 - t0) / (n - 1) as f64;
        times[k] += rng.gen_range(-0.3..0.3) * h;
    }
    let shape = rng.gen_range(0..3);
    let mid = rng.gen_range(t0..t1);
    let values = times
        .iter()
        .map(|&t| {
            let s = (t - mid) / (t1 - t0);
            match shape {
                0 => base - amp + 2.0 * amp * s * s,
                1 => base + amp - 2.0 * amp * s * s,
                _ => base + rng.gen_range(-amp..amp),
            }
        })
        .collect();
    DurationFunction::new(id, times, values).unwrap()
}

/// Random coarse grid with `k` nodes (endpoints included).
pub fn random_grid<R: Rng>(rng: &mut R, d: &DurationFunction, k: usize) -> CoarseGrid {
    let last = d.len() - 1;
    let k = k.min(d.len()).max(2);
    let mut nodes = vec![0, last];
    while nodes.len() < k {
        let c = rng.gen_range(1..last);
        if !nodes.contains(&c) {
            nodes.push(c);
        }
    }
    nodes.sort_unstable();
    CoarseGrid {
        vtol_id: d.vtol_id,
        nodes,
    }
}

// ---- scheduling oracle -----------------------------------------------------

fn det(m: &[Vec<f64>]) -> f64 {
    match m.len() {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => unreachable!("oracle handles at most three vehicles"),
    }
}

/// Minimum of `c . s` over `{ s : A s <= b }` by enumerating the vertices
/// (Cramer's rule on every choice of `n` tight rows). The region must be
/// bounded.
fn vertex_min(c: &[f64], rows: &[(Vec<f64>, f64)]) -> Option<f64> {
    let n = c.len();
    let mut best: Option<f64> = None;
    let mut pick = vec![0usize; n];
    fn rec(
        start: usize,
        depth: usize,
        pick: &mut Vec<usize>,
        c: &[f64],
        rows: &[(Vec<f64>, f64)],
        best: &mut Option<f64>,
    ) {
        let n = c.len();
        if depth == n {
            let a: Vec<Vec<f64>> = pick.iter().map(|&r| rows[r].0.clone()).collect();
            let d = det(&a);
            if d.abs() < 1e-12 {
                return;
            }
            let s: Vec<f64> = (0..n)
                .map(|col| {
                    let mut m = a.clone();
                    for (r, &row) in pick.iter().enumerate() {
                        m[r][col] = rows[row].1;
                    }
                    det(&m) / d
                })
                .collect();
            let feasible = rows
                .iter()
                .all(|(coef, rhs)| coef.iter().zip(&s).map(|(a, x)| a * x).sum::<f64>() <= rhs + 1e-9);
            if feasible {
                let v: f64 = c.iter().zip(&s).map(|(a, x)| a * x).sum();
                if best.is_none_or(|b| v < b) {
                    *best = Some(v);
                }
            }
            return;
        }
        for r in start..rows.len() {
            pick[depth] = r;
            rec(r + 1, depth + 1, pick, c, rows, best);
        }
    }
    rec(0, 0, &mut pick, c, rows, &mut best);
    best
}

/// Optimal objective of the piecewise-linear scheduling problem with free
/// envelope errors, by enumerating every landing order and every choice of
/// active subinterval and solving each leaf LP exactly. `None` if no leaf is
/// feasible.
///
/// In a leaf the error variable sits at its lower envelope bound, since it
/// has a non-negative objective weight and only loosens the ordering rows
/// there. Each vehicle then has one free parameter `s` in `[0, 1]` along its
/// subinterval.
pub fn enumerate_schedule(durations: &[DurationFunction], grids: &[CoarseGrid], alpha: f64) -> Option<f64> {
    let n = durations.len();
    let mut best: Option<f64> = None;
    let mut orders = vec![];
    permutations(&mut (0..n).collect(), 0, &mut orders);
    let counts: Vec<usize> = grids.iter().map(|g| g.nodes.len() - 1).collect();
    let mut choice = vec![0usize; n];
    loop {
        // per vehicle: t = a + h s, D = c + g s
        let mut a = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut cc = vec![0.0; n];
        let mut g = vec![0.0; n];
        for i in 0..n {
            let (p, q) = (grids[i].nodes[choice[i]], grids[i].nodes[choice[i] + 1]);
            let d = &durations[i];
            let (_, over) = brute_envelope(d, p, q);
            a[i] = d.fine_times[p];
            h[i] = d.fine_times[q] - d.fine_times[p];
            cc[i] = d.fine_values[p] - over;
            g[i] = d.fine_values[q] - d.fine_values[p];
        }
        let constant: f64 = (0..n).map(|i| a[i] + alpha * cc[i]).sum();
        let cost: Vec<f64> = (0..n).map(|i| h[i] + alpha * g[i]).collect();
        for order in &orders {
            let mut rows = Vec::new();
            for i in 0..n {
                let mut up = vec![0.0; n];
                up[i] = 1.0;
                rows.push((up, 1.0));
                let mut down = vec![0.0; n];
                down[i] = -1.0;
                rows.push((down, 0.0));
            }
            for x in 0..n {
                for y in x + 1..n {
                    let (i, j) = (order[x], order[y]);
                    // a_i + h_i s_i + c_i + g_i s_i <= a_j + h_j s_j
                    let mut coef = vec![0.0; n];
                    coef[i] += h[i] + g[i];
                    coef[j] -= h[j];
                    rows.push((coef, a[j] - a[i] - cc[i]));
                }
            }
            if let Some(v) = vertex_min(&cost, &rows) {
                let total = v + constant;
                if best.is_none_or(|b| total < b) {
                    best = Some(total);
                }
            }
        }
        // next subinterval assignment
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            choice[k] += 1;
            if choice[k] < counts[k] {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}
