//! Time-dependent shortest-path values on a time × space grid.
//!
//! The value `V(t, x)` is the length of the shortest admissible path from `x`,
//! departing at `t`, to the target disk. It is stored in transformed form
//! `v = exp(-V / L)`, where `L` is a fixed length unit of the field, so that
//! unreachable points are represented by `v = 0` instead of an infinity.
//!
//! One step of the discrete dynamics moves `dx` meters along one of
//! `n_controls` uniformly spaced headings and advances time by `dt = dx / v`.
//! A step that enters the target disk stops at the disk boundary and is
//! charged only the distance actually flown.

use crate::scenario::{cos_sin_turns, Bounds, Environment, Horizon, Region, Snapshot, TargetSpec, Vec2};
use std::io::{self, Write};
use thiserror::Error;

/// Transformed values at or below this are reported as unreachable.
pub const V_FLOOR: f64 = 1e-12;

const NO_STENCIL: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("grid does not fit the scenario: {0}")]
    GridMismatch(String),
    #[error("value iteration did not converge after {sweeps} sweeps (last change {delta:e})")]
    NonConvergence { sweeps: usize, delta: f64 },
    #[error("point {0} lies outside the domain")]
    OutOfBounds(Vec2),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Lower-left corner of the domain, the node `(0, 0)`.
    pub origin: Vec2,
    pub dx: f64,
    /// Cell counts; there are `nx + 1` by `ny + 1` nodes.
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub n_slices: usize,
    pub n_controls: usize,
}

impl GridSpec {
    /// Builds the grid for an environment: spatial step `dx`, time step
    /// `dx / velocity`, and as many slices as the horizon needs.
    pub fn new<E: Environment>(env: &E, dx: f64, velocity: f64, n_controls: usize) -> Result<Self, HjbError> {
        if !(dx > 0.0) || !(velocity > 0.0) {
            return Err(HjbError::GridMismatch("dx and velocity must be positive".into()));
        }
        if n_controls < 8 {
            return Err(HjbError::GridMismatch("at least 8 headings are required".into()));
        }
        let b = env.bounds();
        let nx = cells(b.width(), dx)?;
        let ny = cells(b.height(), dx)?;
        let dt = dx / velocity;
        let n_slices = match env.horizon() {
            Horizon::Periodic(period) => {
                let k = (period / dt).round();
                if k < 1.0 || (k * dt - period).abs() > 1e-9 * period.max(1.0) {
                    return Err(HjbError::GridMismatch(format!(
                        "period {period} s is not a multiple of the time step {dt} s"
                    )));
                }
                k as usize
            }
            Horizon::StaticAfter(t_star) => (t_star / dt).floor() as usize + 2,
        };
        Ok(GridSpec {
            origin: Vec2::new(b.xmin, b.ymin),
            dx,
            nx,
            ny,
            dt,
            n_slices,
            n_controls,
        })
    }

    pub fn nodes_x(&self) -> usize {
        self.nx + 1
    }

    pub fn nodes_y(&self) -> usize {
        self.ny + 1
    }

    pub fn node(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + ix as f64 * self.dx,
            self.origin.y + iy as f64 * self.dx,
        )
    }

    pub fn slice_time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn velocity(&self) -> f64 {
        self.dx / self.dt
    }

    /// Unit vector of heading `j`; headings are exactly symmetric under
    /// quarter turns when `n_controls` is a multiple of 4.
    pub fn heading(&self, j: usize) -> Vec2 {
        let (c, s) = cos_sin_turns(j as f64 / self.n_controls as f64);
        Vec2::new(c, s)
    }

    fn check<E: Environment>(&self, env: &E) -> Result<(), HjbError> {
        let b = env.bounds();
        let fits = (self.origin.x - b.xmin).abs() < 1e-9
            && (self.origin.y - b.ymin).abs() < 1e-9
            && (self.nx as f64 * self.dx - b.width()).abs() < 1e-6
            && (self.ny as f64 * self.dx - b.height()).abs() < 1e-6;
        if !fits {
            return Err(HjbError::GridMismatch("grid does not cover the domain".into()));
        }
        match env.horizon() {
            Horizon::Periodic(period) => {
                if (self.n_slices as f64 * self.dt - period).abs() > 1e-9 * period.max(1.0) {
                    return Err(HjbError::GridMismatch(format!(
                        "periodic mode needs n_slices * dt = {period}"
                    )));
                }
            }
            Horizon::StaticAfter(t_star) => {
                if self.n_slices < 2 || self.slice_time(self.n_slices - 1) <= t_star {
                    return Err(HjbError::GridMismatch(format!(
                        "static mode needs the last slice after t* = {t_star}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn cells(len: f64, dx: f64) -> Result<usize, HjbError> {
    let n = (len / dx).round();
    if n < 2.0 || (n * dx - len).abs() > 1e-6 {
        return Err(HjbError::GridMismatch(format!(
            "domain extent {len} is not a multiple of dx = {dx}"
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once the largest change of a transformed value in a sweep is below this.
    pub convergence_tol: f64,
    pub max_sweeps: usize,
    pub grid: GridSpec,
    /// Length unit `L` of the transform `v = exp(-V / L)`.
    pub length_scale: f64,
}

impl SolverConfig {
    pub fn new(grid: GridSpec, bounds: &Bounds) -> Self {
        SolverConfig {
            convergence_tol: 1e-9,
            max_sweeps: 10 * (grid.nx + grid.ny + grid.n_slices),
            grid,
            length_scale: default_length_scale(bounds),
        }
    }
}

/// A quarter of the domain diagonal: paths of up to ~27 domain diagonals stay
/// above [`V_FLOOR`].
pub fn default_length_scale(bounds: &Bounds) -> f64 {
    bounds.diagonal() / 4.0
}

/// Transformed value function on all slices.
#[derive(Debug, Clone)]
pub struct ValueField {
    grid: GridSpec,
    horizon: Horizon,
    target: TargetSpec,
    length_scale: f64,
    /// `n_slices` planes of `(nx + 3) x (ny + 3)` values; the outer ring is a
    /// zero pad standing for the exterior of the domain. Target nodes hold
    /// `exp(depth / L)` for their depth below the target boundary, so that
    /// interpolation across the boundary follows the signed distance.
    values: Vec<f64>,
    /// Node classification per slice, `n_slices x (ny + 1) x (nx + 1)`.
    regions: Vec<Region>,
    /// Obstacle or outside, in the padded layout of `values`.
    blocked: Vec<bool>,
    sweeps: usize,
    last_delta: f64,
}

impl ValueField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn last_delta(&self) -> f64 {
        self.last_delta
    }

    fn pad_width(&self) -> usize {
        self.grid.nx + 3
    }

    fn plane(&self) -> usize {
        (self.grid.nx + 3) * (self.grid.ny + 3)
    }

    fn padded(&self, ix: isize, iy: isize) -> usize {
        ((iy + 1) as usize) * self.pad_width() + (ix + 1) as usize
    }

    fn region_index(&self, k: usize, ix: usize, iy: usize) -> usize {
        (k * self.grid.nodes_y() + iy) * self.grid.nodes_x() + ix
    }

    /// Transformed value at a node; exactly 1 on target nodes.
    pub fn node_v(&self, k: usize, ix: usize, iy: usize) -> f64 {
        if self.node_region(k, ix, iy) == Region::Target {
            return 1.0;
        }
        self.values[k * self.plane() + self.padded(ix as isize, iy as isize)]
    }

    pub fn node_region(&self, k: usize, ix: usize, iy: usize) -> Region {
        self.regions[self.region_index(k, ix, iy)]
    }

    /// Path length stored at a node, `None` when unreachable.
    pub fn node_value(&self, k: usize, ix: usize, iy: usize) -> Option<f64> {
        self.to_length(self.node_v(k, ix, iy))
    }

    fn to_length(&self, v: f64) -> Option<f64> {
        (v > V_FLOOR).then(|| (-self.length_scale * v.ln()).max(0.0))
    }

    /// Slice used for an absolute step index `k` (periodic wrap or clamping to
    /// the static tail).
    pub fn slice_of(&self, k: usize) -> usize {
        match self.horizon {
            Horizon::Periodic(_) => k % self.grid.n_slices,
            Horizon::StaticAfter(_) => k.min(self.grid.n_slices - 1),
        }
    }

    pub fn next_slice(&self, k: usize) -> usize {
        match self.horizon {
            Horizon::Periodic(_) => (k + 1) % self.grid.n_slices,
            Horizon::StaticAfter(_) => (k + 1).min(self.grid.n_slices - 1),
        }
    }

    /// Bilinear interpolation of the transformed values of slice `k` at `x`,
    /// over the corners that are not blocked (see [`masked_blend`]).
    pub fn interp_v(&self, k: usize, x: Vec2) -> Result<f64, HjbError> {
        let g = &self.grid;
        let gx = (x.x - g.origin.x) / g.dx;
        let gy = (x.y - g.origin.y) / g.dx;
        let tol = 1e-9;
        if !(gx >= -tol && gy >= -tol && gx <= g.nx as f64 + tol && gy <= g.ny as f64 + tol) {
            return Err(HjbError::OutOfBounds(x));
        }
        let gx = gx.clamp(0.0, g.nx as f64);
        let gy = gy.clamp(0.0, g.ny as f64);
        let ix = (gx.floor() as usize).min(g.nx - 1);
        let iy = (gy.floor() as usize).min(g.ny - 1);
        let ax = gx - ix as f64;
        let ay = gy - iy as f64;
        let base = k * self.plane();
        let p = self.padded(ix as isize, iy as isize);
        let w = self.pad_width();
        let weights = [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay];
        let plane = base..base + self.plane();
        Ok(masked_blend(
            &self.values[plane.clone()],
            &self.blocked[plane],
            [p, p + 1, p + w, p + w + 1],
            &weights,
            CellDecay::new(g.dx, self.length_scale),
        ))
    }

    /// Path length at `x` in slice `k` by spatial interpolation only.
    pub fn value_in_slice(&self, k: usize, x: Vec2) -> Result<Option<f64>, HjbError> {
        Ok(self.to_length(self.interp_v(k, x)?))
    }

    /// Shortest path length from `x` when departing at time `t`.
    ///
    /// Interpolates bilinearly in space and linearly between the enclosing
    /// slices. Points inside an obstacle (at time `t`) are unreachable, points
    /// in the target have length zero.
    pub fn value_at<E: Environment>(&self, env: &E, t: f64, x: Vec2) -> Result<Option<f64>, HjbError> {
        if !env.bounds().contains(x) {
            return Err(HjbError::OutOfBounds(x));
        }
        match env.classify(x, t) {
            Region::Target => return Ok(Some(0.0)),
            Region::Obstacle | Region::Outside => return Ok(None),
            Region::Free => {}
        }
        let (k0, k1, frac) = self.slice_pair(t);
        let v0 = self.interp_v(k0, x)?;
        let v = if frac > 0.0 {
            (1.0 - frac) * v0 + frac * self.interp_v(k1, x)?
        } else {
            v0
        };
        Ok(self.to_length(v))
    }

    fn slice_pair(&self, t: f64) -> (usize, usize, f64) {
        let g = &self.grid;
        match self.horizon {
            Horizon::Periodic(period) => {
                let s = t.rem_euclid(period) / g.dt;
                let k0 = (s.floor() as usize).min(g.n_slices - 1);
                let frac = (s - k0 as f64).clamp(0.0, 1.0);
                (k0, (k0 + 1) % g.n_slices, frac)
            }
            Horizon::StaticAfter(_) => {
                let last = g.n_slices - 1;
                let s = t.max(0.0) / g.dt;
                if s >= last as f64 {
                    (last, last, 0.0)
                } else {
                    let k0 = s.floor() as usize;
                    (k0, k0 + 1, s - k0 as f64)
                }
            }
        }
    }

    /// Writes the field as CSV: a `#` header line with the grid parameters,
    /// then one row `k,ix,iy,v,V` per node (`V` is `inf` when unreachable).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let g = &self.grid;
        let mode = match self.horizon {
            Horizon::Periodic(p) => format!("periodic:{p}"),
            Horizon::StaticAfter(t) => format!("static_after:{t}"),
        };
        writeln!(
            out,
            "# K={},nx={},ny={},dx={},dt={},mode={},length_scale={}",
            g.n_slices, g.nx, g.ny, g.dx, g.dt, mode, self.length_scale
        )?;
        writeln!(out, "k,ix,iy,v,V")?;
        for k in 0..g.n_slices {
            for iy in 0..g.nodes_y() {
                for ix in 0..g.nodes_x() {
                    let v = self.node_v(k, ix, iy);
                    match self.to_length(v) {
                        Some(len) => writeln!(out, "{k},{ix},{iy},{v},{len}")?,
                        None => writeln!(out, "{k},{ix},{iy},{v},inf")?,
                    }
                }
            }
        }
        Ok(())
    }
}

/// What happens when heading `j` is flown from a point for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// The step would touch an obstacle or leave the domain.
    Blocked,
    /// The step reaches the target after this many meters.
    Enter(f64),
    /// The step lands at a free point.
    Land(Vec2),
}

/// Classifies one step of length `dx` along `dir` from `x`, departing at `t`.
///
/// The landing point is checked at `t + dt` and the midpoint at `t + dt / 2`;
/// the same rule is used by the sweep and by trajectory extraction.
pub fn step_outcome<S: Snapshot>(
    target: &TargetSpec,
    mid: &S,
    next: &S,
    x: Vec2,
    dir: Vec2,
    dx: f64,
) -> StepOutcome {
    if let Some(s) = target.entry_distance(x, dir, dx) {
        let end = x + dir * s;
        let half = x + dir * (0.5 * s);
        if next.classify(end).is_blocked() || mid.classify(half).is_blocked() {
            return StepOutcome::Blocked;
        }
        return StepOutcome::Enter(s);
    }
    let y = x + dir * dx;
    if next.classify(y).is_blocked() || mid.classify(x + dir * (0.5 * dx)).is_blocked() {
        StepOutcome::Blocked
    } else {
        StepOutcome::Land(y)
    }
}

/// Precomputed update rule for every node and slice.
struct Stencil {
    offsets: Vec<[isize; 4]>,
    weights: Vec<[f64; 4]>,
    decay: f64,
    /// Per (slice, node): index into the special tables or `NO_STENCIL` when
    /// every heading lands freely and none reaches the target.
    special: Vec<u32>,
    /// Headings that must not be interpolated (blocked or entering the target).
    skip: Vec<u64>,
    /// Best transformed value achievable by entering the target directly.
    entry: Vec<f64>,
    cell: CellDecay,
    words: usize,
}

impl Stencil {
    fn build<E: Environment>(field: &ValueField, env: &E) -> Self {
        let g = field.grid;
        let w = field.pad_width() as isize;
        let mut offsets = Vec::with_capacity(g.n_controls);
        let mut weights = Vec::with_capacity(g.n_controls);
        for j in 0..g.n_controls {
            let u = g.heading(j);
            let (fx, ax) = split_unit(u.x);
            let (fy, ay) = split_unit(u.y);
            let o = fy * w + fx;
            offsets.push([o, o + 1, o + w, o + w + 1]);
            weights.push([(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay]);
        }
        let words = g.n_controls.div_ceil(64);
        let target = env.target();
        let b = env.bounds();
        let mut special = vec![NO_STENCIL; field.regions.len()];
        let mut skip = Vec::new();
        let mut entry = Vec::new();
        let scale = field.length_scale;
        for k in 0..g.n_slices {
            let t = g.slice_time(k);
            let mid = env.snapshot(t + 0.5 * g.dt);
            let next = env.snapshot(t + g.dt);
            for iy in 0..g.nodes_y() {
                for ix in 0..g.nodes_x() {
                    let ri = field.region_index(k, ix, iy);
                    if field.regions[ri] != Region::Free {
                        continue;
                    }
                    let x = g.node(ix, iy);
                    let near_edge = x.x - b.xmin < g.dx
                        || b.xmax - x.x < g.dx
                        || x.y - b.ymin < g.dx
                        || b.ymax - x.y < g.dx;
                    let near_target = x.dist(target.center) <= target.radius + g.dx + 1e-6;
                    // landing cells reach up to dx (1 + sqrt 2) from the node
                    let near_obstacle = next.obstacle_nearby(x, g.dx * (1.0 + std::f64::consts::SQRT_2))
                        || mid.obstacle_nearby(x, 0.5 * g.dx);
                    if !(near_edge || near_target || near_obstacle) {
                        continue;
                    }
                    let base = skip.len();
                    skip.resize(base + words, 0u64);
                    let mut best_entry: f64 = 0.0;
                    for j in 0..g.n_controls {
                        match step_outcome(&target, &mid, &next, x, g.heading(j), g.dx) {
                            StepOutcome::Land(_) => continue,
                            StepOutcome::Blocked => {}
                            StepOutcome::Enter(s) => best_entry = best_entry.max((-s / scale).exp()),
                        }
                        skip[base + j / 64] |= 1u64 << (j % 64);
                    }
                    special[ri] = entry.len() as u32;
                    entry.push(best_entry);
                }
            }
        }
        Stencil {
            offsets,
            weights,
            decay: (-g.dx / scale).exp(),
            cell: CellDecay::new(g.dx, scale),
            special,
            skip,
            entry,
            words,
        }
    }

    /// One Jacobi update of `src` into `dst`; returns the largest change.
    ///
    /// `changed` marks (in the padded layout) the values that differ between
    /// `src` and the field it was computed from. A node whose 3 x 3 source
    /// neighbourhood is unchanged keeps its value, which is exactly what the
    /// update would produce. On return `changed` marks the values that differ
    /// between `dst` and `src`.
    fn apply(&self, field: &ValueField, src: &[f64], dst: &mut [f64], changed: &mut Vec<bool>) -> f64 {
        let g = field.grid;
        let plane = field.plane();
        let w = field.pad_width();
        let mut delta: f64 = 0.0;
        let mut now = vec![false; changed.len()];
        for k in 0..g.n_slices {
            let kn = field.next_slice(k);
            let from = &src[kn * plane..(kn + 1) * plane];
            let blocked = &field.blocked[kn * plane..(kn + 1) * plane];
            let moved = &changed[kn * plane..(kn + 1) * plane];
            for iy in 0..g.nodes_y() {
                for ix in 0..g.nodes_x() {
                    let ri = field.region_index(k, ix, iy);
                    let p = field.padded(ix as isize, iy as isize);
                    let at = k * plane + p;
                    let dirty = moved[p - w - 1..=p - w + 1].contains(&true)
                        || moved[p - 1..=p + 1].contains(&true)
                        || moved[p + w - 1..=p + w + 1].contains(&true);
                    if !dirty {
                        dst[at] = src[at];
                        continue;
                    }
                    let value = match field.regions[ri] {
                        Region::Target => src[at],
                        Region::Obstacle | Region::Outside => 0.0,
                        Region::Free => {
                            let sp = self.special[ri];
                            if sp == NO_STENCIL {
                                let quiet = from[p - w - 1..=p - w + 1].iter().all(|v| *v == 0.0)
                                    && from[p - 1..=p + 1].iter().all(|v| *v == 0.0)
                                    && from[p + w - 1..=p + w + 1].iter().all(|v| *v == 0.0);
                                if quiet {
                                    0.0
                                } else {
                                    self.decay * self.best_landing(from, p)
                                }
                            } else {
                                let sp = sp as usize;
                                let mask = &self.skip[sp * self.words..(sp + 1) * self.words];
                                (self.decay * self.best_landing_masked(from, blocked, p, mask))
                                    .max(self.entry[sp])
                                    .min(1.0)
                            }
                        }
                    };
                    delta = delta.max((value - src[at]).abs());
                    now[at] = value != src[at];
                    dst[at] = value;
                }
            }
        }
        *changed = now;
        delta
    }

    fn best_landing(&self, from: &[f64], p: usize) -> f64 {
        let mut best: f64 = 0.0;
        for (o, wt) in self.offsets.iter().zip(&self.weights) {
            let at = |d: isize| from[(p as isize + d) as usize];
            let v = wt[0] * at(o[0]) + wt[1] * at(o[1]) + wt[2] * at(o[2]) + wt[3] * at(o[3]);
            best = best.max(v);
        }
        best
    }

    /// Like [`Self::best_landing`], skipping the masked headings and leaving
    /// blocked corners out of the interpolation.
    fn best_landing_masked(&self, from: &[f64], blocked: &[bool], p: usize, mask: &[u64]) -> f64 {
        let mut best: f64 = 0.0;
        for (j, (o, wt)) in self.offsets.iter().zip(&self.weights).enumerate() {
            if mask[j / 64] >> (j % 64) & 1 == 1 {
                continue;
            }
            let at = |d: isize| (p as isize + d) as usize;
            let v = masked_blend(from, blocked, [at(o[0]), at(o[1]), at(o[2]), at(o[3])], wt, self.cell);
            best = best.max(v);
        }
        best
    }
}

/// Decay of the transformed value over one cell side and one cell diagonal.
#[derive(Debug, Clone, Copy)]
struct CellDecay {
    side: f64,
    diagonal: f64,
}

impl CellDecay {
    fn new(dx: f64, length_scale: f64) -> Self {
        CellDecay {
            side: (-dx / length_scale).exp(),
            diagonal: (-dx * std::f64::consts::SQRT_2 / length_scale).exp(),
        }
    }
}

/// Bilinear blend of the four corners of a cell, ordered `(0,0), (1,0),
/// (0,1), (1,1)`, with stand-in values for blocked corners.
///
/// When the blocked corners form one cell edge (a wall face) each continues
/// the free values behind it linearly in `V`, within one cell side of the
/// free corner across the cell. A single blocked corner continues the plane
/// through the other three. Otherwise a blocked
/// corner takes the best value reachable from a free corner of the cell
/// along an edge or the diagonal.
fn masked_blend(values: &[f64], blocked: &[bool], corners: [usize; 4], weights: &[f64; 4], decay: CellDecay) -> f64 {
    let free = corners.map(|c| !blocked[c]);
    let v = corners.map(|c| values[c]);
    let n_free = free.iter().filter(|&&f| f).count();
    if n_free == 4 {
        return (0..4).map(|c| weights[c] * v[c]).sum();
    }
    // across the cell edge perpendicular to a face: 0<->2, 1<->3 for a
    // horizontal face, 0<->1, 2<->3 for a vertical one
    let face = match free {
        [true, true, false, false] | [false, false, true, true] => Some([2, 3, 0, 1]),
        [true, false, true, false] | [false, true, false, true] => Some([1, 0, 3, 2]),
        _ => None,
    };
    let mut out = 0.0;
    for c in 0..4 {
        let vc = if free[c] {
            v[c]
        } else if let Some(across) = face {
            // linear extrapolation of V from the two free nodes behind the face
            let a = corners[across[c]];
            let behind = 2 * a - corners[c];
            let va = v[across[c]];
            if blocked[behind] || values[behind] <= 0.0 || va <= 0.0 {
                va
            } else {
                (va * (va / values[behind]).sqrt()).clamp(va * decay.side, va / decay.side)
            }
        } else if n_free == 3 && v[c ^ 1] > 0.0 && v[c ^ 2] > 0.0 && v[c ^ 3] > 0.0 {
            // planar continuation of V from the three free corners
            let (s1, s2) = (v[c ^ 1], v[c ^ 2]);
            (s1 * s2 / v[c ^ 3]).min(s1.min(s2) / decay.side).max(s1.max(s2) * decay.side)
        } else {
            let mut best: f64 = 0.0;
            for f in 0..4 {
                if free[f] {
                    // corners 0/3 and 1/2 are diagonal
                    let d = if c + f == 3 { decay.diagonal } else { decay.side };
                    best = best.max(v[f] * d);
                }
            }
            best
        };
        out += weights[c] * vc;
    }
    out
}

/// Splits a heading component in `[-1, 1]` into a base cell offset and a
/// fraction in `[0, 1]` such that both corners stay within one cell.
fn split_unit(c: f64) -> (isize, f64) {
    if c >= 1.0 {
        (0, 1.0)
    } else {
        let f = c.floor();
        (f as isize, c - f)
    }
}

/// Initial guess: `v = 1` on target nodes, `0` everywhere else.
pub fn init_field<E: Environment>(env: &E, grid: GridSpec) -> Result<ValueField, HjbError> {
    init_field_scaled(env, grid, default_length_scale(&env.bounds()))
}

fn init_field_scaled<E: Environment>(env: &E, grid: GridSpec, length_scale: f64) -> Result<ValueField, HjbError> {
    grid.check(env)?;
    if !(length_scale > 0.0) {
        return Err(HjbError::GridMismatch("length scale must be positive".into()));
    }
    let (px, py) = (grid.nodes_x(), grid.nodes_y());
    let plane = (grid.nx + 3) * (grid.ny + 3);
    let mut field = ValueField {
        grid,
        horizon: env.horizon(),
        target: env.target(),
        length_scale,
        values: vec![0.0; grid.n_slices * plane],
        regions: Vec::with_capacity(grid.n_slices * px * py),
        blocked: vec![true; grid.n_slices * plane],
        sweeps: 0,
        last_delta: f64::INFINITY,
    };
    for k in 0..grid.n_slices {
        let snap = env.snapshot(grid.slice_time(k));
        for iy in 0..py {
            for ix in 0..px {
                field.regions.push(snap.classify(grid.node(ix, iy)));
            }
        }
    }
    for k in 0..grid.n_slices {
        for iy in 0..py {
            for ix in 0..px {
                let at = k * plane + field.padded(ix as isize, iy as isize);
                field.blocked[at] = field.node_region(k, ix, iy).is_blocked();
                if field.node_region(k, ix, iy) == Region::Target {
                    let at = k * plane + field.padded(ix as isize, iy as isize);
                    let depth = field.target.radius - grid.node(ix, iy).dist(field.target.center);
                    field.values[at] = (depth.max(0.0) / length_scale).exp();
                }
            }
        }
    }
    debug_assert!(field.target.radius > 0.0);
    Ok(field)
}

/// Applies one simultaneous update to every node of every slice.
pub fn sweep<E: Environment>(field: &ValueField, env: &E) -> (ValueField, f64) {
    let stencil = Stencil::build(field, env);
    let mut next = field.clone();
    let mut changed = vec![true; field.values.len()];
    let delta = stencil.apply(field, &field.values, &mut next.values, &mut changed);
    next.sweeps += 1;
    next.last_delta = delta;
    (next, delta)
}

/// Iterates sweeps from the initial guess until the largest change drops
/// below the tolerance.
pub fn solve<E: Environment>(env: &E, cfg: &SolverConfig) -> Result<ValueField, HjbError> {
    let mut field = init_field_scaled(env, cfg.grid, cfg.length_scale)?;
    let stencil = Stencil::build(&field, env);
    let mut scratch = field.values.clone();
    let mut changed = vec![true; field.values.len()];
    let mut delta = f64::INFINITY;
    for n in 1..=cfg.max_sweeps {
        delta = stencil.apply(&field, &field.values, &mut scratch, &mut changed);
        std::mem::swap(&mut field.values, &mut scratch);
        field.sweeps = n;
        field.last_delta = delta;
        if delta < cfg.convergence_tol {
            return Ok(field);
        }
    }
    Err(HjbError::NonConvergence {
        sweeps: cfg.max_sweeps,
        delta,
    })
}
