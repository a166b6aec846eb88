//! World model: a rectangular domain with a static target disk, disk-shaped
//! obstacles on circular orbits, and the vehicles that have to reach the target.

use serde::Deserialize;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};
use std::fmt;
use thiserror::Error;

/// Slack used by every point-in-disk test so that nodes lying exactly on an
/// obstacle or target boundary classify the same way regardless of round-off
/// in the obstacle center.
pub const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn lerp(self, other: Vec2, s: f64) -> Vec2 {
        self + (other - self) * s
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Cosine and sine of an angle given in full turns (1.0 = 2π).
///
/// The evaluation is reduced to the first octant, so quarter-turn rotations
/// and diagonal reflections are reproduced bit-exactly.
pub fn cos_sin_turns(turns: f64) -> (f64, f64) {
    let t = turns.rem_euclid(1.0) * 4.0;
    let quadrant = t.floor();
    let frac = t - quadrant;
    let (c, s) = if frac > 0.5 {
        let (c, s) = octant(1.0 - frac);
        (s, c)
    } else {
        octant(frac)
    };
    match quadrant as i64 {
        0 => (c, s),
        1 => (-s, c),
        2 => (-c, -s),
        _ => (s, -c),
    }
}

fn octant(frac: f64) -> (f64, f64) {
    if frac == 0.0 {
        (1.0, 0.0)
    } else if frac == 0.5 {
        (FRAC_1_SQRT_2, FRAC_1_SQRT_2)
    } else {
        let a = FRAC_PI_2 * frac;
        (a.cos(), a.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.xmin - BOUNDARY_EPS
            && p.x <= self.xmax + BOUNDARY_EPS
            && p.y >= self.ymin - BOUNDARY_EPS
            && p.y <= self.ymax + BOUNDARY_EPS
    }

    /// True when the disk of radius `r` around `c` lies inside the rectangle.
    pub fn contains_disk(&self, c: Vec2, r: f64) -> bool {
        c.x - r >= self.xmin - BOUNDARY_EPS
            && c.x + r <= self.xmax + BOUNDARY_EPS
            && c.y - r >= self.ymin - BOUNDARY_EPS
            && c.y + r <= self.ymax + BOUNDARY_EPS
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    pub center: Vec2,
    pub radius: f64,
}

impl TargetSpec {
    pub fn contains(&self, p: Vec2) -> bool {
        p.dist(self.center) <= self.radius + BOUNDARY_EPS
    }

    /// Distance travelled along `dir` (unit vector) from `from` until the
    /// segment first touches the target disk, if that happens within `max_len`.
    pub fn entry_distance(&self, from: Vec2, dir: Vec2, max_len: f64) -> Option<f64> {
        let rel = from - self.center;
        let b = rel.dot(dir);
        let c = rel.dot(rel) - self.radius * self.radius;
        if c <= 0.0 {
            return Some(0.0);
        }
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = -b - disc.sqrt();
        (s >= 0.0 && s <= max_len + BOUNDARY_EPS).then_some(s.min(max_len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ccw,
    Cw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleSpec {
    pub orbit_radius: f64,
    pub obstacle_radius: f64,
    pub period: f64,
    /// Initial angle on the orbit, in radians.
    pub initial_phase: f64,
    pub orbit_center: Vec2,
    pub direction: Direction,
}

impl ObstacleSpec {
    /// Center of the obstacle disk at time `t`. Exactly `period`-periodic.
    pub fn position(&self, t: f64) -> Vec2 {
        let sweep = (t / self.period).rem_euclid(1.0);
        let signed = match self.direction {
            Direction::Ccw => sweep,
            Direction::Cw => -sweep,
        };
        let turns = self.initial_phase / std::f64::consts::TAU + signed;
        let (c, s) = cos_sin_turns(turns);
        self.orbit_center + Vec2::new(c, s) * self.orbit_radius
    }

    pub fn contains(&self, p: Vec2, t: f64) -> bool {
        p.dist(self.position(t)) <= self.obstacle_radius + BOUNDARY_EPS
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VtolSpec {
    pub id: u32,
    pub start: Vec2,
    pub velocity: f64,
    pub t_min: f64,
    pub t_max: f64,
}

/// How the time axis is truncated for the value computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Everything repeats with this global period.
    Periodic(f64),
    /// Obstacles freeze at this time and the world is static afterwards.
    StaticAfter(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Outside,
    Obstacle,
    Target,
    Free,
}

impl Region {
    pub fn is_blocked(self) -> bool {
        matches!(self, Region::Outside | Region::Obstacle)
    }
}

/// The world frozen at one instant.
pub trait Snapshot {
    fn classify(&self, x: Vec2) -> Region;

    /// Conservative proximity hint: returning `false` promises that no
    /// obstacle point lies within `reach` of `x`.
    fn obstacle_nearby(&self, _x: Vec2, _reach: f64) -> bool {
        true
    }
}

/// Anything the value-function solver can plan through.
pub trait Environment: Sync {
    type Snapshot<'a>: Snapshot
    where
        Self: 'a;

    fn bounds(&self) -> Bounds;
    fn target(&self) -> TargetSpec;
    fn horizon(&self) -> Horizon;
    fn snapshot(&self, t: f64) -> Self::Snapshot<'_>;

    fn classify(&self, x: Vec2, t: f64) -> Region {
        self.snapshot(t).classify(x)
    }
}

/// Obstacle centers of a [`Scenario`] evaluated once for a fixed time.
#[derive(Debug, Clone)]
pub struct ScenarioSnapshot<'a> {
    scenario: &'a Scenario,
    centers: Vec<Vec2>,
}

impl Snapshot for ScenarioSnapshot<'_> {
    fn classify(&self, x: Vec2) -> Region {
        let s = self.scenario;
        if !s.bounds.contains(x) {
            return Region::Outside;
        }
        let hit = self
            .centers
            .iter()
            .zip(&s.obstacles)
            .any(|(c, ob)| x.dist(*c) <= ob.obstacle_radius + BOUNDARY_EPS);
        if hit {
            Region::Obstacle
        } else if s.target.contains(x) {
            Region::Target
        } else {
            Region::Free
        }
    }

    fn obstacle_nearby(&self, x: Vec2, reach: f64) -> bool {
        self.centers
            .iter()
            .zip(&self.scenario.obstacles)
            .any(|(c, ob)| x.dist(*c) <= ob.obstacle_radius + reach + BOUNDARY_EPS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bounds: Bounds,
    pub target: TargetSpec,
    pub obstacles: Vec<ObstacleSpec>,
    pub vtols: Vec<VtolSpec>,
    pub horizon: Horizon,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

impl Scenario {
    pub fn new(
        bounds: Bounds,
        target: TargetSpec,
        obstacles: Vec<ObstacleSpec>,
        vtols: Vec<VtolSpec>,
        horizon: Horizon,
    ) -> Result<Self, ScenarioError> {
        let s = Scenario {
            bounds,
            target,
            obstacles,
            vtols,
            horizon,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let b = &self.bounds;
        if ![b.xmin, b.xmax, b.ymin, b.ymax].iter().all(|v| v.is_finite())
            || b.xmin >= b.xmax
            || b.ymin >= b.ymax
        {
            return invalid("bounds must be finite with xmin < xmax and ymin < ymax");
        }
        if !(self.target.radius > 0.0) || !self.target.center.is_finite() {
            return invalid("target radius must be positive");
        }
        if !b.contains_disk(self.target.center, self.target.radius) {
            return invalid("target disk is not inside the domain");
        }
        for (p, ob) in self.obstacles.iter().enumerate() {
            if !(ob.period > 0.0) || !ob.period.is_finite() {
                return invalid(format!("obstacle {}: period must be positive", p + 1));
            }
            if !(ob.obstacle_radius > 0.0) || !(ob.orbit_radius >= 0.0) {
                return invalid(format!("obstacle {}: radii must be positive", p + 1));
            }
            if !b.contains_disk(ob.orbit_center, ob.orbit_radius + ob.obstacle_radius) {
                return invalid(format!("obstacle {} leaves the domain", p + 1));
            }
        }
        match self.horizon {
            Horizon::Periodic(period) => {
                if !(period > 0.0) || !period.is_finite() {
                    return invalid("global period must be positive");
                }
                for (p, ob) in self.obstacles.iter().enumerate() {
                    let ratio = period / ob.period;
                    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                        return invalid(format!(
                            "obstacle {} period {} does not divide the global period {}",
                            p + 1,
                            ob.period,
                            period
                        ));
                    }
                }
            }
            Horizon::StaticAfter(t_star) => {
                if !(t_star >= 0.0) || !t_star.is_finite() {
                    return invalid("t_star must be non-negative");
                }
            }
        }
        if self.vtols.is_empty() {
            return invalid("at least one vehicle is required");
        }
        for (i, v) in self.vtols.iter().enumerate() {
            if self.vtols[..i].iter().any(|o| o.id == v.id) {
                return invalid(format!("duplicate vehicle id {}", v.id));
            }
            if !v.start.is_finite() || !(v.velocity > 0.0) {
                return invalid(format!("vehicle {}: velocity must be positive", v.id));
            }
            if !(v.t_min >= 0.0) || !(v.t_min < v.t_max) || !v.t_max.is_finite() {
                return invalid(format!("vehicle {}: need 0 <= t_min < t_max", v.id));
            }
        }
        Ok(())
    }

    /// Obstacle center at time `t`, honouring the freeze of a static-after horizon.
    pub fn obstacle_center(&self, p: usize, t: f64) -> Vec2 {
        let t = match self.horizon {
            Horizon::StaticAfter(t_star) => t.min(t_star),
            Horizon::Periodic(_) => t,
        };
        self.obstacles[p].position(t)
    }

    pub fn classify_point(&self, x: Vec2, t: f64) -> Region {
        self.snapshot(t).classify(x)
    }

    pub fn vtol(&self, id: u32) -> Option<&VtolSpec> {
        self.vtols.iter().find(|v| v.id == id)
    }

    /// Common cruise speed of the fleet, if every vehicle flies at the same speed.
    pub fn common_velocity(&self) -> Option<f64> {
        let v = self.vtols.first()?.velocity;
        self.vtols
            .iter()
            .all(|o| (o.velocity - v).abs() <= 1e-12 * v)
            .then_some(v)
    }
}

impl Environment for Scenario {
    type Snapshot<'a> = ScenarioSnapshot<'a>;

    fn bounds(&self) -> Bounds {
        self.bounds
    }

    fn target(&self) -> TargetSpec {
        self.target
    }

    fn horizon(&self) -> Horizon {
        self.horizon
    }

    fn snapshot(&self, t: f64) -> ScenarioSnapshot<'_> {
        ScenarioSnapshot {
            scenario: self,
            centers: (0..self.obstacles.len()).map(|p| self.obstacle_center(p, t)).collect(),
        }
    }
}

// ---- scenario file ---------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    bounds: BoundsFile,
    target: TargetFile,
    mode: ModeFile,
    #[serde(default)]
    obstacles: Vec<ObstacleFile>,
    vtols: Vec<VtolFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsFile {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetFile {
    cx: f64,
    cy: f64,
    radius: f64,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModeFile {
    Periodic { period: f64 },
    StaticAfter { t_star: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleFile {
    orbit_radius: f64,
    obstacle_radius: f64,
    period: f64,
    phase_deg: f64,
    #[serde(default = "default_direction")]
    direction: Direction,
    /// Orbit center; defaults to the target center.
    cx: Option<f64>,
    cy: Option<f64>,
}

fn default_direction() -> Direction {
    Direction::Ccw
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VtolFile {
    id: u32,
    x: f64,
    y: f64,
    velocity: f64,
    t_min: f64,
    t_max: f64,
}

/// Parses and validates a TOML scenario file.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text)?;
    let target = TargetSpec {
        center: Vec2::new(file.target.cx, file.target.cy),
        radius: file.target.radius,
    };
    let obstacles = file
        .obstacles
        .iter()
        .map(|o| ObstacleSpec {
            orbit_radius: o.orbit_radius,
            obstacle_radius: o.obstacle_radius,
            period: o.period,
            initial_phase: o.phase_deg.to_radians(),
            orbit_center: Vec2::new(o.cx.unwrap_or(target.center.x), o.cy.unwrap_or(target.center.y)),
            direction: o.direction,
        })
        .collect();
    let vtols = file
        .vtols
        .iter()
        .map(|v| VtolSpec {
            id: v.id,
            start: Vec2::new(v.x, v.y),
            velocity: v.velocity,
            t_min: v.t_min,
            t_max: v.t_max,
        })
        .collect();
    let horizon = match file.mode {
        ModeFile::Periodic { period } => Horizon::Periodic(period),
        ModeFile::StaticAfter { t_star } => Horizon::StaticAfter(t_star),
    };
    let b = file.bounds;
    Scenario::new(
        Bounds {
            xmin: b.xmin,
            xmax: b.xmax,
            ymin: b.ymin,
            ymax: b.ymax,
        },
        target,
        obstacles,
        vtols,
        horizon,
    )
}
