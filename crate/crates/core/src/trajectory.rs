//! Trajectory extraction by greedy descent on the value field, collision
//! checks, and assembly of the landing schedule.

use crate::hjb::{step_outcome, GridSpec, HjbError, StepOutcome, ValueField};
use crate::scenario::{Environment, Region, Vec2};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("vehicle start {0} cannot reach the target from t = {1} s")]
    Unreachable(Vec2, f64),
    #[error("no admissible heading from {x} at t = {t} s")]
    Stuck { x: Vec2, t: f64, partial: Vec<(f64, Vec2)> },
    #[error("step budget of {budget} exhausted before reaching the target")]
    Budget { budget: usize, partial: Vec<(f64, Vec2)> },
    #[error(transparent)]
    Field(#[from] HjbError),
    #[error("flights of vehicles {first} and {second} overlap")]
    Overlap { first: u32, second: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub vtol_id: u32,
    /// `(t, x)` samples; all but the last step are one grid step long.
    pub points: Vec<(f64, Vec2)>,
    pub path_length: f64,
    pub duration: f64,
    /// Steps at which the value did not decrease by at least `dx - 2 dx`.
    pub descent_violations: usize,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.points[0].0
    }

    pub fn end_time(&self) -> f64 {
        self.points.last().unwrap().0
    }

    /// Writes `t_s,x_m,y_m` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t_s,x_m,y_m")?;
        for (t, x) in &self.points {
            writeln!(out, "{t},{},{}", x.x, x.y)?;
        }
        Ok(())
    }
}

/// Smallest slice time not earlier than `t_star` (up to `1e-9` s).
pub fn round_up_start(t_star: f64, grid: &GridSpec) -> f64 {
    round_up_index(t_star, grid) as f64 * grid.dt
}

fn round_up_index(t_star: f64, grid: &GridSpec) -> usize {
    ((t_star - 1e-9) / grid.dt).ceil().max(0.0) as usize
}

/// Follows the minimizing heading from `x0`, departing at the slice time
/// `t_start`, until a step reaches the target.
///
/// Each step picks the heading minimizing `dx + V(t + dt, x + dx u)`, or the
/// distance to the target if the step reaches it; ties go to the lowest
/// heading index. The last step ends on the target boundary.
pub fn extract_trajectory<E: Environment>(
    field: &ValueField,
    env: &E,
    vtol_id: u32,
    x0: Vec2,
    t_start: f64,
) -> Result<Trajectory, TrajectoryError> {
    let grid = *field.grid();
    let target = env.target();
    let speed = grid.velocity();
    let mut k = round_up_index(t_start, &grid);
    let mut t = k as f64 * grid.dt;
    let mut x = x0;
    let mut points = vec![(t, x)];
    let mut violations = 0;
    if !target.contains(x0) {
        let v0 = field
            .value_at(env, t, x0)?
            .ok_or(TrajectoryError::Unreachable(x0, t))?;
        let budget = ((4.0 * v0 / grid.dx).ceil() as usize).max(4);
        let mut v_here = v0;
        let mut steps = 0;
        loop {
            if steps == budget {
                return Err(TrajectoryError::Budget { budget, partial: points });
            }
            steps += 1;
            let mid = env.snapshot(t + 0.5 * grid.dt);
            let next = env.snapshot(t + grid.dt);
            let kn = field.slice_of(k + 1);
            let mut best: Option<(f64, usize, StepOutcome)> = None;
            for j in 0..grid.n_controls {
                let u = grid.heading(j);
                let outcome = step_outcome(&target, &mid, &next, x, u, grid.dx);
                let cost = match outcome {
                    StepOutcome::Blocked => continue,
                    StepOutcome::Enter(s) => s,
                    StepOutcome::Land(y) => match field.value_in_slice(kn, y)? {
                        Some(v) => grid.dx + v,
                        None => continue,
                    },
                };
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, j, outcome));
                }
            }
            let Some((cost, j, outcome)) = best else {
                return Err(TrajectoryError::Stuck { x, t, partial: points });
            };
            match outcome {
                StepOutcome::Enter(s) => {
                    let end = x + grid.heading(j) * s;
                    points.push((t + s / speed, end));
                    break;
                }
                StepOutcome::Land(y) => {
                    let v_next = cost - grid.dx;
                    if v_next > v_here + grid.dx + 1e-9 {
                        violations += 1;
                    }
                    v_here = v_next;
                    x = y;
                    k += 1;
                    t = k as f64 * grid.dt;
                    points.push((t, x));
                }
                StepOutcome::Blocked => unreachable!(),
            }
        }
    }
    let path_length = points.windows(2).map(|w| w[0].1.dist(w[1].1)).sum();
    let duration = points.last().unwrap().0 - points[0].0;
    Ok(Trajectory {
        vtol_id,
        points,
        path_length,
        duration,
        descent_violations: violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub x: Vec2,
    pub region: Region,
}

/// Points and segment midpoints of the trajectory that lie in an obstacle or
/// outside the domain at their time.
pub fn verify_no_collision<E: Environment>(tr: &Trajectory, env: &E) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |t: f64, x: Vec2| {
        let region = env.classify(x, t);
        if region.is_blocked() {
            out.push(Violation { t, x, region });
        }
    };
    for (i, &(t, x)) in tr.points.iter().enumerate() {
        if i > 0 {
            let (tp, xp) = tr.points[i - 1];
            check(0.5 * (t + tp), xp.lerp(x, 0.5));
        }
        check(t, x);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRow {
    pub starting_number: usize,
    pub original_id: u32,
    pub start: f64,
    pub end: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub rows: Vec<ScheduleRow>,
}

impl Schedule {
    /// Completion time of the last flight.
    pub fn makespan(&self) -> f64 {
        self.rows.iter().map(|r| r.end).fold(0.0, f64::max)
    }

    pub fn mean_duration(&self) -> f64 {
        self.rows.iter().map(|r| r.duration).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "starting_number,original_number,start_s,end_s,duration_s")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.starting_number, r.original_id, r.start, r.end, r.duration
            )?;
        }
        Ok(())
    }
}

/// Orders the flights by start time and checks that they are disjoint.
pub fn assemble_schedule(trajectories: &[Trajectory]) -> Result<Schedule, TrajectoryError> {
    let mut order: Vec<&Trajectory> = trajectories.iter().collect();
    order.sort_by(|a, b| a.start_time().total_cmp(&b.start_time()).then(a.vtol_id.cmp(&b.vtol_id)));
    let rows: Vec<ScheduleRow> = order
        .iter()
        .enumerate()
        .map(|(n, tr)| ScheduleRow {
            starting_number: n + 1,
            original_id: tr.vtol_id,
            start: tr.start_time(),
            end: tr.end_time(),
            duration: tr.duration,
        })
        .collect();
    for w in rows.windows(2) {
        if w[0].end > w[1].start + 1e-9 {
            return Err(TrajectoryError::Overlap {
                first: w[0].original_id,
                second: w[1].original_id,
            });
        }
    }
    Ok(Schedule { rows })
}
