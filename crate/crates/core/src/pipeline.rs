//! End-to-end driver: scenario file in, schedule and trajectories out.
//!
//! The three stages run in order: value field, duration tables plus the
//! refined scheduling model, then trajectory extraction and scheduling.

use crate::duration::{build_duration, DurationError, DurationFunction};
use crate::hjb::{solve, GridSpec, HjbError, SolverConfig, ValueField};
use crate::refine::{refine_loop, write_round_log, RefineError, RefineStatus, RefinementConfig, RefinementResult};
use crate::scenario::{load_scenario, Horizon, Scenario, ScenarioError, VtolSpec};
use crate::trajectory::{
    assemble_schedule, extract_trajectory, round_up_start, verify_no_collision, Schedule, Trajectory,
    TrajectoryError,
};
use crate::bnb::write_node_log;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Process exit codes, one per failure class.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const UNREACHABLE_START: i32 = 3;
    pub const NON_CONVERGENCE: i32 = 4;
    pub const INFEASIBLE: i32 = 5;
    pub const NOT_PROVEN: i32 = 6;
    pub const TRAJECTORY: i32 = 7;
    pub const SOLVER: i32 = 8;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario_path: PathBuf,
    pub alpha: f64,
    pub eps0: f64,
    pub eps: f64,
    pub split_points: usize,
    pub dx: f64,
    pub n_controls: usize,
    pub out_dir: PathBuf,
    pub export_field: bool,
    pub export_durations: bool,
    pub export_node_log: bool,
    pub export_round_log: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let refine = RefinementConfig::default();
        RunConfig {
            scenario_path: PathBuf::from("scenarios/reference.toml"),
            alpha: 1.0,
            eps0: refine.eps0,
            eps: refine.eps,
            split_points: refine.split_points,
            dx: 4.0,
            n_controls: 64,
            out_dir: PathBuf::from("out"),
            export_field: false,
            export_durations: false,
            export_node_log: true,
            export_round_log: true,
        }
    }
}

impl RunConfig {
    pub fn refinement(&self) -> RefinementConfig {
        RefinementConfig {
            eps0: self.eps0,
            eps: self.eps,
            split_points: self.split_points,
            ..RefinementConfig::default()
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if !(self.alpha >= 0.0) {
            return Err(PipelineError::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.dx > 0.0) {
            return Err(PipelineError::Config(format!("dx must be positive, got {}", self.dx)));
        }
        if self.n_controls < 8 {
            return Err(PipelineError::Config(format!("need at least 8 headings, got {}", self.n_controls)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("value field: {0}")]
    Field(#[from] HjbError),
    #[error("durations: vehicle {vtol_id} cannot reach the target when departing at t = {t} s")]
    UnreachableStart { vtol_id: u32, t: f64 },
    #[error("durations: vehicle {vtol_id}: {source}")]
    Duration {
        vtol_id: u32,
        #[source]
        source: DurationError,
    },
    #[error("scheduling: {0}")]
    Refine(#[from] RefineError),
    #[error("scheduling: the landing windows admit no schedule")]
    Infeasible,
    #[error("trajectory: vehicle {vtol_id}: {source}")]
    Trajectory {
        vtol_id: u32,
        #[source]
        source: TrajectoryError,
    },
    #[error("trajectory: vehicle {vtol_id} collides at t = {t} s")]
    Collision { vtol_id: u32, t: f64 },
    #[error("schedule: {0}")]
    Schedule(TrajectoryError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } | PipelineError::Scenario(_) | PipelineError::Config(_) => exit_code::INPUT,
            PipelineError::Field(HjbError::NonConvergence { .. }) => exit_code::NON_CONVERGENCE,
            PipelineError::Field(_) => exit_code::INPUT,
            PipelineError::UnreachableStart { .. } => exit_code::UNREACHABLE_START,
            PipelineError::Duration { .. } => exit_code::INPUT,
            PipelineError::Refine(_) => exit_code::SOLVER,
            PipelineError::Infeasible => exit_code::INFEASIBLE,
            PipelineError::Trajectory { .. } | PipelineError::Collision { .. } | PipelineError::Schedule(_) => {
                exit_code::TRAJECTORY
            }
        }
    }
}

/// Everything the planning stages produce after the value field.
#[derive(Debug, Clone)]
pub struct Plan {
    pub durations: Vec<DurationFunction>,
    pub refinement: RefinementResult,
    /// In schedule order.
    pub trajectories: Vec<Trajectory>,
    pub schedule: Schedule,
    /// Start delay over the optimal start, per vehicle in schedule order.
    pub delays: Vec<(u32, f64)>,
}

/// Wall-clock seconds spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimings {
    pub field: f64,
    pub schedule: f64,
    pub trajectory: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.field + self.schedule + self.trajectory
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub field: ValueField,
    pub plan: Plan,
    pub timings: StageTimings,
    pub exit_code: i32,
}

/// Builds the grid and solves the value field for a scenario whose vehicles
/// share one speed.
pub fn solve_field(scenario: &Scenario, dx: f64, n_controls: usize) -> Result<ValueField, PipelineError> {
    let velocity = scenario
        .common_velocity()
        .ok_or_else(|| PipelineError::Config("all vehicles must share one velocity".into()))?;
    let grid = GridSpec::new(scenario, dx, velocity, n_controls)?;
    Ok(solve(scenario, &SolverConfig::new(grid, &scenario.bounds))?)
}

/// Duration tables for every vehicle, in scenario order.
pub fn build_durations(field: &ValueField, scenario: &Scenario) -> Result<Vec<DurationFunction>, PipelineError> {
    scenario
        .vtols
        .iter()
        .map(|vt| {
            build_duration(field, scenario, vt).map_err(|source| match source {
                DurationError::Unreachable { vtol_id, t } => PipelineError::UnreachableStart { vtol_id, t },
                source => PipelineError::Duration { vtol_id: vt.id, source },
            })
        })
        .collect()
}

/// Runs the scheduling and trajectory stages on a solved field.
///
/// Vehicles depart in the order of their optimal start times. Each departure
/// is rounded up to the next time slice and, if the previous flight has not
/// yet landed, delayed until it has.
pub fn plan(
    scenario: &Scenario,
    field: &ValueField,
    alpha: f64,
    refine_cfg: &RefinementConfig,
) -> Result<Plan, PipelineError> {
    let durations = build_durations(field, scenario)?;
    let refinement = refine_loop(&durations, alpha, refine_cfg)?;
    fly(scenario, field, durations, refinement)
}

/// Extracts the trajectories for a solved schedule; see [`plan`].
pub fn fly(
    scenario: &Scenario,
    field: &ValueField,
    durations: Vec<DurationFunction>,
    refinement: RefinementResult,
) -> Result<Plan, PipelineError> {
    if refinement.status == RefineStatus::Infeasible {
        return Err(PipelineError::Infeasible);
    }
    let mut order: Vec<usize> = (0..refinement.vtol_ids.len()).collect();
    order.sort_by(|&a, &b| {
        refinement.t_star[a]
            .total_cmp(&refinement.t_star[b])
            .then(refinement.vtol_ids[a].cmp(&refinement.vtol_ids[b]))
    });
    let grid = field.grid();
    let mut trajectories = Vec::with_capacity(order.len());
    let mut delays = Vec::with_capacity(order.len());
    let mut prev_end = f64::NEG_INFINITY;
    for i in order {
        let id = refinement.vtol_ids[i];
        let vt = scenario.vtol(id).expect("refinement keeps scenario ids");
        let t_star = refinement.t_star[i];
        let start = round_up_start(t_star.max(prev_end), grid);
        let tr = extract_trajectory(field, scenario, id, vt.start, start)
            .map_err(|source| PipelineError::Trajectory { vtol_id: id, source })?;
        if let Some(v) = verify_no_collision(&tr, scenario).first() {
            return Err(PipelineError::Collision { vtol_id: id, t: v.t });
        }
        prev_end = tr.end_time();
        delays.push((id, start - t_star));
        trajectories.push(tr);
    }
    let schedule = assemble_schedule(&trajectories).map_err(PipelineError::Schedule)?;
    Ok(Plan {
        durations,
        refinement,
        trajectories,
        schedule,
        delays,
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    f(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

/// One curve sample: departure time, path length and flight time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub length: f64,
    pub duration: f64,
}

/// Shortest path length and flight time of one vehicle at every slice time
/// of one full period (periodic scenarios, both ends included) or of its
/// landing window (static scenarios).
pub fn duration_curve(field: &ValueField, scenario: &Scenario, vtol_id: u32) -> Result<Vec<CurvePoint>, PipelineError> {
    let vt: &VtolSpec = scenario
        .vtol(vtol_id)
        .ok_or_else(|| PipelineError::Config(format!("unknown vehicle id {vtol_id}")))?;
    let dt = field.grid().dt;
    let times: Vec<f64> = match scenario.horizon {
        Horizon::Periodic(_) => (0..=field.grid().n_slices).map(|k| k as f64 * dt).collect(),
        Horizon::StaticAfter(_) => build_durations(field, scenario)?
            .into_iter()
            .find(|d| d.vtol_id == vtol_id)
            .map(|d| d.fine_times)
            .unwrap_or_default(),
    };
    times
        .into_iter()
        .map(|t| {
            let length = field
                .value_at(scenario, t, vt.start)?
                .ok_or(PipelineError::UnreachableStart { vtol_id, t })?;
            Ok(CurvePoint {
                t,
                length,
                duration: length / vt.velocity,
            })
        })
        .collect()
}

/// Writes `t_s,d_m,D_s` rows of [`duration_curve`].
pub fn export_duration_plot_data<W: Write>(
    field: &ValueField,
    scenario: &Scenario,
    vtol_id: u32,
    mut out: W,
) -> Result<(), PipelineError> {
    let curve = duration_curve(field, scenario, vtol_id)?;
    let text = curve.iter().fold(String::from("t_s,d_m,D_s\n"), |mut s, p| {
        let _ = writeln!(s, "{},{},{}", p.t, p.length, p.duration);
        s
    });
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<duration curve>")))
}

fn summary_text(cfg: &RunConfig, field: &ValueField, plan: &Plan, status: RefineStatus, timings: &StageTimings) -> String {
    let r = &plan.refinement;
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("status", &format!("{status:?}"));
    kv("alpha", &cfg.alpha);
    kv("eps0", &cfg.eps0);
    kv("eps", &cfg.eps);
    kv("split_points", &cfg.split_points);
    kv("dx", &cfg.dx);
    kv("controls", &cfg.n_controls);
    kv("time_slices", &field.grid().n_slices);
    kv("field_sweeps", &field.sweeps());
    kv("objective", &r.objective);
    kv("rounds", &r.rounds);
    kv("mission_end_s", &plan.schedule.makespan());
    kv("mean_duration_s", &plan.schedule.mean_duration());
    for (i, id) in r.vtol_ids.iter().enumerate() {
        kv(&format!("t_star_{id}"), &r.t_star[i]);
        kv(&format!("model_duration_{id}"), &r.d_pw[i]);
        kv(&format!("model_error_{id}"), &r.errors[i]);
    }
    for (tr, (id, delay)) in plan.trajectories.iter().zip(&plan.delays) {
        kv(&format!("start_{id}"), &tr.start_time());
        kv(&format!("delay_{id}"), delay);
        kv(&format!("duration_{id}"), &tr.duration);
        kv(&format!("path_length_{id}"), &tr.path_length);
    }
    kv("wall_field_s", &format!("{:.3}", timings.field));
    kv("wall_schedule_s", &format!("{:.3}", timings.schedule));
    kv("wall_trajectory_s", &format!("{:.3}", timings.trajectory));
    s
}

fn write_outputs(cfg: &RunConfig, scenario: &Scenario, field: &ValueField, plan: &Plan, summary: &str) -> Result<(), PipelineError> {
    let dir = &cfg.out_dir;
    write_file(&dir.join("schedule.csv"), |o| plan.schedule.write_csv(o))?;
    for tr in &plan.trajectories {
        write_file(&dir.join(format!("trajectory_{}.csv", tr.vtol_id)), |o| tr.write_csv(o))?;
    }
    write_file(&dir.join("run_summary.txt"), |o| o.write_all(summary.as_bytes()))?;
    if cfg.export_round_log {
        write_file(&dir.join("round_log.csv"), |o| write_round_log(&plan.refinement.log, o))?;
    }
    if cfg.export_node_log {
        write_file(&dir.join("node_log.csv"), |o| write_node_log(&plan.refinement.node_log, o))?;
    }
    if cfg.export_field {
        write_file(&dir.join("field.csv"), |o| field.write_csv(o))?;
    }
    if cfg.export_durations {
        for d in &plan.durations {
            write_file(&dir.join(format!("duration_{}.csv", d.vtol_id)), |o| d.write_csv(o))?;
            let path = dir.join(format!("duration_curve_{}.csv", d.vtol_id));
            let file = File::create(&path).map_err(io_err(&path))?;
            export_duration_plot_data(field, scenario, d.vtol_id, BufWriter::new(file))?;
        }
    }
    Ok(())
}

/// Runs all stages and writes the output files into `cfg.out_dir`.
///
/// A schedule whose optimality could not be proven (round or node limit) is
/// still written, with exit code [`exit_code::NOT_PROVEN`].
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let text = fs::read_to_string(&cfg.scenario_path).map_err(io_err(&cfg.scenario_path))?;
    let scenario = load_scenario(&text)?;
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;

    let clock = Instant::now();
    let field = solve_field(&scenario, cfg.dx, cfg.n_controls)?;
    let t_field = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let durations = build_durations(&field, &scenario)?;
    let refinement = refine_loop(&durations, cfg.alpha, &cfg.refinement())?;
    let t_schedule = clock.elapsed().as_secs_f64();
    let status = refinement.status;

    let clock = Instant::now();
    let plan = fly(&scenario, &field, durations, refinement)?;
    let t_trajectory = clock.elapsed().as_secs_f64();

    let timings = StageTimings {
        field: t_field,
        schedule: t_schedule,
        trajectory: t_trajectory,
    };
    let summary = summary_text(cfg, &field, &plan, status, &timings);
    write_outputs(cfg, &scenario, &field, &plan, &summary)?;
    let exit_code = match status {
        RefineStatus::Optimal => exit_code::OK,
        _ => exit_code::NOT_PROVEN,
    };
    Ok(RunOutcome {
        scenario,
        field,
        plan,
        timings,
        exit_code,
    })
}
