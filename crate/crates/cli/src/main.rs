use clap::Parser;
use skylane::pipeline::{run_pipeline, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Schedules vehicles onto a shared landing zone and plans their
/// collision-free paths among moving obstacles.
#[derive(Debug, Parser)]
#[command(name = "skylane", version)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Weight of the flight durations against the start times.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Linearization error bound of the initial grids, in seconds.
    #[arg(long, default_value_t = 2.0)]
    eps0: f64,
    /// Linearization error bound at the optimal starts, in seconds.
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Points inserted into each subinterval that is split.
    #[arg(long, default_value_t = 1)]
    split_points: usize,
    /// Grid spacing in meters.
    #[arg(long, default_value_t = 4.0)]
    dx: f64,
    /// Number of discrete headings.
    #[arg(long, default_value_t = 64)]
    controls: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write the full value field to field.csv.
    #[arg(long)]
    export_field: bool,
    /// Also write the per-vehicle duration tables and curves.
    #[arg(long)]
    export_durations: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = RunConfig {
        scenario_path: args.scenario,
        alpha: args.alpha,
        eps0: args.eps0,
        eps: args.eps,
        split_points: args.split_points,
        dx: args.dx,
        n_controls: args.controls,
        out_dir: args.out,
        export_field: args.export_field,
        export_durations: args.export_durations,
        ..RunConfig::default()
    };
    match run_pipeline(&cfg) {
        Ok(outcome) => {
            let s = &outcome.plan.schedule;
            for r in &s.rows {
                println!(
                    "#{} vehicle {}: start {:.2} s, end {:.2} s, duration {:.2} s",
                    r.starting_number, r.original_id, r.start, r.end, r.duration
                );
            }
            println!("mission ends at {:.2} s; outputs in {}", s.makespan(), cfg.out_dir.display());
            if outcome.exit_code != 0 {
                eprintln!(
                    "warning: optimality not proven ({:?})",
                    outcome.plan.refinement.status
                );
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
