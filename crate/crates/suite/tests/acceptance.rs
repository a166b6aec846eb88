//! Exit criteria, run in sequence so the timed ones get the machine to
//! themselves. Prints one PASS/FAIL line per criterion and fails at the end
//! if any criterion failed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use common::{dijkstra16, enumerate_schedule, random_grid, random_rect_world, random_table};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skylane::bnb::{solve_milp, BnbConfig, MilpStatus};
use skylane::duration::envelope_errors;
use skylane::hjb::{solve, GridSpec, SolverConfig};
use skylane::model::{build_model, choose_big_m};
use skylane::pipeline::{duration_curve, plan, run_pipeline, solve_field, Plan, RunConfig, RunOutcome};
use skylane::refine::{refine_loop, RefineStatus, RefinementConfig, RefinementResult};
use skylane::scenario::{Bounds, Horizon, Scenario, TargetSpec, Vec2, VtolSpec};
use skylane::trajectory::verify_no_collision;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

type Verdict = (bool, String);

fn reference_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference.toml")
}

fn free_space() -> Scenario {
    Scenario::new(
        Bounds {
            xmin: -200.0,
            xmax: 200.0,
            ymin: -200.0,
            ymax: 200.0,
        },
        TargetSpec {
            center: Vec2::new(0.0, 0.0),
            radius: 10.0,
        },
        vec![],
        vec![VtolSpec {
            id: 1,
            start: Vec2::new(192.0, 192.0),
            velocity: 10.0,
            t_min: 0.0,
            t_max: 60.0,
        }],
        Horizon::StaticAfter(0.0),
    )
    .unwrap()
}

fn free_space_accuracy() -> Verdict {
    let s = free_space();
    let field = solve_field(&s, 4.0, 64).unwrap();
    let g = *field.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 50 {
        let (ix, iy) = (rng.gen_range(0..g.nodes_x()), rng.gen_range(0..g.nodes_y()));
        let x = g.node(ix, iy);
        if x.norm() <= 10.0 {
            continue;
        }
        let exact = x.norm() - 10.0;
        let v = field.node_value(0, ix, iy).expect("free space is reachable");
        worst = worst.max((v - exact).abs() / exact);
        checked += 1;
    }
    (worst <= 0.05, format!("max relative error {:.4} over 50 nodes (limit 0.05)", worst))
}

fn dijkstra_equivalence() -> Verdict {
    let (n, dx) = (41, 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    let mut pockets = 0;
    for w in 0..20 {
        let world = random_rect_world(&mut rng, n, dx, w);
        let grid = GridSpec::new(&world, dx, 10.0, 64).unwrap();
        assert_eq!((grid.nodes_x(), grid.nodes_y()), (n, n));
        let field = solve(&world, &SolverConfig::new(grid, &world.bounds)).unwrap();
        let oracle = dijkstra16(&world, n, dx);
        for iy in 0..n {
            for ix in 0..n {
                let p = grid.node(ix, iy);
                if world.rects.iter().any(|r| r.contains(p)) {
                    continue;
                }
                let d = oracle[iy * n + ix];
                match (field.node_value(0, ix, iy), d.is_finite()) {
                    (Some(v), true) => {
                        if d > 0.0 {
                            worst = worst.max((v - d).abs() / d);
                        } else if v > 1e-9 {
                            worst = f64::INFINITY;
                        }
                    }
                    (None, false) => pockets += 1,
                    _ => mismatched += 1,
                }
            }
        }
    }
    (
        worst <= 0.05 && mismatched == 0,
        format!(
            "max relative deviation {worst:.4} (limit 0.05), {mismatched} reachability mismatches, {pockets} unreachable free nodes agreed"
        ),
    )
}

fn curve_shape(run: &RunOutcome) -> Verdict {
    let clock = Instant::now();
    let curve = duration_curve(&run.field, &run.scenario, 3).unwrap();
    let elapsed = run.timings.field + clock.elapsed().as_secs_f64();
    let dt = run.field.grid().dt;
    let shift = (20.0 / dt).round() as usize;
    let period_dev = (0..curve.len() - shift)
        .map(|k| (curve[k + shift].length - curve[k].length).abs())
        .fold(0.0, f64::max);
    let first: Vec<_> = curve.iter().filter(|p| p.t < 20.0 - 1e-9).collect();
    let min = first.iter().min_by(|a, b| a.length.total_cmp(&b.length)).unwrap();
    let max = first.iter().max_by(|a, b| a.length.total_cmp(&b.length)).unwrap();
    let pass = period_dev <= 1e-6
        && (0.0..=5.0).contains(&min.t)
        && (290.0..=340.0).contains(&max.length)
        && (8.0..=14.0).contains(&max.t)
        && elapsed < 120.0;
    (
        pass,
        format!(
            "20 s shift deviation {period_dev:.2e} m, min {:.1} m at t = {:.1} s, max {:.1} m at t = {:.1} s, {elapsed:.1} s",
            min.length, min.t, max.length, max.t
        ),
    )
}

fn milp_exactness() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut disagreements = 0;
    let mut infeasible = 0;
    let instances = 120;
    for _ in 0..instances {
        let n = rng.gen_range(1..=3);
        let alpha = [0.0, 0.5, 1.0, 3.0, 10.0][rng.gen_range(0..5)];
        let mut tables = Vec::new();
        let mut grids = Vec::new();
        for id in 1..=n as u32 {
            let t0 = rng.gen_range(0.0..30.0);
            let len = rng.gen_range(20.0..80.0);
            let base = rng.gen_range(8.0..25.0);
            let amp = rng.gen_range(0.0..base / 3.0);
            let fine = rng.gen_range(6..=12);
            let d = random_table(&mut rng, id, fine, t0, t0 + len, base, amp);
            let k = rng.gen_range(2..=5);
            grids.push(random_grid(&mut rng, &d, k));
            tables.push(d);
        }
        let model = build_model(&tables, &grids, alpha, choose_big_m(&tables, &grids)).unwrap();
        let sol = solve_milp(&model, &BnbConfig::default()).unwrap();
        let oracle = enumerate_schedule(&tables, &grids, alpha);
        match (sol.status, oracle) {
            (MilpStatus::Optimal, Some(v)) => worst = worst.max((sol.objective - v).abs()),
            (MilpStatus::Infeasible, None) => infeasible += 1,
            _ => disagreements += 1,
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    (
        worst <= 1e-6 && disagreements == 0 && secs < 60.0,
        format!(
            "{instances} instances ({infeasible} infeasible), max |B&B - oracle| {worst:.2e}, {disagreements} status disagreements, {secs:.1} s"
        ),
    )
}

fn refinement_holds(r: &RefinementResult, eps: f64) -> Result<(), String> {
    if r.status != RefineStatus::Optimal {
        return Err(format!("stopped with {:?} after {} rounds", r.status, r.rounds));
    }
    if let Some(e) = r.errors.iter().find(|&&e| e > eps) {
        return Err(format!("final error {e} exceeds {eps}"));
    }
    for w in r.log.windows(2) {
        if w[1].objective < w[0].objective - 1e-9 * w[0].objective.abs().max(1.0) {
            return Err(format!(
                "objective fell from {} to {} in round {}",
                w[0].objective, w[1].objective, w[1].round
            ));
        }
    }
    Ok(())
}

fn algorithm_guarantee(reference: &[&RefinementResult]) -> Verdict {
    let cfg = RefinementConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut problems = Vec::new();
    let mut max_rounds = 0;
    for (i, r) in reference.iter().enumerate() {
        max_rounds = max_rounds.max(r.rounds);
        if let Err(e) = refinement_holds(r, cfg.eps) {
            problems.push(format!("reference run {i}: {e}"));
        }
    }
    let synthetic = 20;
    for case in 0..synthetic {
        let n = rng.gen_range(1..=3);
        let tables: Vec<_> = (1..=n as u32)
            .map(|id| {
                let base = rng.gen_range(15.0..30.0);
                let (fine, amp) = (rng.gen_range(30..=60), rng.gen_range(1.0..6.0));
                random_table(&mut rng, id, fine, 0.0, 120.0, base, amp)
            })
            .collect();
        let r = refine_loop(&tables, rng.gen_range(0.5..5.0), &cfg).unwrap();
        max_rounds = max_rounds.max(r.rounds);
        if let Err(e) = refinement_holds(&r, cfg.eps) {
            problems.push(format!("synthetic {case}: {e}"));
        }
    }
    (
        problems.is_empty(),
        format!(
            "{} runs, at most {max_rounds} rounds{}",
            reference.len() + synthetic,
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn reference_end_to_end(run: &RunOutcome) -> Verdict {
    let rows = &run.plan.schedule.rows;
    let disjoint = rows.windows(2).all(|w| w[0].end <= w[1].start);
    let durations: Vec<f64> = rows.iter().map(|r| r.duration).collect();
    let in_band = durations.iter().all(|d| (26.0..=31.0).contains(d));
    let collisions: usize = run
        .plan
        .trajectories
        .iter()
        .map(|t| verify_no_collision(t, &run.scenario).len())
        .sum();
    let secs = run.timings.total();
    let listed: Vec<String> = rows.iter().map(|r| format!("{}:{:.2}", r.original_id, r.duration)).collect();
    (
        rows.len() == 8 && disjoint && in_band && collisions == 0 && secs < 300.0,
        format!(
            "{} flights, disjoint {disjoint}, durations [{}] within [26, 31] {in_band}, {collisions} collisions, {secs:.1} s",
            rows.len(),
            listed.join(" ")
        ),
    )
}

fn alpha_trend(run: &RunOutcome, heavy: &Plan) -> Verdict {
    let light = &run.plan.schedule;
    let (m1, m10) = (light.mean_duration(), heavy.schedule.mean_duration());
    (
        m10 <= m1,
        format!(
            "mean duration {m1:.3} s at alpha 1, {m10:.3} s at alpha 10; mission ends at {:.2} s and {:.2} s",
            light.makespan(),
            heavy.schedule.makespan()
        ),
    )
}

fn envelope_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut invalid = 0;
    let mut growth = 0;
    let mut worst_growth = 0.0f64;
    let tables = 1000;
    for _ in 0..tables {
        let n = rng.gen_range(4..=40);
        let (span, amp) = (rng.gen_range(10.0..200.0), rng.gen_range(0.5..8.0));
        let d = random_table(&mut rng, 1, n, 0.0, span, 28.0, amp);
        let a = rng.gen_range(0..n - 2);
        let b = rng.gen_range(a + 2..n);
        let (ta, tb) = (d.fine_times[a], d.fine_times[b]);
        let e = envelope_errors(&d, ta, tb).unwrap();
        for k in a..=b {
            let psi = d.fine_values[a] + (d.fine_values[b] - d.fine_values[a]) * (d.fine_times[k] - ta) / (tb - ta);
            let v = d.fine_values[k];
            if !(psi - e.e_o - 1e-9 <= v && v <= psi + e.e_u + 1e-9) {
                invalid += 1;
            }
        }
        let c = rng.gen_range(a + 1..b);
        let tc = d.fine_times[c];
        let parent = e.max_error();
        for child in [envelope_errors(&d, ta, tc).unwrap(), envelope_errors(&d, tc, tb).unwrap()] {
            if child.max_error() > parent + 1e-9 {
                growth += 1;
                worst_growth = worst_growth.max(child.max_error() - parent);
            }
        }
    }
    (
        invalid == 0 && growth == 0,
        format!(
            "{tables} tables: {invalid} nodes outside the envelope, {growth} child envelopes larger than the parent (worst by {worst_growth:.3} s)"
        ),
    )
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&path).unwrap();
            if name == "run_summary.txt" {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.starts_with("wall_"))
                    .flat_map(|l| format!("{l}\n").into_bytes())
                    .collect();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn determinism(first_dir: &Path, cfg: &RunConfig) -> Verdict {
    let second = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out_dir: second.path().to_path_buf(),
        ..cfg.clone()
    };
    run_pipeline(&cfg).unwrap();
    let (a, b) = (read_outputs(first_dir), read_outputs(second.path()));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    (
        a.len() == b.len() && differing.is_empty() && names.contains(&"schedule.csv") && names.contains(&"node_log.csv"),
        format!("{} files compared, differing: {:?}", a.len(), differing),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    }
}

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, (pass, detail): Verdict| {
        println!("{} {n} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(n);
        }
    };

    report(1, "free-space value accuracy", guarded(free_space_accuracy));
    report(2, "Dijkstra oracle equivalence", guarded(dijkstra_equivalence));

    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        scenario_path: reference_path(),
        out_dir: out.path().to_path_buf(),
        export_durations: true,
        ..RunConfig::default()
    };
    let run = run_pipeline(&cfg).expect("reference scenario runs");
    assert_eq!(run.exit_code, 0);

    report(3, "duration curve shape", guarded(|| curve_shape(&run)));
    report(4, "MILP solver exactness", guarded(milp_exactness));
    let heavy = plan(&run.scenario, &run.field, 10.0, &RefinementConfig::default());
    report(
        5,
        "refinement guarantee",
        guarded(|| {
            let heavy = heavy.as_ref().expect("alpha 10 plan");
            algorithm_guarantee(&[&run.plan.refinement, &heavy.refinement])
        }),
    );
    report(6, "reference scenario end to end", guarded(|| reference_end_to_end(&run)));
    report(
        7,
        "alpha trend",
        guarded(|| alpha_trend(&run, heavy.as_ref().expect("alpha 10 plan"))),
    );
    report(8, "envelope correctness", guarded(envelope_properties));
    report(9, "determinism", guarded(|| determinism(out.path(), &cfg)));

    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
