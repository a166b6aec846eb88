//! Adaptive refinement of the piecewise-linear scheduling model.
//!
//! Starting from coarse grids whose secant errors stay below `eps0`, the
//! model is solved repeatedly; every vehicle whose linearization error at the
//! optimal start exceeds `eps` has its active subinterval split, until all
//! errors are within `eps`.

use crate::bnb::{solve_milp, BnbConfig, BnbError, MilpStatus, NodeRecord};
use crate::duration::DurationFunction;
use crate::model::{build_model, choose_big_m, piecewise_duration, CoarseGrid, MilpModel, ModelError};
use std::io::{self, Write};
use thiserror::Error;

/// Vehicles whose duration samples agree to within this are interchangeable.
pub const INTERCHANGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementConfig {
    pub eps0: f64,
    pub eps: f64,
    /// New points inserted into each split subinterval.
    pub split_points: usize,
    pub max_rounds: usize,
    pub bnb: BnbConfig,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            eps0: 2.0,
            eps: 0.5,
            split_points: 1,
            max_rounds: 50,
            bnb: BnbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStatus {
    Optimal,
    Infeasible,
    MaxRounds,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub objective: f64,
    pub errors: Vec<f64>,
    pub grid_sizes: Vec<usize>,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementResult {
    pub status: RefineStatus,
    pub vtol_ids: Vec<u32>,
    pub t_star: Vec<f64>,
    /// Piecewise-linear duration at the optimum, per vehicle.
    pub d_pw: Vec<f64>,
    /// `((i, j), first)` for every pair of vehicle ids; `first` is true when `i` flies first.
    pub w_star: Vec<((u32, u32), bool)>,
    pub objective: f64,
    pub rounds: usize,
    pub grids: Vec<CoarseGrid>,
    pub errors: Vec<f64>,
    pub log: Vec<RoundRecord>,
    /// Branch-and-bound node log of the last round.
    pub node_log: Vec<NodeRecord>,
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] BnbError),
    #[error("invalid refinement settings: {0}")]
    Config(String),
}

/// Bisects every interval whose secant error exceeds `eps0`.
pub fn initial_grids(durations: &[DurationFunction], eps0: f64) -> Vec<CoarseGrid> {
    durations
        .iter()
        .map(|d| {
            let mut nodes = vec![0];
            bisect_until(d, 0, d.len() - 1, eps0, &mut nodes);
            CoarseGrid {
                vtol_id: d.vtol_id,
                nodes,
            }
        })
        .collect()
}

fn bisect_until(d: &DurationFunction, a: usize, b: usize, eps0: f64, nodes: &mut Vec<usize>) {
    if b - a >= 2 && d.envelope_by_index(a, b).max_error() > eps0 {
        let mid = midpoint_node(d, a, b);
        bisect_until(d, a, mid, eps0, nodes);
        bisect_until(d, mid, b, eps0, nodes);
    } else {
        nodes.push(b);
    }
}

/// Sample nearest to the middle of `[t_a, t_b]`, strictly inside.
fn midpoint_node(d: &DurationFunction, a: usize, b: usize) -> usize {
    let mid = 0.5 * (d.fine_times[a] + d.fine_times[b]);
    d.nearest_index(mid).clamp(a + 1, b - 1)
}

/// New sample indices splitting `(a, b)` into `split_points + 1` nearly equal
/// parts; falls back to bisection when snapping produces no new node.
pub fn split_nodes(d: &DurationFunction, a: usize, b: usize, split_points: usize) -> Vec<usize> {
    if b - a < 2 {
        return vec![];
    }
    let (ta, tb) = (d.fine_times[a], d.fine_times[b]);
    let h = (tb - ta) / (split_points + 1) as f64;
    let mut out: Vec<usize> = (1..=split_points)
        .map(|l| d.nearest_index(ta + l as f64 * h))
        .filter(|&k| k > a && k < b)
        .collect();
    out.dedup();
    if out.is_empty() {
        out.push(midpoint_node(d, a, b));
    }
    out
}

/// Groups of vehicles with identical duration tables, by position.
pub fn interchangeable_groups(durations: &[DurationFunction]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, d) in durations.iter().enumerate() {
        let same = |o: &DurationFunction| {
            o.len() == d.len()
                && o.fine_times.iter().zip(&d.fine_times).all(|(a, b)| (a - b).abs() <= INTERCHANGE_TOL)
                && o.fine_values.iter().zip(&d.fine_values).all(|(a, b)| (a - b).abs() <= INTERCHANGE_TOL)
        };
        match groups.iter_mut().find(|g| same(&durations[g[0]])) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Runs the refinement loop.
pub fn refine_loop(durations: &[DurationFunction], alpha: f64, cfg: &RefinementConfig) -> Result<RefinementResult, RefineError> {
    refine_loop_with(durations, alpha, cfg, |_| {})
}

/// Like [`refine_loop`], letting the caller amend every round's model.
///
/// Vehicles with identical duration tables are interchangeable: they share
/// one table and one grid, are refined together, and fly in the order of
/// their position, which removes equivalent permutations from the search
/// without changing the optimal value.
pub fn refine_loop_with(
    durations: &[DurationFunction],
    alpha: f64,
    cfg: &RefinementConfig,
    amend: impl Fn(&mut MilpModel),
) -> Result<RefinementResult, RefineError> {
    if !(cfg.eps > 0.0) || cfg.split_points == 0 || cfg.max_rounds == 0 {
        return Err(RefineError::Config(
            "need eps > 0, at least one split point and one round".into(),
        ));
    }
    let groups = interchangeable_groups(durations);
    let mut tables = durations.to_vec();
    for g in &groups {
        for &i in &g[1..] {
            tables[i].fine_values = durations[g[0]].fine_values.clone();
            tables[i].fine_times = durations[g[0]].fine_times.clone();
        }
    }
    let mut grids = initial_grids(&tables, cfg.eps0);
    let ids: Vec<u32> = durations.iter().map(|d| d.vtol_id).collect();
    let mut log = Vec::new();
    let mut last: Option<RefinementResult> = None;
    for round in 1..=cfg.max_rounds {
        let big_m = choose_big_m(&tables, &grids);
        let mut model = build_model(&tables, &grids, alpha, big_m)?;
        for g in &groups {
            for (k, &a) in g.iter().enumerate() {
                for &b in &g[k + 1..] {
                    model.fix_order(a, b);
                }
            }
        }
        tighten_windows(&mut model, &tables, &grids, &groups);
        amend(&mut model);
        let sol = solve_milp(&model, &cfg.bnb)?;
        if sol.status == MilpStatus::Infeasible {
            return Ok(RefinementResult {
                status: RefineStatus::Infeasible,
                vtol_ids: ids,
                t_star: vec![],
                d_pw: vec![],
                w_star: vec![],
                objective: f64::INFINITY,
                rounds: round,
                grids,
                errors: vec![],
                log,
                node_log: sol.log,
            });
        }
        let map = &model.var_map;
        let x = &sol.x;
        let t_star: Vec<f64> = map.t.iter().map(|&v| x[v]).collect();
        let d_pw: Vec<f64> = (0..tables.len())
            .map(|i| piecewise_duration(&model, &tables[i], &grids[i], i, x))
            .collect();
        let errors: Vec<f64> = (0..tables.len())
            .map(|i| (durations[i].eval(t_star[i]) - d_pw[i]).abs())
            .collect();
        let w_star = map
            .w
            .iter()
            .map(|&(i, j, v)| ((ids[i], ids[j]), x[v] > 0.5))
            .collect();
        log.push(RoundRecord {
            round,
            objective: sol.objective,
            errors: errors.clone(),
            grid_sizes: grids.iter().map(|g| g.len()).collect(),
            nodes: sol.nodes_explored,
        });
        let done = errors.iter().all(|&e| e <= cfg.eps);
        let status = match sol.status {
            MilpStatus::NodeLimit => RefineStatus::NodeLimit,
            _ if done => RefineStatus::Optimal,
            _ => RefineStatus::MaxRounds,
        };
        let result = RefinementResult {
            status,
            vtol_ids: ids.clone(),
            t_star,
            d_pw,
            w_star,
            objective: sol.objective,
            rounds: round,
            grids: grids.clone(),
            errors: errors.clone(),
            log: log.clone(),
            node_log: sol.log,
        };
        if status != RefineStatus::MaxRounds {
            return Ok(result);
        }
        // split the active subinterval of every vehicle that is still too coarse
        let mut new_nodes: Vec<Vec<usize>> = vec![Vec::new(); tables.len()];
        for i in 0..tables.len() {
            if errors[i] <= cfg.eps {
                continue;
            }
            let active = map.z[i]
                .iter()
                .position(|&v| x[v] > 0.5)
                .expect("an integral solution has one active pointer");
            let (a, b) = (grids[i].nodes[active], grids[i].nodes[active + 1]);
            let fresh = split_nodes(&tables[i], a, b, cfg.split_points);
            let group = groups.iter().find(|g| g.contains(&i)).unwrap();
            for &member in group {
                new_nodes[member].extend(&fresh);
            }
        }
        for (g, extra) in grids.iter_mut().zip(new_nodes) {
            g.nodes.extend(extra);
            g.nodes.sort_unstable();
            g.nodes.dedup();
        }
        last = Some(result);
    }
    Ok(last.expect("at least one round ran"))
}

/// Narrows the start windows of interchangeable vehicles, whose order is
/// fixed: the vehicle at position `p` of a group of size `n` starts no
/// earlier than `p` shortest flights after the window opens and no later
/// than `n - 1 - p` shortest flights before it closes. Pointers and weights
/// of subintervals outside the narrowed window are fixed to zero.
pub fn tighten_windows(model: &mut MilpModel, tables: &[DurationFunction], grids: &[CoarseGrid], groups: &[Vec<usize>]) {
    for g in groups.iter().filter(|g| g.len() > 1) {
        let d = &tables[g[0]];
        let grid = &grids[g[0]];
        let e_o = grid.envelopes(d).iter().map(|e| e.e_o).fold(0.0, f64::max);
        let shortest = (d.min_value() - e_o).max(0.0);
        let times = grid.times(d);
        for (p, &i) in g.iter().enumerate() {
            let lo = d.t_min() + p as f64 * shortest;
            let hi = d.t_max() - (g.len() - 1 - p) as f64 * shortest;
            let map = &model.var_map;
            let (tv, lam, z) = (map.t[i], map.lam[i].clone(), map.z[i].clone());
            let t = &mut model.variables[tv];
            t.lower = t.lower.max(lo);
            t.upper = t.upper.min(hi);
            let outside: Vec<bool> = times
                .windows(2)
                .map(|w| w[1] < lo - 1e-9 || w[0] > hi + 1e-9)
                .collect();
            for (k, &v) in z.iter().enumerate() {
                if outside[k] {
                    model.variables[v].upper = 0.0;
                }
            }
            for (k, &v) in lam.iter().enumerate() {
                let left = k == 0 || outside[k - 1];
                let right = k == lam.len() - 1 || outside[k];
                if left && right {
                    model.variables[v].upper = 0.0;
                }
            }
        }
    }
}

/// Writes the round log as CSV: one row per round with per-vehicle errors
/// and grid sizes separated by `;`.
pub fn write_round_log<W: Write>(log: &[RoundRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "round,objective,nodes,errors,grid_sizes")?;
    for r in log {
        let errors: Vec<String> = r.errors.iter().map(|e| e.to_string()).collect();
        let sizes: Vec<String> = r.grid_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.round,
            r.objective,
            r.nodes,
            errors.join(";"),
            sizes.join(";")
        )?;
    }
    Ok(())
}
