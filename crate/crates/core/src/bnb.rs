//! Best-bound branch and bound over the simplex relaxation.

use crate::lp::{solve_lp, LpError, LpProblem, LpStatus};
use crate::model::MilpModel;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbConfig {
    pub int_tol: f64,
    pub feas_tol: f64,
    /// Absolute optimality gap at which the search may stop.
    pub gap_tol: f64,
    pub node_limit: usize,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            int_tol: 1e-6,
            feas_tol: 1e-8,
            gap_tol: 0.0,
            node_limit: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// LP bound of the node (`inf` when infeasible).
    pub bound: f64,
    /// Incumbent objective after processing the node (`inf` if none yet).
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub nodes_explored: usize,
    /// Incumbent minus the best open bound when the search stopped.
    pub proof_gap: f64,
    pub log: Vec<NodeRecord>,
}

#[derive(Debug, Error)]
pub enum BnbError {
    #[error("LP relaxation failed at node {node}: {source}")]
    Lp {
        node: usize,
        #[source]
        source: LpError,
    },
    #[error("LP relaxation is unbounded")]
    Unbounded,
}

struct Node {
    id: usize,
    parent: Option<usize>,
    depth: usize,
    parent_bound: f64,
    fixings: Vec<(usize, f64)>,
}

/// Heap order: lowest bound first, then deepest, then oldest.
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .parent_bound
            .total_cmp(&self.parent_bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

fn prune_tol(incumbent: f64) -> f64 {
    1e-9 * incumbent.abs().max(1.0)
}

/// Solves the model to proven optimality (or until the node limit).
pub fn solve_milp(model: &MilpModel, cfg: &BnbConfig) -> Result<MilpSolution, BnbError> {
    let base = model.relaxation();
    let binaries = model.binaries();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        id: 0,
        parent: None,
        depth: 0,
        parent_bound: f64::NEG_INFINITY,
        fixings: Vec::new(),
    });
    let mut next_id = 1;
    let mut incumbent = f64::INFINITY;
    let mut best_x: Option<Vec<f64>> = None;
    let mut log = Vec::new();
    let mut explored = 0;
    let mut lp = base.clone();
    while let Some(node) = heap.pop() {
        if node.parent_bound >= incumbent - cfg.gap_tol.max(prune_tol(incumbent)) {
            continue;
        }
        if explored >= cfg.node_limit {
            heap.push(node);
            break;
        }
        explored += 1;
        restore_bounds(&mut lp, &base, &node.fixings);
        let sol = solve_lp(&lp).map_err(|source| BnbError::Lp { node: node.id, source })?;
        let mut record = NodeRecord {
            id: node.id,
            parent: node.parent,
            depth: node.depth,
            bound: f64::INFINITY,
            incumbent,
        };
        match sol.status {
            LpStatus::Infeasible => {
                log.push(record);
                continue;
            }
            LpStatus::Unbounded => return Err(BnbError::Unbounded),
            LpStatus::Optimal => {}
        }
        record.bound = sol.objective;
        if sol.objective >= incumbent - prune_tol(incumbent) {
            log.push(record);
            continue;
        }
        // most fractional binary, lowest index on ties
        let mut branch: Option<(usize, f64)> = None;
        for &j in &binaries {
            let v = sol.x[j];
            let frac = (v - v.round()).abs();
            if frac > cfg.int_tol {
                let dist = (v - 0.5).abs();
                if branch.is_none_or(|(_, d)| dist < d) {
                    branch = Some((j, dist));
                }
            }
        }
        match branch {
            None => {
                incumbent = sol.objective;
                best_x = Some(sol.x);
                record.incumbent = incumbent;
            }
            Some((j, _)) => {
                for value in [0.0, 1.0] {
                    let mut fixings = node.fixings.clone();
                    fixings.push((j, value));
                    heap.push(Node {
                        id: next_id,
                        parent: Some(node.id),
                        depth: node.depth + 1,
                        parent_bound: sol.objective,
                        fixings,
                    });
                    next_id += 1;
                }
            }
        }
        log.push(record);
    }
    let open_bound = heap
        .iter()
        .map(|n| n.parent_bound)
        .filter(|&b| b < incumbent)
        .fold(f64::INFINITY, f64::min);
    let limited = explored >= cfg.node_limit && open_bound.is_finite();
    let status = match (&best_x, limited) {
        (_, true) => MilpStatus::NodeLimit,
        (Some(_), false) => MilpStatus::Optimal,
        (None, false) => MilpStatus::Infeasible,
    };
    let proof_gap = if limited { incumbent - open_bound } else { 0.0 };
    Ok(MilpSolution {
        status,
        x: best_x.unwrap_or_default(),
        objective: incumbent,
        nodes_explored: explored,
        proof_gap,
        log,
    })
}

fn restore_bounds(lp: &mut LpProblem, base: &LpProblem, fixings: &[(usize, f64)]) {
    lp.lower.copy_from_slice(&base.lower);
    lp.upper.copy_from_slice(&base.upper);
    for &(j, v) in fixings {
        lp.lower[j] = v;
        lp.upper[j] = v;
    }
}

/// Writes the node log as CSV.
pub fn write_node_log<W: Write>(log: &[NodeRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "node,parent,depth,bound,incumbent")?;
    for r in log {
        let parent = r.parent.map_or(String::new(), |p| p.to_string());
        writeln!(out, "{},{},{},{},{}", r.id, parent, r.depth, r.bound, r.incumbent)?;
    }
    Ok(())
}
