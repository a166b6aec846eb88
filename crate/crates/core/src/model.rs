//! Mixed-integer linear scheduling model over piecewise-linear durations.
//!
//! Each vehicle's start time `t_i` is a convex combination of its coarse grid
//! nodes (`lam`), restricted to one active subinterval by binary pointers
//! (`z`). The duration is the matching combination of node durations plus a
//! free error `e_i` bounded by the envelope errors of the active subinterval.
//! One binary `w_i_j` per pair decides which of the two flies first; big-M rows
//! keep the flights disjoint.

use crate::duration::{DurationFunction, EnvelopeBounds};
use crate::lp::{LpProblem, LpRow, Relation};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("vehicle {0}: a coarse grid needs at least two nodes")]
    GridTooSmall(u32),
    #[error("vehicle {0}: coarse grid nodes must be increasing sample indices")]
    BadGrid(u32),
    #[error("alpha must be a non-negative number, got {0}")]
    NegativeAlpha(f64),
    #[error("{0} duration functions but {1} grids")]
    CountMismatch(usize, usize),
    #[error("cannot parse model text, line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Coarse time grid of one vehicle, stored as sample indices of its
/// duration function so that every node is a sample node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarseGrid {
    pub vtol_id: u32,
    pub nodes: Vec<usize>,
}

impl CoarseGrid {
    /// The two-node grid `{t_min, t_max}`.
    pub fn endpoints(d: &DurationFunction) -> Self {
        CoarseGrid {
            vtol_id: d.vtol_id,
            nodes: vec![0, d.len() - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn times(&self, d: &DurationFunction) -> Vec<f64> {
        self.nodes.iter().map(|&k| d.fine_times[k]).collect()
    }

    /// Envelope errors of every subinterval.
    pub fn envelopes(&self, d: &DurationFunction) -> Vec<EnvelopeBounds> {
        self.nodes.windows(2).map(|w| d.envelope_by_index(w[0], w[1])).collect()
    }

    fn check(&self, d: &DurationFunction) -> Result<(), ModelError> {
        if self.nodes.len() < 2 {
            return Err(ModelError::GridTooSmall(self.vtol_id));
        }
        if self.nodes.windows(2).any(|w| w[0] >= w[1]) || *self.nodes.last().unwrap() >= d.len() {
            return Err(ModelError::BadGrid(self.vtol_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Variable indices by role; vehicles are referred to by position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VarMap {
    pub vtol_ids: Vec<u32>,
    pub t: Vec<usize>,
    pub lam: Vec<Vec<usize>>,
    pub z: Vec<Vec<usize>>,
    pub e: Vec<usize>,
    /// `(i, j, var)` for every pair `i < j`; `w = 1` means `i` flies first.
    pub w: Vec<(usize, usize, usize)>,
}

impl VarMap {
    pub fn w_var(&self, i: usize, j: usize) -> Option<usize> {
        self.w.iter().find(|&&(a, b, _)| a == i && b == j).map(|&(_, _, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Dense objective coefficients (minimized).
    pub objective: Vec<f64>,
    pub var_map: VarMap,
}

impl MilpModel {
    pub fn binaries(&self) -> Vec<usize> {
        (0..self.variables.len())
            .filter(|&j| self.variables[j].kind == VarKind::Binary)
            .collect()
    }

    /// The linear relaxation with integrality dropped.
    pub fn relaxation(&self) -> LpProblem {
        LpProblem {
            cost: self.objective.clone(),
            lower: self.variables.iter().map(|v| v.lower).collect(),
            upper: self.variables.iter().map(|v| v.upper).collect(),
            rows: self
                .constraints
                .iter()
                .map(|c| LpRow {
                    coeffs: c.coeffs.clone(),
                    relation: c.relation,
                    rhs: c.rhs,
                })
                .collect(),
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Forces vehicle `i` to fly before vehicle `j`.
    pub fn fix_order(&mut self, i: usize, j: usize) {
        let (a, b, value) = if i < j { (i, j, 1.0) } else { (j, i, 0.0) };
        if let Some(v) = self.var_map.w_var(a, b) {
            self.variables[v].lower = value;
            self.variables[v].upper = value;
        }
    }

    /// Writes the model in the common LP text layout.
    pub fn to_lp_string(&self) -> String {
        let mut s = String::new();
        let name = |j: usize| self.variables[j].name.as_str();
        s.push_str("Minimize\n obj:");
        let dense: Vec<(usize, f64)> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, c)| (j, *c))
            .collect();
        write_terms(&mut s, &dense, &name);
        s.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(s, " {}:", c.name);
            write_terms(&mut s, &c.coeffs, &name);
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(s, " {rel} {}", c.rhs);
        }
        s.push_str("Bounds\n");
        for v in &self.variables {
            let _ = writeln!(s, " {} <= {} <= {}", fmt_bound(v.lower), v.name, fmt_bound(v.upper));
        }
        s.push_str("Binaries\n");
        for v in self.variables.iter().filter(|v| v.kind == VarKind::Binary) {
            let _ = writeln!(s, " {}", v.name);
        }
        s.push_str("End\n");
        s
    }
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn write_terms<'a>(s: &mut String, terms: &[(usize, f64)], name: &impl Fn(usize) -> &'a str) {
    if terms.is_empty() {
        s.push_str(" 0");
    }
    for &(j, a) in terms {
        let sign = if a.is_sign_negative() { '-' } else { '+' };
        let _ = write!(s, " {sign} {} {}", a.abs(), name(j));
    }
}

/// Parses text written by [`MilpModel::to_lp_string`]: one objective line,
/// one line per constraint, a bounds line for every variable (in variable
/// order) and a list of binaries.
pub fn parse_lp(text: &str) -> Result<MilpModel, ModelError> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Objective,
        Constraints,
        Bounds,
        Binaries,
        End,
    }
    let err = |line: usize, msg: &str| ModelError::Parse {
        line: line + 1,
        msg: msg.to_string(),
    };
    let mut section = Section::None;
    let mut objective_line = None;
    let mut constraint_lines = Vec::new();
    let mut variables: Vec<Variable> = Vec::new();
    let mut binaries = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line.to_ascii_lowercase().as_str() {
            "minimize" => {
                section = Section::Objective;
                continue;
            }
            "subject to" => {
                section = Section::Constraints;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "binaries" | "binary" => {
                section = Section::Binaries;
                continue;
            }
            "end" => {
                section = Section::End;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => objective_line = Some((ln, line)),
            Section::Constraints => constraint_lines.push((ln, line)),
            Section::Bounds => {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 5 || parts[1] != "<=" || parts[3] != "<=" {
                    return Err(err(ln, "expected `lower <= name <= upper`"));
                }
                let lower = parts[0].parse().map_err(|_| err(ln, "bad lower bound"))?;
                let upper = parts[4].parse().map_err(|_| err(ln, "bad upper bound"))?;
                variables.push(Variable {
                    name: parts[2].to_string(),
                    kind: VarKind::Continuous,
                    lower,
                    upper,
                });
            }
            Section::Binaries => binaries.extend(line.split_whitespace().map(|s| (ln, s.to_string()))),
            Section::None | Section::End => return Err(err(ln, "text outside of a section")),
        }
    }
    let index: HashMap<String, usize> = variables
        .iter()
        .enumerate()
        .map(|(j, v)| (v.name.clone(), j))
        .collect();
    for (ln, b) in binaries {
        let j = *index.get(&b).ok_or_else(|| err(ln, "unknown binary variable"))?;
        variables[j].kind = VarKind::Binary;
    }
    let parse_terms = |ln: usize, tokens: &[&str]| -> Result<Vec<(usize, f64)>, ModelError> {
        if tokens == ["0"] {
            return Ok(vec![]);
        }
        if tokens.len() % 3 != 0 {
            return Err(err(ln, "expected `sign coefficient name` triples"));
        }
        tokens
            .chunks(3)
            .map(|t| {
                let sign = match t[0] {
                    "+" => 1.0,
                    "-" => -1.0,
                    _ => return Err(err(ln, "expected a sign")),
                };
                let a: f64 = t[1].parse().map_err(|_| err(ln, "bad coefficient"))?;
                let j = *index.get(t[2]).ok_or_else(|| err(ln, "unknown variable"))?;
                Ok((j, sign * a))
            })
            .collect()
    };
    let (oln, oline) = objective_line.ok_or_else(|| err(0, "missing objective"))?;
    let otokens: Vec<&str> = oline.split_whitespace().collect();
    if otokens.first() != Some(&"obj:") {
        return Err(err(oln, "objective must be named `obj`"));
    }
    let mut objective = vec![0.0; variables.len()];
    for (j, a) in parse_terms(oln, &otokens[1..])? {
        objective[j] += a;
    }
    let mut constraints = Vec::new();
    for (ln, line) in constraint_lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 4 || !tokens[0].ends_with(':') {
            return Err(err(ln, "expected `name: terms rel rhs`"));
        }
        let n = tokens.len();
        let relation = match tokens[n - 2] {
            "<=" => Relation::Le,
            "=" => Relation::Eq,
            ">=" => Relation::Ge,
            _ => return Err(err(ln, "bad relation")),
        };
        let rhs = tokens[n - 1].parse().map_err(|_| err(ln, "bad right-hand side"))?;
        constraints.push(Constraint {
            name: tokens[0].trim_end_matches(':').to_string(),
            coeffs: parse_terms(ln, &tokens[1..n - 2])?,
            relation,
            rhs,
        });
    }
    let var_map = var_map_from_names(&variables);
    Ok(MilpModel {
        variables,
        constraints,
        objective,
        var_map,
    })
}

fn var_map_from_names(vars: &[Variable]) -> VarMap {
    let mut map = VarMap::default();
    let mut pos: HashMap<u32, usize> = HashMap::new();
    for (j, v) in vars.iter().enumerate() {
        if let Some(id) = v.name.strip_prefix("t_").and_then(|s| s.parse::<u32>().ok()) {
            pos.insert(id, map.vtol_ids.len());
            map.vtol_ids.push(id);
            map.t.push(j);
        }
    }
    let n = map.vtol_ids.len();
    map.lam = vec![Vec::new(); n];
    map.z = vec![Vec::new(); n];
    map.e = vec![usize::MAX; n];
    let ids = |s: &str| -> Option<Vec<u32>> { s.split('_').map(|p| p.parse().ok()).collect() };
    for (j, v) in vars.iter().enumerate() {
        let (role, rest) = match v.name.split_once('_') {
            Some(x) => x,
            None => continue,
        };
        let Some(nums) = ids(rest) else { continue };
        match (role, nums.as_slice()) {
            ("lam", [id, _]) => map.lam[pos[id]].push(j),
            ("z", [id, _]) => map.z[pos[id]].push(j),
            ("e", [id]) => map.e[pos[id]] = j,
            ("w", [a, b]) => map.w.push((pos[a], pos[b], j)),
            _ => {}
        }
    }
    map
}

/// Big-M large enough that a deactivated ordering row never binds.
pub fn choose_big_m(durations: &[DurationFunction], grids: &[CoarseGrid]) -> f64 {
    let t_max = durations.iter().map(|d| d.t_max()).fold(f64::NEG_INFINITY, f64::max);
    let t_min = durations.iter().map(|d| d.t_min()).fold(f64::INFINITY, f64::min);
    let d_max = durations.iter().map(|d| d.max_value()).fold(0.0, f64::max);
    let e_max = durations
        .iter()
        .zip(grids)
        .flat_map(|(d, g)| g.envelopes(d))
        .map(|e| e.e_u)
        .fold(0.0, f64::max);
    (t_max - t_min) + d_max + e_max + 1.0
}

/// Builds the scheduling model.
pub fn build_model(
    durations: &[DurationFunction],
    grids: &[CoarseGrid],
    alpha: f64,
    big_m: f64,
) -> Result<MilpModel, ModelError> {
    if durations.len() != grids.len() {
        return Err(ModelError::CountMismatch(durations.len(), grids.len()));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(ModelError::NegativeAlpha(alpha));
    }
    for (d, g) in durations.iter().zip(grids) {
        g.check(d)?;
    }
    let n = durations.len();
    let mut variables = Vec::new();
    let mut add = |name: String, kind, lower, upper| {
        variables.push(Variable {
            name,
            kind,
            lower,
            upper,
        });
        variables.len() - 1
    };
    let mut map = VarMap::default();
    let mut envelopes = Vec::with_capacity(n);
    for (d, g) in durations.iter().zip(grids) {
        let id = d.vtol_id;
        let env = g.envelopes(d);
        let e_lo = env.iter().map(|e| e.e_o).fold(0.0, f64::max);
        let e_hi = env.iter().map(|e| e.e_u).fold(0.0, f64::max);
        map.vtol_ids.push(id);
        map.t.push(add(format!("t_{id}"), VarKind::Continuous, d.t_min(), d.t_max()));
        map.lam.push(
            (1..=g.len())
                .map(|k| add(format!("lam_{id}_{k}"), VarKind::Continuous, 0.0, 1.0))
                .collect(),
        );
        map.z.push(
            (1..g.len())
                .map(|k| add(format!("z_{id}_{k}"), VarKind::Binary, 0.0, 1.0))
                .collect(),
        );
        map.e.push(add(format!("e_{id}"), VarKind::Continuous, -e_lo, e_hi));
        envelopes.push(env);
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (durations[i].vtol_id, durations[j].vtol_id);
            map.w.push((i, j, add(format!("w_{a}_{b}"), VarKind::Binary, 0.0, 1.0)));
        }
    }

    // duration terms: sum_k lam_k D(t_k) + e
    let duration_terms = |i: usize| -> Vec<(usize, f64)> {
        let d = &durations[i];
        let mut terms: Vec<(usize, f64)> = grids[i]
            .nodes
            .iter()
            .zip(&map.lam[i])
            .map(|(&k, &v)| (v, d.fine_values[k]))
            .collect();
        terms.push((map.e[i], 1.0));
        terms
    };

    let mut constraints = Vec::new();
    let mut row = |name: String, coeffs: Vec<(usize, f64)>, relation, rhs| {
        constraints.push(Constraint {
            name,
            coeffs,
            relation,
            rhs,
        })
    };
    for i in 0..n {
        let id = map.vtol_ids[i];
        let times = grids[i].times(&durations[i]);
        let lam = &map.lam[i];
        let z = &map.z[i];
        let kk = lam.len();
        let mut c = vec![(map.t[i], 1.0)];
        c.extend(lam.iter().zip(&times).map(|(&v, &t)| (v, -t)));
        row(format!("time_{id}"), c, Relation::Eq, 0.0);
        row(format!("pointer_{id}"), z.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
        row(format!("convex_{id}"), lam.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
        for k in 0..kk {
            let mut c = vec![(lam[k], 1.0)];
            if k > 0 {
                c.push((z[k - 1], -1.0));
            }
            if k + 1 < kk {
                c.push((z[k], -1.0));
            }
            row(format!("adjacent_{id}_{}", k + 1), c, Relation::Le, 0.0);
        }
        let mut c = vec![(map.e[i], 1.0)];
        c.extend(z.iter().zip(&envelopes[i]).map(|(&v, e)| (v, -e.e_u)));
        row(format!("under_{id}"), c, Relation::Le, 0.0);
        let mut c = vec![(map.e[i], 1.0)];
        c.extend(z.iter().zip(&envelopes[i]).map(|(&v, e)| (v, e.e_o)));
        row(format!("over_{id}"), c, Relation::Ge, 0.0);
    }
    for &(i, j, w) in &map.w {
        let (a, b) = (map.vtol_ids[i], map.vtol_ids[j]);
        // w = 1: i lands before j starts
        let mut c = vec![(map.t[i], 1.0), (map.t[j], -1.0), (w, big_m)];
        c.extend(duration_terms(i));
        row(format!("first_{a}_{b}"), c, Relation::Le, big_m);
        // w = 0: j lands before i starts
        let mut c = vec![(map.t[j], 1.0), (map.t[i], -1.0), (w, -big_m)];
        c.extend(duration_terms(j));
        row(format!("second_{a}_{b}"), c, Relation::Le, 0.0);
    }

    let mut objective = vec![0.0; variables.len()];
    for i in 0..n {
        objective[map.t[i]] += 1.0;
        for (v, a) in duration_terms(i) {
            objective[v] += alpha * a;
        }
    }
    Ok(MilpModel {
        variables,
        constraints,
        objective,
        var_map: map,
    })
}

/// Duration value `sum_k lam_k D(t_k) + e` of vehicle `i` at a solution.
pub fn piecewise_duration(model: &MilpModel, d: &DurationFunction, g: &CoarseGrid, i: usize, x: &[f64]) -> f64 {
    let map = &model.var_map;
    g.nodes
        .iter()
        .zip(&map.lam[i])
        .map(|(&k, &v)| x[v] * d.fine_values[k])
        .sum::<f64>()
        + x[map.e[i]]
}
