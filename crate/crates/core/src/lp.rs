//! Dense bounded-variable revised primal simplex.
//!
//! Solves `min c·x` subject to sparse rows `a·x {<=, =, >=} b` and bounds
//! `l <= x <= u` (finite `l`, possibly infinite `u`). Phase one minimizes the
//! sum of artificial variables; phase two optimizes the real cost.
//!
//! The basis inverse is kept explicitly and recomputed from the original
//! columns at regular intervals. Entering variables follow Dantzig's rule with
//! lowest-index ties; the ratio test is a two-pass Harris test that prefers
//! large pivots. During long runs of degenerate pivots the method switches to
//! Bland's rule. Every choice is a deterministic function of the input.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-7;
const COST_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("simplex iteration limit {0} exceeded")]
    IterationLimit(usize),
    #[error("numerical failure (residual or pivot magnitude {0:e})")]
    Numerical(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct Simplex {
    m: usize,
    cols: usize,
    /// Sparse columns of the constraint matrix, including slack and
    /// artificial columns.
    a: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    /// Row-major basis inverse; row `i` belongs to `basis[i]`.
    binv: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<State>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    since_refactor: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Simplex {
    fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.a[j]
    }

    fn value(&self, j: usize) -> f64 {
        match self.state[j] {
            State::Basic(i) => self.beta[i],
            State::AtLower => self.lower[j],
            State::AtUpper => self.upper[j],
        }
    }

    /// Inverts the basis from scratch and recomputes the basic values.
    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut bm = vec![0.0; m * m];
        for (c, &j) in self.basis.iter().enumerate() {
            for &(r, v) in self.column(j) {
                bm[r * m + c] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&x, &y| bm[x * m + c].abs().total_cmp(&bm[y * m + c].abs()).then(y.cmp(&x)))
                .unwrap();
            let piv = bm[p * m + c];
            if piv.abs() < SINGULAR_TOL {
                return Err(LpError::Numerical(piv.abs()));
            }
            if p != c {
                for k in 0..m {
                    bm.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            for k in 0..m {
                bm[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for r in 0..m {
                let f = bm[r * m + c];
                if r != c && f != 0.0 {
                    for k in 0..m {
                        bm[r * m + k] -= f * bm[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        // rows of the inverse follow the basis order because column c of B is basis[c]
        self.binv = inv;
        let mut rhs = self.b.clone();
        for j in 0..self.cols {
            if !matches!(self.state[j], State::Basic(_)) {
                let v = self.value(j);
                if v != 0.0 {
                    for &(r, a) in self.column(j) {
                        rhs[r] -= v * a;
                    }
                }
            }
        }
        for i in 0..m {
            self.beta[i] = self.binv[i * m..(i + 1) * m].iter().zip(&rhs).map(|(x, y)| x * y).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn reduced_costs(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                for (yr, v) in y.iter_mut().zip(&self.binv[i * m..(i + 1) * m]) {
                    *yr += cb * v;
                }
            }
        }
        (0..self.cols)
            .map(|j| match self.state[j] {
                State::Basic(_) => 0.0,
                _ if self.upper[j] == self.lower[j] => 0.0,
                _ => self.cost[j] - self.column(j).iter().map(|&(r, a)| a * y[r]).sum::<f64>(),
            })
            .collect()
    }

    fn choose_entering(&self, d: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for (j, &dj) in d.iter().enumerate() {
            let dir = match self.state[j] {
                State::Basic(_) => continue,
                _ if self.upper[j] - self.lower[j] <= 0.0 => continue,
                State::AtLower if dj < -COST_TOL => 1.0,
                State::AtUpper if dj > COST_TOL => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > best_score {
                best_score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    /// Step length and leaving row (`None` for a bound flip of the entering
    /// variable); `theta` is infinite when the direction is unbounded.
    fn ratio_test(&self, j: usize, dir: f64, alpha: &[f64], bland: bool) -> (f64, Option<(usize, bool)>) {
        let flip = self.upper[j] - self.lower[j];
        let limit = |i: usize, slack: f64| -> Option<(f64, bool)> {
            let a = alpha[i] * dir;
            let b = self.basis[i];
            if a > PIVOT_TOL {
                Some(((self.beta[i] - self.lower[b] + slack) / a, true))
            } else if a < -PIVOT_TOL && self.upper[b].is_finite() {
                Some(((self.upper[b] - self.beta[i] + slack) / -a, false))
            } else {
                None
            }
        };
        if bland {
            let mut theta = flip;
            let mut leave = None;
            for i in 0..self.m {
                if let Some((t, to_lower)) = limit(i, 0.0) {
                    let t = t.max(0.0);
                    let better = t < theta - 1e-12
                        || (t <= theta + 1e-12
                            && matches!(leave, Some((r, _)) if self.basis[i] < self.basis[r]));
                    if better {
                        theta = t;
                        leave = Some((i, to_lower));
                    }
                }
            }
            return (theta, leave);
        }
        let mut theta_max = f64::INFINITY;
        for i in 0..self.m {
            if let Some((t, _)) = limit(i, PRIMAL_TOL) {
                theta_max = theta_max.min(t);
            }
        }
        if flip <= theta_max {
            return (flip, None);
        }
        if !theta_max.is_finite() {
            return (f64::INFINITY, None);
        }
        let mut leave: Option<(usize, bool, f64)> = None;
        for i in 0..self.m {
            if let Some((t, to_lower)) = limit(i, 0.0) {
                if t <= theta_max {
                    let size = alpha[i].abs();
                    let better = match leave {
                        None => true,
                        Some((r, _, _)) => {
                            size > alpha[r].abs() || (size == alpha[r].abs() && self.basis[i] < self.basis[r])
                        }
                    };
                    if better {
                        leave = Some((i, to_lower, t));
                    }
                }
            }
        }
        let (r, to_lower, t) = leave.expect("a finite Harris bound has a blocking row");
        (t.max(0.0), Some((r, to_lower)))
    }

    fn run(&mut self) -> Result<Outcome, LpError> {
        let m = self.m;
        let mut streak = 0;
        let mut fresh = false;
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let bland = streak >= DEGENERATE_STREAK;
            let d = self.reduced_costs();
            let Some((j, dir)) = self.choose_entering(&d, bland) else {
                if fresh {
                    return Ok(Outcome::Optimal);
                }
                // confirm optimality on a freshly inverted basis
                self.refactor()?;
                fresh = true;
                continue;
            };
            fresh = false;
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(LpError::IterationLimit(self.max_iterations));
            }
            let col = self.column(j);
            let alpha: Vec<f64> = (0..m)
                .map(|i| {
                    let row = &self.binv[i * m..(i + 1) * m];
                    col.iter().map(|&(r, a)| row[r] * a).sum()
                })
                .collect();
            let (theta, leave) = self.ratio_test(j, dir, &alpha, bland);
            if !theta.is_finite() {
                return Ok(Outcome::Unbounded);
            }
            streak = if theta <= 1e-12 { streak + 1 } else { 0 };
            let entering_value = self.value(j) + dir * theta;
            for (b, a) in self.beta.iter_mut().zip(&alpha) {
                *b -= dir * theta * a;
            }
            match leave {
                None => {
                    self.state[j] = if dir > 0.0 { State::AtUpper } else { State::AtLower };
                }
                Some((r, to_lower)) => {
                    let out = self.basis[r];
                    self.state[out] = if to_lower { State::AtLower } else { State::AtUpper };
                    let pr = alpha[r];
                    let row_r: Vec<f64> = self.binv[r * m..(r + 1) * m].iter().map(|v| v / pr).collect();
                    for i in 0..m {
                        if i == r {
                            self.binv[i * m..(i + 1) * m].copy_from_slice(&row_r);
                        } else if alpha[i] != 0.0 {
                            let f = alpha[i];
                            for (v, w) in self.binv[i * m..(i + 1) * m].iter_mut().zip(&row_r) {
                                *v -= f * w;
                            }
                        }
                    }
                    self.basis[r] = j;
                    self.state[j] = State::Basic(r);
                    self.beta[r] = entering_value;
                    self.since_refactor += 1;
                }
            }
        }
    }
}

impl LpProblem {
    pub fn n(&self) -> usize {
        self.cost.len()
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.n();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed("bound vectors do not match the cost vector".into()));
        }
        for j in 0..n {
            if !self.lower[j].is_finite() || self.upper[j].is_nan() || !self.cost[j].is_finite() {
                return Err(LpError::Malformed(format!("variable {j} needs a finite lower bound")));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.rhs.is_finite() || r.coeffs.iter().any(|&(j, a)| j >= n || !a.is_finite()) {
                return Err(LpError::Malformed(format!("row {i} is malformed")));
            }
        }
        Ok(())
    }

    /// Largest violation of a row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for r in &self.rows {
            let lhs: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match r.relation {
                Relation::Le => lhs - r.rhs,
                Relation::Ge => r.rhs - lhs,
                Relation::Eq => (lhs - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// Solves the linear program.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LpError> {
    p.validate()?;
    let fixed = (0..p.n()).filter(|&j| p.lower[j] == p.upper[j]).count();
    if fixed == 0 && p.rows.iter().all(|r| !r.coeffs.is_empty()) {
        return solve_reduced(p);
    }
    // fixed variables move to the right-hand side
    let keep: Vec<usize> = (0..p.n()).filter(|&j| p.lower[j] != p.upper[j]).collect();
    let mut position = vec![usize::MAX; p.n()];
    for (k, &j) in keep.iter().enumerate() {
        position[j] = k;
    }
    let scale = 1.0 + p.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    let mut rows = Vec::with_capacity(p.rows.len());
    let mut violated = false;
    for r in &p.rows {
        let mut rhs = r.rhs;
        let mut coeffs = Vec::with_capacity(r.coeffs.len());
        for &(j, a) in &r.coeffs {
            if position[j] == usize::MAX {
                rhs -= a * p.lower[j];
            } else {
                coeffs.push((position[j], a));
            }
        }
        if coeffs.is_empty() {
            // a row without free variables is either satisfied or infeasible
            violated |= match r.relation {
                Relation::Le => rhs < -1e-9 * scale,
                Relation::Ge => rhs > 1e-9 * scale,
                Relation::Eq => rhs.abs() > 1e-9 * scale,
            };
        } else {
            rows.push(LpRow {
                coeffs,
                relation: r.relation,
                rhs,
            });
        }
    }
    if violated {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: p.lower.clone(),
            objective: f64::NAN,
            iterations: 0,
        });
    }
    let reduced = LpProblem {
        cost: keep.iter().map(|&j| p.cost[j]).collect(),
        lower: keep.iter().map(|&j| p.lower[j]).collect(),
        upper: keep.iter().map(|&j| p.upper[j]).collect(),
        rows,
    };
    let sol = solve_reduced(&reduced)?;
    let mut x = p.lower.clone();
    for (k, &j) in keep.iter().enumerate() {
        x[j] = sol.x[k];
    }
    let objective = p.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective, ..sol })
}

fn solve_reduced(p: &LpProblem) -> Result<LpSolution, LpError> {
    let n = p.n();
    let m = p.rows.len();
    if (0..n).any(|j| p.lower[j] > p.upper[j]) {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: p.lower.clone(),
            objective: f64::NAN,
            iterations: 0,
        });
    }

    // column layout: structural, one slack per inequality row, artificials
    let n_slack = p.rows.iter().filter(|r| r.relation != Relation::Eq).count();
    let mut plan = Vec::with_capacity(m);
    let mut n_art = 0;
    for r in &p.rows {
        let lhs: f64 = r.coeffs.iter().map(|&(j, a)| a * p.lower[j]).sum();
        let res = r.rhs - lhs;
        let slack_sign = match r.relation {
            Relation::Le => 1.0,
            Relation::Ge => -1.0,
            Relation::Eq => 0.0,
        };
        let needs_art = r.relation == Relation::Eq || slack_sign * res < 0.0;
        n_art += usize::from(needs_art);
        plan.push((res, slack_sign, needs_art));
    }
    let cols = n + n_slack + n_art;
    let mut lower = p.lower.clone();
    let mut upper = p.upper.clone();
    lower.resize(cols, 0.0);
    upper.resize(cols, f64::INFINITY);
    let mut lp = Simplex {
        m,
        cols,
        a: vec![Vec::new(); cols],
        b: p.rows.iter().map(|r| r.rhs).collect(),
        binv: Vec::new(),
        beta: vec![0.0; m],
        basis: vec![0; m],
        state: vec![State::AtLower; cols],
        lower,
        upper,
        cost: vec![0.0; cols],
        iterations: 0,
        max_iterations: 50 * (m + cols) + 1000,
        since_refactor: 0,
    };
    let mut next_slack = n;
    let mut next_art = n + n_slack;
    for (i, r) in p.rows.iter().enumerate() {
        for &(j, a) in &r.coeffs {
            match lp.a[j].last_mut() {
                Some((row, v)) if *row == i => *v += a,
                _ => lp.a[j].push((i, a)),
            }
        }
        let (res, slack_sign, needs_art) = plan[i];
        let basic = if slack_sign != 0.0 {
            lp.a[next_slack].push((i, slack_sign));
            next_slack += 1;
            next_slack - 1
        } else {
            usize::MAX
        };
        let basic = if needs_art {
            lp.a[next_art].push((i, if res >= 0.0 { 1.0 } else { -1.0 }));
            lp.cost[next_art] = 1.0;
            next_art += 1;
            next_art - 1
        } else {
            basic
        };
        lp.basis[i] = basic;
        lp.state[basic] = State::Basic(i);
    }
    lp.refactor()?;

    if n_art > 0 {
        lp.run()?;
        let infeasibility: f64 = (n + n_slack..cols).map(|j| lp.value(j)).sum();
        let scale = 1.0 + p.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeasibility > 1e-9 * scale {
            let x = (0..n).map(|j| lp.value(j)).collect();
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x,
                objective: f64::NAN,
                iterations: lp.iterations,
            });
        }
        for j in n + n_slack..cols {
            lp.upper[j] = 0.0;
            if !matches!(lp.state[j], State::Basic(_)) {
                lp.state[j] = State::AtLower;
            }
        }
        lp.refactor()?;
    }

    lp.cost = p.cost.clone();
    lp.cost.resize(cols, 0.0);
    let outcome = lp.run()?;
    let x: Vec<f64> = (0..n).map(|j| lp.value(j).clamp(p.lower[j], p.upper[j])).collect();
    let objective = p.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    let status = match outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Unbounded => LpStatus::Unbounded,
    };
    if status == LpStatus::Optimal {
        let scale = 1.0 + p.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        let viol = p.max_violation(&x);
        if viol > 1e-7 * scale {
            return Err(LpError::Numerical(viol));
        }
    }
    Ok(LpSolution {
        status,
        x,
        objective,
        iterations: lp.iterations,
    })
}
