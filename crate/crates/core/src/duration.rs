//! Flight-duration functions `D_i(t)` and their secant envelopes.
//!
//! `D_i(t)` is the shortest-path length from the vehicle's start position,
//! departing at `t`, divided by its speed. It is sampled at every field slice
//! inside the vehicle's time window and interpolated linearly in between, so
//! envelope errors over a subinterval are attained at sample nodes and can be
//! computed exactly.

use crate::hjb::{HjbError, ValueField};
use crate::scenario::{Environment, VtolSpec};
use std::io::{self, Write};
use thiserror::Error;

/// Two times closer than this are the same fine node.
pub const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DurationError {
    #[error("vehicle {vtol_id} cannot reach the target when departing at t = {t} s")]
    Unreachable { vtol_id: u32, t: f64 },
    #[error("vehicle {vtol_id}: {source}")]
    Field {
        vtol_id: u32,
        #[source]
        source: HjbError,
    },
    #[error("time {0} s is not a sample node of the duration function")]
    OffGrid(f64),
    #[error("invalid interval: {0}")]
    BadInterval(String),
    #[error("invalid duration table: {0}")]
    BadTable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationFunction {
    pub vtol_id: u32,
    /// Sample times, strictly increasing.
    pub fine_times: Vec<f64>,
    /// Duration in seconds at each sample time.
    pub fine_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeBounds {
    pub t_a: f64,
    pub t_b: f64,
    /// Largest amount by which `D` rises above the secant.
    pub e_u: f64,
    /// Largest amount by which `D` falls below the secant.
    pub e_o: f64,
}

impl EnvelopeBounds {
    pub fn max_error(&self) -> f64 {
        self.e_u.max(self.e_o)
    }
}

impl DurationFunction {
    /// Builds a function from an explicit table.
    pub fn new(vtol_id: u32, fine_times: Vec<f64>, fine_values: Vec<f64>) -> Result<Self, DurationError> {
        if fine_times.len() < 2 || fine_times.len() != fine_values.len() {
            return Err(DurationError::BadTable(
                "need at least two samples and one value per time".into(),
            ));
        }
        if fine_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DurationError::BadTable("times must be strictly increasing".into()));
        }
        if fine_times.iter().chain(&fine_values).any(|v| !v.is_finite()) {
            return Err(DurationError::BadTable("samples must be finite".into()));
        }
        Ok(DurationFunction {
            vtol_id,
            fine_times,
            fine_values,
        })
    }

    pub fn len(&self) -> usize {
        self.fine_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine_times.is_empty()
    }

    pub fn t_min(&self) -> f64 {
        self.fine_times[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.fine_times.last().unwrap()
    }

    pub fn max_value(&self) -> f64 {
        self.fine_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.fine_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation between samples; clamped outside the window.
    pub fn eval(&self, t: f64) -> f64 {
        let ts = &self.fine_times;
        if t <= ts[0] {
            return self.fine_values[0];
        }
        if t >= self.t_max() {
            return *self.fine_values.last().unwrap();
        }
        let hi = ts.partition_point(|&s| s <= t).min(ts.len() - 1);
        let lo = hi - 1;
        let s = (t - ts[lo]) / (ts[hi] - ts[lo]);
        self.fine_values[lo] + s * (self.fine_values[hi] - self.fine_values[lo])
    }

    /// Index of the sample at time `t`, if `t` is a sample node.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let ts = &self.fine_times;
        let i = ts.partition_point(|&s| s < t - TIME_TOL);
        (i < ts.len() && (ts[i] - t).abs() <= TIME_TOL).then_some(i)
    }

    /// Index of the sample nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let ts = &self.fine_times;
        let i = ts.partition_point(|&s| s < t);
        if i == 0 {
            0
        } else if i == ts.len() || t - ts[i - 1] <= ts[i] - t {
            i - 1
        } else {
            i
        }
    }

    /// Envelope errors of the secant over samples `a..=b`.
    pub fn envelope_by_index(&self, a: usize, b: usize) -> EnvelopeBounds {
        assert!(a < b && b < self.len(), "invalid sample range {a}..={b}");
        let (ta, tb) = (self.fine_times[a], self.fine_times[b]);
        let (da, db) = (self.fine_values[a], self.fine_values[b]);
        let slope = (db - da) / (tb - ta);
        let mut e_u: f64 = 0.0;
        let mut e_o: f64 = 0.0;
        for k in a + 1..b {
            let psi = da + slope * (self.fine_times[k] - ta);
            let diff = self.fine_values[k] - psi;
            e_u = e_u.max(diff);
            e_o = e_o.max(-diff);
        }
        EnvelopeBounds {
            t_a: ta,
            t_b: tb,
            e_u,
            e_o,
        }
    }

    /// Writes `t_seconds,duration_seconds` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t_seconds,duration_seconds")?;
        for (t, d) in self.fine_times.iter().zip(&self.fine_values) {
            writeln!(out, "{t},{d}")?;
        }
        Ok(())
    }
}

/// Samples the duration of a vehicle at every slice time in its window plus
/// the window edges.
pub fn build_duration<E: Environment>(
    field: &ValueField,
    env: &E,
    vt: &VtolSpec,
) -> Result<DurationFunction, DurationError> {
    let dt = field.grid().dt;
    let mut times = vec![vt.t_min];
    let mut k = (vt.t_min / dt).floor() as i64;
    loop {
        let t = k as f64 * dt;
        if t >= vt.t_max - TIME_TOL {
            break;
        }
        if t > vt.t_min + TIME_TOL {
            times.push(t);
        }
        k += 1;
    }
    times.push(vt.t_max);
    let mut values = Vec::with_capacity(times.len());
    for &t in &times {
        let len = field
            .value_at(env, t, vt.start)
            .map_err(|source| DurationError::Field {
                vtol_id: vt.id,
                source,
            })?
            .ok_or(DurationError::Unreachable { vtol_id: vt.id, t })?;
        values.push(len / vt.velocity);
    }
    DurationFunction::new(vt.id, times, values)
}

/// Envelope errors of the secant of `d` over `[t_a, t_b]`; both ends must be
/// sample nodes.
pub fn envelope_errors(d: &DurationFunction, t_a: f64, t_b: f64) -> Result<EnvelopeBounds, DurationError> {
    let a = d.index_of(t_a).ok_or(DurationError::OffGrid(t_a))?;
    let b = d.index_of(t_b).ok_or(DurationError::OffGrid(t_b))?;
    if a >= b {
        return Err(DurationError::BadInterval(format!("[{t_a}, {t_b}] is empty")));
    }
    Ok(d.envelope_by_index(a, b))
}
