//! Offline certificates for finished runs.
//!
//! Both constructions fit dual solutions of time-indexed linear programs to a
//! trace and read lower bounds on the optimum off weak duality. The slot grid
//! is aligned with the trace's events (every segment is cut into equal
//! sub-slots), so rates are constant inside a slot and every quantity has a
//! closed form per segment. Constraints are linear in time inside a segment
//! and are therefore checked at segment boundaries.

mod completion;
mod flow;
mod oracles;

pub use completion::{
    certified_flow_lower_bound, certify_completion, check_completion_cert, completion_duals, CompletionDualCert,
    CompletionReport, FlowLowerBound, DEFAULT_CERT_S,
};
pub use flow::{blass_duals, certify_blass, check_blass_cert, BlassCertReport, UnrelatedDualCert};
pub use oracles::{brute_force_opt, smith_opt, weighted_median, Objective, BRUTE_FORCE_MAX_JOBS, BRUTE_FORCE_MAX_SLOTS};

use serde::{Deserialize, Serialize};

use crate::engine::{Trace, TraceJob};
use crate::error::{Error, Result};

/// Relative tolerance of the dual-constraint checks.
pub const CERT_TOL: f64 = 1e-6;
/// Relative tolerance when comparing a certificate with its reconstruction.
pub const CONSISTENCY_TOL: f64 = 1e-9;
/// Every job must live through at least this many slots.
pub const MIN_SLOTS_PER_JOB: u64 = 100;

/// One segment of the trace cut into `subslots` equal slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSegment {
    pub start: f64,
    pub len: f64,
    pub subslots: u64,
    /// Trace job indices alive in the segment.
    pub alive: Vec<usize>,
    /// Work per unit time (speed times rate), aligned with `alive`.
    pub work_rate: Vec<f64>,
    pub duals: Option<Vec<f64>>,
}

impl SlotSegment {
    pub fn slot_width(&self) -> f64 {
        self.len / self.subslots as f64
    }

    /// Work `q_jt` done on `alive[i]` in each of this segment's slots.
    pub fn slot_work(&self, i: usize) -> f64 {
        self.work_rate[i] * self.slot_width()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlottedTrace {
    /// Nominal slot width; actual widths divide each segment evenly and are at most this.
    pub delta: f64,
    pub speed: f64,
    pub jobs: Vec<TraceJob>,
    pub segments: Vec<SlotSegment>,
}

impl SlottedTrace {
    pub fn num_slots(&self) -> u64 {
        self.segments.iter().map(|s| s.subslots).sum()
    }

    pub fn horizon(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.start + s.len)
    }

    /// Total work done on job `j` (trace index).
    pub fn work(&self, j: usize) -> f64 {
        self.segments
            .iter()
            .filter_map(|s| s.alive.iter().position(|&a| a == j).map(|i| s.work_rate[i] * s.len))
            .sum()
    }

    /// Completion time of trace job `j`.
    pub fn completion(&self, j: usize) -> f64 {
        self.jobs[j].completion.expect("slotted traces hold completed jobs")
    }

    /// Slots spanned by job `j` between release and completion.
    pub fn slots_of(&self, j: usize) -> u64 {
        let (r, c) = (self.jobs[j].release, self.completion(j));
        self.segments.iter().filter(|s| s.start >= r && s.start < c).map(|s| s.subslots).sum()
    }
}

/// `min(min_j p_j, shortest segment) / 128`.
pub fn default_slot_width(tr: &Trace) -> f64 {
    let min_size = tr.jobs.iter().map(|j| j.size).fold(f64::INFINITY, f64::min);
    let min_seg = tr.segments.iter().map(|s| s.len()).filter(|&l| l > 0.0).fold(f64::INFINITY, f64::min);
    min_size.min(min_seg) / 128.0
}

/// Event-aligned slotting of a finished trace.
pub fn slot_trace(tr: &Trace, delta: f64) -> Result<SlottedTrace> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Param(format!("slot width must be positive, got {delta}")));
    }
    if let Some(j) = tr.jobs.iter().find(|j| j.completion.is_none()) {
        return Err(Error::Certificate(format!("job {} never completed", j.id)));
    }
    let index: std::collections::BTreeMap<_, _> = tr.jobs.iter().enumerate().map(|(i, j)| (j.id, i)).collect();
    let mut segments = Vec::new();
    for seg in &tr.segments {
        let len = seg.len();
        if len <= 0.0 {
            continue;
        }
        let alive = seg
            .jobs
            .iter()
            .map(|id| index.get(id).copied().ok_or_else(|| Error::Certificate(format!("segment job {id} not in trace"))))
            .collect::<Result<Vec<_>>>()?;
        segments.push(SlotSegment {
            start: seg.start,
            len,
            subslots: (len / delta).ceil().max(1.0) as u64,
            alive,
            work_rate: seg.rates.iter().map(|x| tr.speed * x).collect(),
            duals: seg.duals.clone(),
        });
    }
    let st = SlottedTrace { delta, speed: tr.speed, jobs: tr.jobs.clone(), segments };
    for j in 0..st.jobs.len() {
        let n = st.slots_of(j);
        if n < MIN_SLOTS_PER_JOB {
            return Err(Error::Param(format!(
                "slot width {delta} too coarse: job {} spans {n} slots (need {MIN_SLOTS_PER_JOB})",
                st.jobs[j].id
            )));
        }
    }
    Ok(st)
}

/// Work per job per slot on the uniform grid `[t delta, (t+1) delta)`, prorated
/// where an event falls inside a slot. Rows follow the trace's job order.
pub fn uniform_slot_work(tr: &Trace, delta: f64) -> Result<Vec<Vec<f64>>> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Param(format!("slot width must be positive, got {delta}")));
    }
    let horizon = tr.segments.last().map_or(0.0, |s| s.end);
    let slots = (horizon / delta).ceil() as usize;
    let mut q = vec![vec![0.0; slots]; tr.jobs.len()];
    for seg in &tr.segments {
        for (id, &x) in seg.jobs.iter().zip(&seg.rates) {
            let j = tr.jobs.iter().position(|t| t.id == *id).expect("segment job in trace");
            let first = (seg.start / delta).floor() as usize;
            for t in first..slots {
                let lo = seg.start.max(t as f64 * delta);
                let hi = seg.end.min((t + 1) as f64 * delta);
                if hi <= lo {
                    if (t as f64) * delta >= seg.end {
                        break;
                    }
                    continue;
                }
                q[j][t] += tr.speed * x * (hi - lo);
            }
        }
    }
    Ok(q)
}

/// A violated constraint or a certificate entry that disagrees with the construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub job: Option<u64>,
    pub time: f64,
    /// Row, machine or auxiliary variable involved, if any.
    pub at: Option<String>,
    /// Relative excess (constraints) or relative difference (consistency).
    pub excess: f64,
}

/// Relative difference used by the consistency checks.
fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn compare(out: &mut Vec<Violation>, name: &str, job: Option<u64>, time: f64, at: Option<String>, got: f64, want: f64) {
    let d = rel_diff(got, want);
    if d > CONSISTENCY_TOL && (got - want).abs() > 1e-300 {
        out.push(Violation { constraint: format!("{name} differs from construction"), job, time, at, excess: d });
    }
}
