//! Event-driven continuous-time simulation.
//!
//! Schedulers are invoked at time 0 (or the first release), at every arrival
//! and at every completion, and see only what a non-clairvoyant algorithm may
//! know: alive jobs with their weights, releases and payloads, never sizes.
//! Between events rates are constant and completions are solved exactly.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::eg::KktReport;
use crate::error::{Error, Result};
use crate::instances::{Family, Instance, JobId, PublicJob};
use crate::polytope::{build_polytope, PackingPolytope};

/// Completions closer than this (in time) are merged into one event.
pub const TIE_TOL: f64 = 1e-12;
/// Default tolerance for the per-decision feasibility check.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// What a scheduler sees at a decision point.
pub struct SchedulerView<'a> {
    pub time: f64,
    pub speed: f64,
    /// Alive jobs in global-rank order.
    pub alive: Vec<PublicJob>,
    inst: &'a Instance,
}

impl<'a> SchedulerView<'a> {
    pub fn new(inst: &'a Instance, time: f64, speed: f64, alive_positions: &[usize]) -> Self {
        let alive = alive_positions.iter().map(|&p| inst.public_job(p)).collect();
        Self { time, speed, alive, inst }
    }

    pub fn family(&self) -> Family {
        self.inst.family()
    }

    pub fn capacities(&self) -> &[f64] {
        self.inst.capacities()
    }

    /// All-or-nothing feasible sets (bitmasks over global ranks).
    pub fn feasible_sets(&self) -> &[u32] {
        self.inst.feasible_sets()
    }

    pub fn alive_ids(&self) -> Vec<JobId> {
        self.alive.iter().map(|j| j.id).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.alive.iter().map(|j| j.weight).collect()
    }

    /// Packing polytope over the alive jobs (columns in the same order as `alive`).
    pub fn polytope(&self) -> Result<PackingPolytope> {
        build_polytope(self.inst, &self.alive_ids())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventSet {
    pub arrived: Vec<JobId>,
    pub completed: Vec<JobId>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SchedulerDecision {
    /// One rate per alive job, in the view's order, inside the (unscaled) polytope.
    pub rates: Vec<f64>,
    /// Duals of the view polytope's rows, when the scheduler has them.
    pub duals: Option<Vec<f64>>,
    /// Witness for `rates <= Q z`, `H z <= 1`.
    pub z: Option<Vec<f64>>,
    /// Machine holding each alive job (single-machine assignments).
    pub machine_of: Option<Vec<usize>>,
    pub kkt: Option<KktReport>,
}

pub trait Scheduler {
    fn name(&self) -> &str;
    fn supports(&self, family: Family) -> bool;
    fn decide(&mut self, view: &SchedulerView<'_>, events: &EventSet) -> Result<SchedulerDecision>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub jobs: Vec<JobId>,
    pub rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duals: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_of: Option<Vec<usize>>,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn rate(&self, id: JobId) -> f64 {
        self.jobs.iter().position(|&j| j == id).map_or(0.0, |i| self.rates[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub arrived: Vec<JobId>,
    pub completed: Vec<JobId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceJob {
    pub id: JobId,
    pub weight: f64,
    pub size: f64,
    pub release: f64,
    pub completion: Option<f64>,
    /// Work processed over the run, for conservation checks.
    pub processed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scheduler: String,
    pub family: Family,
    pub speed: f64,
    /// Jobs in global-rank order.
    pub jobs: Vec<TraceJob>,
    pub segments: Vec<Segment>,
    pub events: Vec<EventRecord>,
    /// Worst feasibility violation of any decision.
    pub max_violation: f64,
    /// Worst KKT residual reported by any decision, when the scheduler reports them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_kkt: Option<f64>,
}

impl Trace {
    pub fn job(&self, id: JobId) -> Option<&TraceJob> {
        self.jobs.iter().find(|j| j.id == id)
    }

    pub fn makespan(&self) -> f64 {
        self.jobs.iter().filter_map(|j| j.completion).fold(0.0, f64::max)
    }

    /// Largest `|processed - size| / size` over completed jobs.
    pub fn work_error(&self) -> f64 {
        self.jobs.iter().map(|j| (j.processed - j.size).abs() / j.size).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Rates may exceed the polytope by at most this much.
    pub feasibility_tol: f64,
    /// Check every decision against the polytope (an LP for lifted families without a witness).
    pub check_feasibility: bool,
    /// Wall-clock budget for the whole run.
    pub time_budget: Option<Duration>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { feasibility_tol: FEASIBILITY_TOL, check_feasibility: true, time_budget: None }
    }
}

/// Time until the next completion and the jobs completing then (within [`TIE_TOL`]).
/// `None` when no job has a positive rate.
pub fn next_completion(remaining: &[f64], rates: &[f64], speed: f64) -> Option<(f64, Vec<usize>)> {
    let times: Vec<f64> = remaining
        .iter()
        .zip(rates)
        .map(|(&p, &x)| if x > 0.0 { p / (speed * x) } else { f64::INFINITY })
        .collect();
    let delta = times.iter().copied().fold(f64::INFINITY, f64::min);
    if !delta.is_finite() {
        return None;
    }
    let set = (0..times.len()).filter(|&i| times[i] <= delta + TIE_TOL).collect();
    Some((delta, set))
}

pub fn simulate(inst: &Instance, sched: &mut dyn Scheduler, speed: f64) -> Result<Trace> {
    simulate_with(inst, sched, speed, &SimOptions::default())
}

pub fn simulate_with(inst: &Instance, sched: &mut dyn Scheduler, speed: f64, opts: &SimOptions) -> Result<Trace> {
    if !(speed.is_finite() && speed >= 1.0) {
        return Err(Error::Param(format!("speed must be at least 1, got {speed}")));
    }
    if !sched.supports(inst.family()) {
        return Err(Error::UnsupportedFamily { family: inst.family().to_string(), operation: sched.name().to_string() });
    }
    let started = Instant::now();
    let jobs = inst.jobs();
    let n = jobs.len();
    let mut remaining: Vec<f64> = jobs.iter().map(|j| j.size).collect();
    let mut processed = vec![0.0; n];
    let mut completion: Vec<Option<f64>> = vec![None; n];
    let mut alive: Vec<usize> = Vec::new();
    let mut next_arrival = 0;
    let mut segments = Vec::new();
    let mut events = Vec::new();
    let mut max_violation: f64 = 0.0;
    let mut max_kkt: Option<f64> = None;
    let mut t = 0.0;
    let mut completed_now: Vec<JobId> = Vec::new();

    loop {
        let mut arrived = Vec::new();
        while next_arrival < n && jobs[next_arrival].release <= t {
            alive.push(next_arrival);
            arrived.push(jobs[next_arrival].id);
            next_arrival += 1;
        }
        alive.sort_unstable();
        if !arrived.is_empty() || !completed_now.is_empty() {
            events.push(EventRecord { time: t, arrived: arrived.clone(), completed: completed_now.clone() });
        }
        if alive.is_empty() {
            if next_arrival == n {
                break;
            }
            let r = jobs[next_arrival].release;
            segments.push(Segment {
                start: t,
                end: r,
                jobs: Vec::new(),
                rates: Vec::new(),
                duals: None,
                z: None,
                machine_of: None,
            });
            t = r;
            completed_now.clear();
            continue;
        }
        if let Some(budget) = opts.time_budget {
            if started.elapsed() > budget {
                return Err(Error::Simulation(format!("wall-clock budget exceeded at t={t}")));
            }
        }

        let view = SchedulerView::new(inst, t, speed, &alive);
        let ev = EventSet { arrived, completed: std::mem::take(&mut completed_now) };
        let decision = sched.decide(&view, &ev)?;
        if decision.rates.len() != alive.len() {
            return Err(Error::Dimension { expected: alive.len(), got: decision.rates.len() });
        }
        if decision.rates.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Simulation(format!("{} returned a negative or non-finite rate at t={t}", sched.name())));
        }
        if let Some(k) = &decision.kkt {
            max_kkt = Some(max_kkt.unwrap_or(0.0).max(k.worst()));
        }
        if opts.check_feasibility {
            let p = view.polytope()?;
            let rep = match &decision.z {
                Some(z) => p.check_witness(&decision.rates, z, opts.feasibility_tol)?,
                None => p.check_feasible(&decision.rates, opts.feasibility_tol)?,
            };
            max_violation = max_violation.max(rep.max_violation.max(0.0));
            if !rep.feasible {
                return Err(Error::InfeasibleDecision { time: t, violation: rep.max_violation });
            }
        }

        let rem: Vec<f64> = alive.iter().map(|&p| remaining[p]).collect();
        let completion_step = next_completion(&rem, &decision.rates, speed);
        let arrival_step = (next_arrival < n).then(|| jobs[next_arrival].release - t);
        let (dt, finishing) = match (completion_step, arrival_step) {
            (None, None) => return Err(Error::Livelock(t)),
            (None, Some(a)) => (a, Vec::new()),
            (Some((c, set)), None) => (c, set),
            (Some((c, set)), Some(a)) => {
                if c <= a + TIE_TOL {
                    (c, set)
                } else {
                    (a, Vec::new())
                }
            }
        };
        let end = match arrival_step {
            Some(a) if (dt - a).abs() <= TIE_TOL => jobs[next_arrival].release,
            _ => t + dt,
        };
        let dt = end - t;
        for (i, &p) in alive.iter().enumerate() {
            let work = speed * decision.rates[i] * dt;
            processed[p] += work;
            remaining[p] -= work;
        }
        let ids: Vec<JobId> = alive.iter().map(|&p| jobs[p].id).collect();
        segments.push(Segment {
            start: t,
            end,
            jobs: ids,
            rates: decision.rates,
            duals: decision.duals,
            z: decision.z,
            machine_of: decision.machine_of,
        });
        let mut done: Vec<usize> = finishing.into_iter().map(|i| alive[i]).collect();
        done.sort_unstable();
        for &p in &done {
            completion[p] = Some(end);
            remaining[p] = 0.0;
            completed_now.push(jobs[p].id);
        }
        alive.retain(|p| !done.contains(p));
        t = end;
    }

    let trace_jobs = jobs
        .iter()
        .enumerate()
        .map(|(p, j)| TraceJob {
            id: j.id,
            weight: j.weight,
            size: j.size,
            release: j.release,
            completion: completion[p],
            processed: processed[p],
        })
        .collect();
    Ok(Trace {
        scheduler: sched.name().to_string(),
        family: inst.family(),
        speed,
        jobs: trace_jobs,
        segments,
        events,
        max_violation,
        max_kkt,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobMetric {
    pub id: JobId,
    pub completion: f64,
    pub flow: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weighted_completion: f64,
    pub weighted_flow: f64,
    pub total_flow: f64,
    pub makespan: f64,
    pub per_job: Vec<JobMetric>,
}

pub fn metrics(tr: &Trace) -> Result<Metrics> {
    let mut m = Metrics { weighted_completion: 0.0, weighted_flow: 0.0, total_flow: 0.0, makespan: 0.0, per_job: Vec::new() };
    for j in &tr.jobs {
        let c = j.completion.ok_or_else(|| Error::Simulation(format!("job {} never completed", j.id)))?;
        let f = c - j.release;
        m.weighted_completion += j.weight * c;
        m.weighted_flow += j.weight * f;
        m.total_flow += f;
        m.makespan = m.makespan.max(c);
        m.per_job.push(JobMetric { id: j.id, completion: c, flow: f });
    }
    Ok(m)
}
