//! BLASS for unrelated machines: every machine shares its speed among its jobs
//! with smoothed latest-arrival processor sharing (SLAPS), arrivals go to the
//! machine offering the best hypothetical round-robin rate `L`, and completions
//! trigger a rank-ordered rearrangement of jobs into the freed slack.
//!
//! Rates emitted by the scheduler are the unaugmented shares `share * s_ij`;
//! run the engine at speed `eta` to obtain the augmented schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{EventSet, Scheduler, SchedulerDecision, SchedulerView};
use crate::error::{Error, Result};
use crate::instances::{Family, JobId};
use crate::polytope::ZKey;

/// Relative slack allowed when comparing `L` values in invariant checks.
const L_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlassConfig {
    pub epsilon: f64,
    /// Record the monotonicity invariants after every event.
    pub check_invariants: bool,
}

impl Default for BlassConfig {
    fn default() -> Self {
        Self { epsilon: 0.5, check_invariants: true }
    }
}

impl BlassConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let c = Self { epsilon, ..Self::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let inv = 1.0 / self.epsilon;
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) || (inv - inv.round()).abs() > 1e-9 {
            return Err(Error::Param(format!("1/epsilon must be a positive integer, got epsilon={}", self.epsilon)));
        }
        Ok(())
    }

    /// SLAPS exponent `k = 1/epsilon`.
    pub fn k(&self) -> u32 {
        (1.0 / self.epsilon).round() as u32
    }

    /// Speed augmentation `1 + 3 epsilon`.
    pub fn eta(&self) -> f64 {
        1.0 + 3.0 * self.epsilon
    }
}

/// SLAPS shares of `n` jobs by local rank: `eta * r^k / sum_a a^k`, summing to `eta`.
pub fn slaps_shares(n: usize, k: u32, eta: f64) -> Vec<f64> {
    let powers: Vec<f64> = (1..=n).map(|r| (r as f64).powi(k as i32)).collect();
    let total: f64 = powers.iter().sum();
    powers.into_iter().map(|p| eta * p / total).collect()
}

/// Both sides of `n^k / sum_{a<=n} a^k <= (k+1)/n <= n^k / sum_{a<n} a^k`, in exact integers.
pub fn slaps_bounds_hold(n: u64, k: u32) -> bool {
    let pow = |a: u64| (a as u128).pow(k);
    let upto_n: u128 = (1..=n).map(pow).sum();
    let below_n: u128 = (1..n).map(pow).sum();
    let nk = pow(n);
    let n = n as u128;
    let kp1 = k as u128 + 1;
    nk * n <= kp1 * upto_n && nk * n >= kp1 * below_n
}

/// Alive jobs of one machine as `(global rank, job)` in rank order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub machine: usize,
    pub jobs: Vec<(usize, JobId)>,
}

impl MachineState {
    pub fn new(machine: usize) -> Self {
        Self { machine, jobs: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.jobs.len()
    }

    /// Jobs on this machine with global rank below `rank`.
    pub fn n_before(&self, rank: usize) -> usize {
        self.jobs.partition_point(|&(r, _)| r < rank)
    }

    /// 1-based local rank of the job with this global rank, if present.
    pub fn local_rank(&self, rank: usize) -> Option<usize> {
        let i = self.n_before(rank);
        (self.jobs.get(i).map(|t| t.0) == Some(rank)).then_some(i + 1)
    }

    pub fn insert(&mut self, rank: usize, id: JobId) {
        let i = self.n_before(rank);
        self.jobs.insert(i, (rank, id));
    }

    pub fn remove(&mut self, rank: usize) -> bool {
        match self.local_rank(rank) {
            Some(r) => {
                self.jobs.remove(r - 1);
                true
            }
            None => false,
        }
    }
}

/// Hypothetical round-robin rate of a job of global rank `rank` and speed `speed` on `state`.
pub fn rate_l(state: &MachineState, speed: f64, rank: usize) -> f64 {
    speed / (state.n_before(rank) as f64 + 1.0)
}

/// Machine maximizing `L` for an arriving job (lowest index on ties).
pub fn dispatch(states: &[MachineState], speeds: &[f64], rank: usize, id: JobId) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, st) in states.iter().enumerate() {
        if speeds[i] <= 0.0 {
            continue;
        }
        let l = rate_l(st, speeds[i], rank);
        if best.is_none_or(|(_, b)| l > b) {
            best = Some((i, l));
        }
    }
    best.map(|b| b.0).ok_or(Error::Unprocessable(id))
}

/// A job moved by [`rearrange`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub job: JobId,
    pub from: usize,
    pub to: usize,
}

/// After the job of global rank `departed_rank` left machine `machine`, scan the
/// later-ranked alive jobs in rank order and move each one into the machine with
/// slack whenever that strictly improves its `L`; the vacated machine becomes
/// the new slack. `speeds` maps each alive job to its speed vector and
/// `location` to its `(global rank, machine)`.
pub fn rearrange(
    states: &mut [MachineState],
    location: &mut BTreeMap<JobId, (usize, usize)>,
    speeds: &BTreeMap<JobId, Vec<f64>>,
    departed_rank: usize,
    machine: usize,
) -> Vec<Move> {
    let mut order: Vec<(usize, JobId)> =
        location.iter().filter(|(_, &(r, _))| r > departed_rank).map(|(&id, &(r, _))| (r, id)).collect();
    order.sort_unstable();
    let mut b = machine;
    let mut moves = Vec::new();
    for (rank, id) in order {
        let current = location[&id].1;
        if current == b {
            continue;
        }
        let s = &speeds[&id];
        if s[b] <= 0.0 {
            continue;
        }
        if rate_l(&states[b], s[b], rank) > rate_l(&states[current], s[current], rank) {
            states[current].remove(rank);
            states[b].insert(rank, id);
            location.insert(id, (rank, b));
            moves.push(Move { job: id, from: current, to: b });
            b = current;
        }
    }
    moves
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantLog {
    /// Events at which the invariants were checked.
    pub checks: usize,
    /// Every alive job sits on a machine maximizing its `L`.
    pub best_machine_violations: Vec<String>,
    /// `N_<j` never grows while a job stays on one machine.
    pub earlier_count_violations: Vec<String>,
    /// `L` on the current machine never decreases over a job's lifetime.
    pub l_monotone_violations: Vec<String>,
    pub moves: usize,
}

impl InvariantLog {
    pub fn clean(&self) -> bool {
        self.best_machine_violations.is_empty()
            && self.earlier_count_violations.is_empty()
            && self.l_monotone_violations.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Blass {
    pub config: BlassConfig,
    states: Vec<MachineState>,
    location: BTreeMap<JobId, (usize, usize)>,
    speeds: BTreeMap<JobId, Vec<f64>>,
    /// Last `(machine, N_<j, L)` seen per job.
    history: BTreeMap<JobId, (usize, usize, f64)>,
    log: InvariantLog,
    weighted: bool,
}

impl Blass {
    pub fn new(config: BlassConfig) -> Self {
        Self {
            config,
            states: Vec::new(),
            location: BTreeMap::new(),
            speeds: BTreeMap::new(),
            history: BTreeMap::new(),
            log: InvariantLog::default(),
            weighted: false,
        }
    }

    pub fn invariants(&self) -> &InvariantLog {
        &self.log
    }

    pub fn states(&self) -> &[MachineState] {
        &self.states
    }

    /// True if any job carried a weight other than 1 (weights are ignored).
    pub fn saw_weights(&self) -> bool {
        self.weighted
    }

    fn check_invariants(&mut self, time: f64) {
        self.log.checks += 1;
        for (&id, &(rank, m)) in &self.location {
            let s = &self.speeds[&id];
            let here = rate_l(&self.states[m], s[m], rank);
            for (i, st) in self.states.iter().enumerate() {
                let l = rate_l(st, s[i], rank);
                if l > here * (1.0 + L_TOL) {
                    self.log
                        .best_machine_violations
                        .push(format!("t={time}: job {id} on machine {m} has L={here}, machine {i} offers {l}"));
                }
            }
            let before = self.states[m].n_before(rank);
            if let Some(&(pm, pb, pl)) = self.history.get(&id) {
                if pm == m && before > pb {
                    self.log
                        .earlier_count_violations
                        .push(format!("t={time}: job {id} on machine {m}: N_< went {pb} -> {before}"));
                }
                if here < pl * (1.0 - L_TOL) {
                    self.log.l_monotone_violations.push(format!("t={time}: job {id}: L went {pl} -> {here}"));
                }
            }
            self.history.insert(id, (m, before, here));
        }
    }
}

impl Scheduler for Blass {
    fn name(&self) -> &str {
        "blass"
    }

    fn supports(&self, family: Family) -> bool {
        family.is_unrelated_like()
    }

    fn decide(&mut self, view: &SchedulerView<'_>, events: &EventSet) -> Result<SchedulerDecision> {
        self.config.validate()?;
        if !self.supports(view.family()) {
            return Err(Error::UnsupportedFamily { family: view.family().to_string(), operation: "blass".into() });
        }
        let m = view.capacities().len();
        if self.states.len() != m {
            self.states = (0..m).map(MachineState::new).collect();
        }
        // Completions that emptied the system are not reported to a decision,
        // so anything placed but no longer alive has completed.
        let alive: std::collections::BTreeSet<JobId> = view.alive.iter().map(|j| j.id).collect();
        let mut completed: Vec<(usize, JobId)> = self
            .location
            .iter()
            .filter(|(id, _)| events.completed.contains(id) || !alive.contains(id))
            .map(|(&id, &(r, _))| (r, id))
            .collect();
        completed.sort_unstable();
        for (rank, id) in completed {
            let (_, machine) = self.location.remove(&id).expect("located");
            self.states[machine].remove(rank);
            self.speeds.remove(&id);
            self.history.remove(&id);
            let moves = rearrange(&mut self.states, &mut self.location, &self.speeds, rank, machine);
            self.log.moves += moves.len();
        }
        let mut arrivals: Vec<_> = view.alive.iter().filter(|j| events.arrived.contains(&j.id)).collect();
        arrivals.sort_by_key(|j| j.rank);
        for j in arrivals {
            if j.weight != 1.0 {
                self.weighted = true;
            }
            let i = dispatch(&self.states, &j.payload, j.rank, j.id)?;
            self.states[i].insert(j.rank, j.id);
            self.location.insert(j.id, (j.rank, i));
            self.speeds.insert(j.id, j.payload.clone());
        }
        if self.config.check_invariants {
            self.check_invariants(view.time);
        }

        let p = view.polytope()?;
        let zindex: BTreeMap<ZKey, usize> = p.zkeys().iter().enumerate().map(|(k, &key)| (key, k)).collect();
        let mut z = vec![0.0; p.num_z()];
        let mut rates = Vec::with_capacity(view.alive.len());
        let mut machine_of = Vec::with_capacity(view.alive.len());
        let k = self.config.k();
        for j in &view.alive {
            let (rank, i) = *self.location.get(&j.id).ok_or_else(|| {
                Error::Simulation(format!("job {} is alive but was never dispatched", j.id))
            })?;
            let st = &self.states[i];
            let r = st.local_rank(rank).expect("job on its machine");
            let share = slaps_shares(st.count(), k, 1.0)[r - 1];
            rates.push(share * j.payload[i]);
            machine_of.push(i);
            z[zindex[&ZKey::Assign { machine: i, job: j.id }]] = share;
        }
        Ok(SchedulerDecision { rates, duals: None, z: Some(z), machine_of: Some(machine_of), kkt: None })
    }
}
