//! Dual fitting for total weighted completion time from a proportional-fairness trace.
//!
//! Per slot, `zeta` is the weighted median of the completed fraction
//! `q_jt / p_j` over the unsatisfied jobs (not yet completed, released or
//! not). Job `j` collects `w_j` per unit time while it is unsatisfied and at or
//! below the median; row `d` gets the suffix sum `(1/s) sum_{t' >= t} zeta_t' y_dt'`.
//! Lifted polytopes also carry job multipliers `gamma_jt = (1/sigma) sum_{t' >= t} zeta_t' w_j / x_jt'`
//! for the `x <= Q z` rows. Against an adversary of the trace's speed `sigma`,
//! `(sum alpha - sum beta) / s` lower-bounds the optimum.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{compare, default_slot_width, slot_trace, weighted_median, SlottedTrace, Violation, CERT_TOL};
use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::polytope::{build_polytope, PackingPolytope, RowKey};

pub const DEFAULT_CERT_S: f64 = 32.0;
/// Jobs within this relative distance above the median count as at the median.
const MEDIAN_TIE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionDualCert {
    pub s: f64,
    pub speed: f64,
    /// Per trace job.
    pub alpha: Vec<f64>,
    /// Per segment: the median completed fraction per unit time (a slot of
    /// width `h` has median `zeta * h`), widened by the tie factor.
    pub zeta: Vec<f64>,
    /// Rows of the polytope over all jobs.
    pub rows: Vec<RowKey>,
    /// `beta` at every segment start, then at the horizon (all zero).
    pub beta: Vec<Vec<f64>>,
    /// Lifted polytopes: `gamma` per job at every segment start, then at the horizon.
    pub gamma: Option<Vec<Vec<f64>>>,
    /// `sum_t width_t sum_d beta_dt`.
    pub beta_total: f64,
    /// `sum alpha - beta_total`.
    pub objective: f64,
    /// The objective in the limit of vanishing slot width.
    pub continuous_objective: f64,
}

impl CompletionDualCert {
    pub fn alpha_total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Certified lower bound on the optimal total weighted completion time.
    pub fn lower_bound(&self) -> f64 {
        self.objective / self.s
    }
}

struct Prepared {
    universe: PackingPolytope,
    /// Per segment: duals mapped onto `universe` rows.
    y: Vec<Vec<f64>>,
}

fn prepare(st: &SlottedTrace, inst: &Instance) -> Result<Prepared> {
    let ids: Vec<_> = st.jobs.iter().map(|j| j.id).collect();
    if inst.jobs().iter().map(|j| j.id).collect::<Vec<_>>() != ids {
        return Err(Error::Certificate("trace jobs do not match the instance".into()));
    }
    let universe = build_polytope(inst, &ids)?;
    let row_of: BTreeMap<RowKey, usize> = universe.rows().iter().enumerate().map(|(d, &k)| (k, d)).collect();
    let mut y = Vec::with_capacity(st.segments.len());
    for seg in &st.segments {
        let mut v = vec![0.0; universe.num_rows()];
        if !seg.alive.is_empty() {
            let duals = seg
                .duals
                .as_ref()
                .ok_or_else(|| Error::Certificate(format!("segment at t={} carries no duals", seg.start)))?;
            let alive: Vec<_> = seg.alive.iter().map(|&j| ids[j]).collect();
            let p = build_polytope(inst, &alive)?;
            if duals.len() != p.num_rows() {
                return Err(Error::Dimension { expected: p.num_rows(), got: duals.len() });
            }
            for (key, &yd) in p.rows().iter().zip(duals) {
                let d = row_of
                    .get(key)
                    .ok_or_else(|| Error::Certificate(format!("row {key} missing from the full polytope")))?;
                v[*d] = yd;
            }
        }
        y.push(v);
    }
    Ok(Prepared { universe, y })
}

/// Build the completion-time dual certificate with speed parameter `s`.
pub fn completion_duals(st: &SlottedTrace, inst: &Instance, s: f64) -> Result<CompletionDualCert> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Param(format!("certificate parameter s must be positive, got {s}")));
    }
    let prep = prepare(st, inst)?;
    let n = st.jobs.len();
    let g_count = st.segments.len();
    let sigma = st.speed;
    let lifted = !prep.universe.is_direct();

    let mut alpha = vec![0.0; n];
    let mut zeta = Vec::with_capacity(g_count);
    let mut mu = Vec::with_capacity(g_count);
    for seg in &st.segments {
        let mut frac = vec![0.0; n];
        let mut m = vec![0.0; n];
        for (i, &j) in seg.alive.iter().enumerate() {
            frac[j] = seg.work_rate[i] / st.jobs[j].size;
            let x = seg.work_rate[i] / sigma;
            m[j] = if x > 0.0 { st.jobs[j].weight / x } else { 0.0 };
        }
        let unsatisfied: Vec<usize> = (0..n).filter(|&j| st.completion(j) > seg.start).collect();
        let z = if unsatisfied.is_empty() {
            0.0
        } else {
            let vals: Vec<f64> = unsatisfied.iter().map(|&j| frac[j]).collect();
            let ws: Vec<f64> = unsatisfied.iter().map(|&j| st.jobs[j].weight).collect();
            weighted_median(&vals, &ws)? * (1.0 + MEDIAN_TIE)
        };
        for &j in &unsatisfied {
            if frac[j] <= z {
                alpha[j] += st.jobs[j].weight * seg.len;
            }
        }
        zeta.push(z);
        mu.push(m);
    }

    let rows = prep.universe.num_rows();
    let mut beta = vec![vec![0.0; rows]; g_count + 1];
    let mut gamma = lifted.then(|| vec![vec![0.0; n]; g_count + 1]);
    let mut beta_total = 0.0;
    let mut continuous = 0.0;
    for g in (0..g_count).rev() {
        let seg = &st.segments[g];
        let w = seg.len * zeta[g];
        let tri = (seg.subslots as f64 + 1.0) / (2.0 * seg.subslots as f64);
        for d in 0..rows {
            let own = w * prep.y[g][d] / s;
            beta[g][d] = own + beta[g + 1][d];
            beta_total += seg.len * (own * tri + beta[g + 1][d]);
            continuous += seg.len * (own * 0.5 + beta[g + 1][d]);
        }
        if let Some(gm) = gamma.as_mut() {
            for j in 0..n {
                gm[g][j] = w * mu[g][j] / sigma + gm[g + 1][j];
            }
        }
    }
    let a: f64 = alpha.iter().sum();
    Ok(CompletionDualCert {
        s,
        speed: sigma,
        alpha,
        zeta,
        rows: prep.universe.rows().to_vec(),
        beta,
        gamma,
        beta_total,
        objective: a - beta_total,
        continuous_objective: a - continuous,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    /// All dual constraints hold and the certificate matches its construction.
    pub feasible: bool,
    pub violations: Vec<Violation>,
    /// Largest relative excess over all dual constraints (negative when all are slack).
    pub max_violation: f64,
    /// `sum_j w_j C_j` of the trace.
    pub weighted_completion: f64,
    /// `sum alpha >= (1/2) sum w_j C_j`.
    pub alpha_bound_holds: bool,
    /// Largest `sum_d beta_dt / W_t` over slots, to compare with `8 / s`.
    pub max_beta_ratio: f64,
    pub beta_bound_holds: bool,
    pub objective: f64,
    /// `objective / sum w_j C_j`.
    pub objective_ratio: f64,
    /// `objective / s`: lower bound on the optimum at the trace's speed.
    pub lower_bound: f64,
    /// `sum w_j C_j / lower_bound`.
    pub certified_ratio: f64,
    /// Objective lost to the finite slot width, relative to the vanishing-width limit.
    pub slotting_gap: f64,
}

/// Verify a completion certificate against the slotted trace it claims to fit.
pub fn check_completion_cert(cert: &CompletionDualCert, st: &SlottedTrace, inst: &Instance) -> Result<CompletionReport> {
    let reference = completion_duals(st, inst, cert.s)?;
    let prep = prepare(st, inst)?;
    let p = &prep.universe;
    let n = st.jobs.len();
    let g_count = st.segments.len();
    if cert.alpha.len() != n || cert.zeta.len() != g_count || cert.beta.len() != g_count + 1 || cert.rows != reference.rows {
        return Err(Error::Certificate("certificate shape does not match the trace".into()));
    }
    if cert.gamma.is_some() != reference.gamma.is_some() {
        return Err(Error::Certificate("multipliers for x <= Q z present on the wrong polytope form".into()));
    }
    let mut violations = Vec::new();
    let times: Vec<f64> = st.segments.iter().map(|s| s.start).chain([st.horizon()]).collect();
    let key = |d: usize| Some(cert.rows[d].to_string());

    for j in 0..n {
        let id = Some(st.jobs[j].id);
        compare(&mut violations, "alpha", id, 0.0, None, cert.alpha[j], reference.alpha[j]);
        if cert.alpha[j] < 0.0 {
            violations.push(Violation { constraint: "alpha >= 0".into(), job: id, time: 0.0, at: None, excess: -cert.alpha[j] });
        }
    }
    for g in 0..g_count {
        compare(&mut violations, "zeta", None, times[g], Some(format!("segment[{g}]")), cert.zeta[g], reference.zeta[g]);
    }
    for (g, (b, rb)) in cert.beta.iter().zip(&reference.beta).enumerate() {
        for d in 0..b.len() {
            compare(&mut violations, "beta", None, times[g], key(d), b[d], rb[d]);
            if b[d] < 0.0 {
                violations.push(Violation { constraint: "beta >= 0".into(), job: None, time: times[g], at: key(d), excess: -b[d] });
            }
        }
    }
    if let (Some(gm), Some(rg)) = (&cert.gamma, &reference.gamma) {
        for g in 0..=g_count {
            for j in 0..n {
                compare(&mut violations, "gamma", Some(st.jobs[j].id), times[g], None, gm[g][j], rg[g][j]);
            }
        }
    }
    compare(&mut violations, "objective", None, 0.0, None, cert.objective, reference.objective);

    // The dual constraints, from the certificate's own numbers.
    let scale = cert.s / cert.speed;
    let mut max_violation = f64::NEG_INFINITY;
    for (g, &t) in times.iter().enumerate() {
        let hb = p.ht_times(&cert.beta[g]);
        for j in 0..n {
            let job = &st.jobs[j];
            if t < job.release {
                continue;
            }
            let a = cert.alpha[j] / job.size;
            let rhs = job.weight * t / job.size;
            let (lhs, sub, name) = match &cert.gamma {
                None => (a - scale * hb[j], scale * hb[j], "alpha_j/p_j - s B_j beta_t <= w_j t/p_j"),
                Some(gm) => (a - gm[g][j], gm[g][j], "alpha_j/p_j - gamma_jt <= w_j t/p_j"),
            };
            let excess = (lhs - rhs) / (a + rhs + sub).max(1e-300);
            max_violation = max_violation.max(excess);
            if excess > CERT_TOL {
                violations.push(Violation { constraint: name.into(), job: Some(job.id), time: t, at: None, excess });
            }
        }
        if let Some(gm) = &cert.gamma {
            let qg = p.qt_times(&gm[g]);
            for k in 0..p.num_z() {
                let cap = scale * hb[k];
                let excess = (qg[k] - cap) / (qg[k] + cap).max(1e-300);
                max_violation = max_violation.max(excess);
                if excess > CERT_TOL {
                    violations.push(Violation {
                        constraint: "Q^T gamma_t <= s H^T beta_t".into(),
                        job: None,
                        time: t,
                        at: Some(format!("{:?}", p.zkeys()[k])),
                        excess,
                    });
                }
            }
        }
    }

    let weighted_completion: f64 = (0..n).map(|j| st.jobs[j].weight * st.completion(j)).sum();
    let alpha_bound_holds = cert.alpha_total() >= 0.5 * weighted_completion * (1.0 - CERT_TOL);
    let mut max_beta_ratio: f64 = 0.0;
    for (g, seg) in st.segments.iter().enumerate() {
        let w: f64 = (0..n).filter(|&j| st.completion(j) > seg.start).map(|j| st.jobs[j].weight).sum();
        if w > 0.0 {
            max_beta_ratio = max_beta_ratio.max(cert.beta[g].iter().sum::<f64>() / w);
        }
    }
    let beta_bound_holds = max_beta_ratio <= 8.0 / cert.s * (1.0 + CERT_TOL);
    let lower_bound = cert.lower_bound();
    Ok(CompletionReport {
        feasible: violations.is_empty(),
        violations,
        max_violation,
        weighted_completion,
        alpha_bound_holds,
        max_beta_ratio,
        beta_bound_holds,
        objective: cert.objective,
        objective_ratio: cert.objective / weighted_completion,
        lower_bound,
        certified_ratio: if lower_bound > 0.0 { weighted_completion / lower_bound } else { f64::INFINITY },
        slotting_gap: (reference.continuous_objective - reference.objective) / reference.continuous_objective.abs().max(1e-300),
    })
}

/// Slot `tr` at the default width, build the certificate and check it.
pub fn certify_completion(inst: &Instance, tr: &Trace, s: f64) -> Result<(CompletionDualCert, CompletionReport)> {
    let st = slot_trace(tr, default_slot_width(tr))?;
    let cert = completion_duals(&st, inst, s)?;
    let report = check_completion_cert(&cert, &st, inst)?;
    Ok((cert, report))
}

/// Lower bounds on the optimal total weighted flow time at the trace's speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowLowerBound {
    /// Completion-time bound minus `sum_j w_j r_j`.
    pub from_completion: f64,
    /// `sum_j w_j p_j / (speed * best solo rate of j)`.
    pub from_solo: f64,
    pub value: f64,
}

pub fn certified_flow_lower_bound(inst: &Instance, tr: &Trace, s: f64) -> Result<FlowLowerBound> {
    let (_, report) = certify_completion(inst, tr, s)?;
    if !report.feasible {
        return Err(Error::Certificate(format!(
            "completion certificate infeasible: {} violations",
            report.violations.len()
        )));
    }
    let weighted_release: f64 = tr.jobs.iter().map(|j| j.weight * j.release).sum();
    let mut from_solo = 0.0;
    for j in &tr.jobs {
        let p = build_polytope(inst, &[j.id])?;
        from_solo += j.weight * j.size / (tr.speed * p.solo_rate(0));
    }
    let from_completion = report.lower_bound - weighted_release;
    Ok(FlowLowerBound { from_completion, from_solo, value: from_completion.max(from_solo) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate;
    use crate::instances::{Family, Job};
    use crate::schedulers::Pf;

    fn single_resource(jobs: &[(f64, f64, f64)]) -> Instance {
        let jobs = jobs
            .iter()
            .enumerate()
            .map(|(i, &(weight, size, release))| Job { id: i as u64, weight, size, release, payload: vec![1.0] })
            .collect();
        Instance::new(Family::Multidim, jobs, vec![1.0], BTreeMap::new()).unwrap()
    }

    #[test]
    fn single_job_alpha_is_its_weighted_completion() {
        let inst = single_resource(&[(2.0, 1.5, 0.0)]);
        let tr = simulate(&inst, &mut Pf::default(), 1.0).unwrap();
        let (cert, rep) = certify_completion(&inst, &tr, DEFAULT_CERT_S).unwrap();
        assert!((cert.alpha[0] - 2.0 * 1.5).abs() < 1e-9);
        assert!(rep.feasible, "{:?}", rep.violations);
        // tight only at the completion time itself
        assert!(rep.max_violation <= 1e-12);
    }

    #[test]
    fn symmetric_pair_collects_full_weighted_completion() {
        let inst = single_resource(&[(1.0, 1.0, 0.0), (1.0, 1.0, 0.0)]);
        let tr = simulate(&inst, &mut Pf::default(), 1.0).unwrap();
        let (cert, rep) = certify_completion(&inst, &tr, DEFAULT_CERT_S).unwrap();
        let wc: f64 = tr.jobs.iter().map(|j| j.weight * j.completion.unwrap()).sum();
        assert!((wc - 4.0).abs() < 1e-7);
        assert!((cert.alpha_total() - wc).abs() < 1e-12);
        assert!(rep.feasible && rep.alpha_bound_holds && rep.beta_bound_holds);
        assert!(rep.objective_ratio >= 0.25 - 0.01);
    }

    #[test]
    fn last_segment_beta_is_own_term() {
        let inst = single_resource(&[(1.0, 1.0, 0.0), (1.0, 2.0, 0.0)]);
        let tr = simulate(&inst, &mut Pf::default(), 1.0).unwrap();
        let st = slot_trace(&tr, default_slot_width(&tr)).unwrap();
        let cert = completion_duals(&st, &inst, 32.0).unwrap();
        let g = st.segments.len() - 1;
        let seg = &st.segments[g];
        let y = seg.duals.as_ref().unwrap()[0];
        assert!((cert.beta[g][0] - seg.len * cert.zeta[g] * y / 32.0).abs() < 1e-12);
        assert!(cert.beta[g - 1][0] > cert.beta[g][0]);
    }

    #[test]
    fn inflated_alpha_is_caught() {
        let inst = single_resource(&[(1.0, 1.0, 0.0), (3.0, 2.0, 0.5)]);
        let tr = simulate(&inst, &mut Pf::default(), 1.0).unwrap();
        let st = slot_trace(&tr, default_slot_width(&tr)).unwrap();
        let mut cert = completion_duals(&st, &inst, 32.0).unwrap();
        // the last job to finish has no later duals to absorb the increase
        let last = (0..2).max_by(|&a, &b| st.completion(a).total_cmp(&st.completion(b))).unwrap();
        cert.alpha[last] += inst.jobs()[last].weight;
        let rep = check_completion_cert(&cert, &st, &inst).unwrap();
        assert!(!rep.feasible);
        let id = Some(st.jobs[last].id);
        assert!(rep.violations.iter().any(|v| v.constraint.starts_with("alpha_j/p_j") && v.job == id));
        assert!(rep.violations.iter().any(|v| v.constraint.starts_with("alpha differs") && v.job == id));
    }

    #[test]
    fn missing_duals_rejected() {
        let inst = single_resource(&[(1.0, 1.0, 0.0)]);
        let mut tr = simulate(&inst, &mut Pf::default(), 1.0).unwrap();
        tr.segments[0].duals = None;
        assert!(matches!(certify_completion(&inst, &tr, 32.0), Err(Error::Certificate(_))));
    }
}
