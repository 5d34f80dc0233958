//! Dual fitting for total flow time on unrelated machines from a BLASS trace.
//!
//! `Delta_j` is the delay job `j` causes to earlier-released jobs sharing its
//! machine (its own processing included) plus the delay they cause to it, in
//! units of the unaugmented shares. With `alpha_j = Delta_j / (k+2)` and
//! `beta_it = N_i(t) / (k+3)` the dual objective is exactly
//! `sum F * eps^2 / ((1+2 eps)(1+3 eps))`.

use serde::{Deserialize, Serialize};

use super::{compare, Violation, CERT_TOL};
use crate::blass::{slaps_shares, BlassConfig};
use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::instances::Instance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnrelatedDualCert {
    pub epsilon: f64,
    pub k: u32,
    pub eta: f64,
    /// Per trace job.
    pub delay: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Per trace segment and machine.
    pub beta: Vec<Vec<f64>>,
    /// `sum_t width_t sum_i beta_it`.
    pub beta_total: f64,
    pub objective: f64,
    pub total_flow: f64,
}

impl UnrelatedDualCert {
    /// `(1+2 eps)(1+3 eps) / eps^2`.
    pub fn guaranteed_ratio(&self) -> f64 {
        let e = self.epsilon;
        (1.0 + 2.0 * e) * (1.0 + 3.0 * e) / (e * e)
    }
}

/// Per segment and alive job (in segment order): delay accrued in the segment,
/// local rank on its machine and that machine's job count.
struct Accrual {
    delay: Vec<Vec<f64>>,
    local_rank: Vec<Vec<usize>>,
    count: Vec<Vec<usize>>,
    /// Per segment: jobs per machine.
    per_machine: Vec<Vec<usize>>,
}

fn accrue(tr: &Trace, inst: &Instance, cfg: &BlassConfig) -> Result<Accrual> {
    let (k, eta) = (cfg.k(), cfg.eta());
    let m = inst.dimension();
    let mut acc = Accrual { delay: Vec::new(), local_rank: Vec::new(), count: Vec::new(), per_machine: Vec::new() };
    for seg in &tr.segments {
        let jobs = seg.jobs.len();
        let mut per_machine = vec![0usize; m];
        let mut local_rank = vec![0; jobs];
        let mut delay = vec![0.0; jobs];
        let mut count = vec![0; jobs];
        if jobs > 0 {
            let machine_of = seg
                .machine_of
                .as_ref()
                .ok_or_else(|| Error::Certificate(format!("segment at t={} has no machine assignment", seg.start)))?;
            for (i, &mi) in machine_of.iter().enumerate() {
                if mi >= m {
                    return Err(Error::Certificate(format!("machine {mi} out of range")));
                }
                per_machine[mi] += 1;
                local_rank[i] = per_machine[mi];
            }
            let shares: Vec<Vec<f64>> = per_machine.iter().map(|&c| slaps_shares(c, k, eta)).collect();
            for i in 0..jobs {
                let (mi, r) = (machine_of[i], local_rank[i]);
                let nu = &shares[mi];
                let job = inst.job(seg.jobs[i]).ok_or_else(|| Error::Certificate(format!("unknown job {}", seg.jobs[i])))?;
                let expected = nu[r - 1] / eta * job.payload[mi];
                if (seg.rates[i] - expected).abs() > 1e-9 * expected.max(1.0) {
                    return Err(Error::Certificate(format!(
                        "rate of job {} at t={} is {}, not the SLAPS share {expected}",
                        seg.jobs[i], seg.start, seg.rates[i]
                    )));
                }
                let earlier: f64 = nu[..r - 1].iter().sum();
                delay[i] = seg.len() / eta * (nu[r - 1] * r as f64 + earlier);
                count[i] = per_machine[mi];
            }
        }
        acc.delay.push(delay);
        acc.local_rank.push(local_rank);
        acc.count.push(count);
        acc.per_machine.push(per_machine);
    }
    Ok(acc)
}

/// Build the flow-time certificate of a BLASS trace run at speed `1 + 3 eps`.
pub fn blass_duals(tr: &Trace, inst: &Instance, cfg: &BlassConfig) -> Result<UnrelatedDualCert> {
    cfg.validate()?;
    if !inst.family().is_unrelated_like() {
        return Err(Error::UnsupportedFamily { family: inst.family().to_string(), operation: "blass_duals".into() });
    }
    if (tr.speed - cfg.eta()).abs() > 1e-12 {
        return Err(Error::Certificate(format!("trace speed {} is not 1 + 3 eps = {}", tr.speed, cfg.eta())));
    }
    if let Some(j) = tr.jobs.iter().find(|j| j.completion.is_none()) {
        return Err(Error::Certificate(format!("job {} never completed", j.id)));
    }
    let acc = accrue(tr, inst, cfg)?;
    let index: std::collections::BTreeMap<_, _> = tr.jobs.iter().enumerate().map(|(i, j)| (j.id, i)).collect();
    let k = cfg.k();
    let mut delay = vec![0.0; tr.jobs.len()];
    let mut beta = Vec::with_capacity(tr.segments.len());
    let mut beta_total = 0.0;
    for (g, seg) in tr.segments.iter().enumerate() {
        for (i, id) in seg.jobs.iter().enumerate() {
            delay[index[id]] += acc.delay[g][i];
        }
        let b: Vec<f64> = acc.per_machine[g].iter().map(|&c| c as f64 / (k as f64 + 3.0)).collect();
        beta_total += seg.len() * b.iter().sum::<f64>();
        beta.push(b);
    }
    let alpha: Vec<f64> = delay.iter().map(|d| d / (k as f64 + 2.0)).collect();
    let total_flow = tr.jobs.iter().map(|j| j.completion.unwrap() - j.release).sum();
    Ok(UnrelatedDualCert {
        epsilon: cfg.epsilon,
        k,
        eta: cfg.eta(),
        objective: alpha.iter().sum::<f64>() - beta_total,
        delay,
        alpha,
        beta,
        beta_total,
        total_flow,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlassCertReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    /// Largest relative excess over the dual constraints (negative when all are slack).
    pub max_violation: f64,
    /// `|sum Delta - sum F| / sum F`.
    pub delay_identity_gap: f64,
    /// `|objective - sum F eps^2/((1+2eps)(1+3eps))|` relative to the latter.
    pub objective_identity_gap: f64,
    /// Checks of the residual-delay bound at segment starts.
    pub residual_bound_checks: usize,
    /// Checks of the delay-growth bound at segment starts.
    pub growth_bound_checks: usize,
    pub total_flow: f64,
    /// Lower bound on the relaxation optimum: the dual objective.
    pub lower_bound_lp: f64,
    /// Lower bound on the optimal total flow time (the relaxation is within 2).
    pub lower_bound_flow: f64,
    /// `sum F / lower_bound_lp`.
    pub certified_ratio: f64,
    pub guaranteed_ratio: f64,
}

/// Verify a BLASS flow-time certificate against its trace.
pub fn check_blass_cert(cert: &UnrelatedDualCert, inst: &Instance, tr: &Trace) -> Result<BlassCertReport> {
    let cfg = BlassConfig { epsilon: cert.epsilon, check_invariants: false };
    let reference = blass_duals(tr, inst, &cfg)?;
    let acc = accrue(tr, inst, &cfg)?;
    let n = tr.jobs.len();
    if cert.alpha.len() != n || cert.delay.len() != n || cert.beta.len() != tr.segments.len() {
        return Err(Error::Certificate("certificate shape does not match the trace".into()));
    }
    let mut violations = Vec::new();
    for j in 0..n {
        let id = Some(tr.jobs[j].id);
        compare(&mut violations, "Delta", id, 0.0, None, cert.delay[j], reference.delay[j]);
        compare(&mut violations, "alpha", id, 0.0, None, cert.alpha[j], reference.alpha[j]);
        if cert.alpha[j] < 0.0 {
            violations.push(Violation { constraint: "alpha >= 0".into(), job: id, time: 0.0, at: None, excess: -cert.alpha[j] });
        }
    }
    for (g, (b, rb)) in cert.beta.iter().zip(&reference.beta).enumerate() {
        let t = tr.segments[g].start;
        for i in 0..b.len() {
            compare(&mut violations, "beta", None, t, Some(format!("machine[{i}]")), b[i], rb[i]);
            if b[i] < 0.0 {
                violations.push(Violation { constraint: "beta >= 0".into(), job: None, time: t, at: Some(format!("machine[{i}]")), excess: -b[i] });
            }
        }
    }
    compare(&mut violations, "objective", None, 0.0, None, cert.objective, reference.objective);

    // s_ij alpha_j / p_j - beta_it <= s_ij (t - r_j)/p_j + 1 at every segment start and at the end.
    let m = inst.dimension();
    let horizon = tr.segments.last().map_or(0.0, |s| s.end);
    let zero = vec![0.0; m];
    let mut max_violation = f64::NEG_INFINITY;
    let points = tr.segments.iter().zip(&cert.beta).map(|(s, b)| (s.start, b)).chain([(horizon, &zero)]);
    for (t, beta) in points {
        for (j, tj) in tr.jobs.iter().enumerate() {
            if t < tj.release {
                continue;
            }
            let speeds = &inst.job(tj.id).expect("trace job in instance").payload;
            for i in 0..m {
                let s = speeds[i];
                let lhs = s * cert.alpha[j] / tj.size - beta[i];
                let rhs = s * (t - tj.release) / tj.size + 1.0;
                let excess = (lhs - rhs) / (s * cert.alpha[j] / tj.size + rhs + beta[i]);
                max_violation = max_violation.max(excess);
                if excess > CERT_TOL {
                    violations.push(Violation {
                        constraint: "s_ij alpha_j/p_j - beta_it <= s_ij (t - r_j)/p_j + 1".into(),
                        job: Some(tj.id),
                        time: t,
                        at: Some(format!("machine[{i}]")),
                        excess,
                    });
                }
            }
        }
    }

    // Residual delay after t* is at most (1/eta) (k+2)/(k+1) p_j(t*) / L, and
    // Delta_j <= (k+2)(t* - r_j) + residual.
    let (k, eta) = (cert.k as f64, cert.eta);
    let mut residual_bound_checks = 0;
    let mut growth_bound_checks = 0;
    for (j, tj) in tr.jobs.iter().enumerate() {
        let speeds = &inst.job(tj.id).expect("trace job in instance").payload;
        let mut done = 0.0;
        let mut suffix: Vec<(f64, f64, f64, f64)> = Vec::new();
        for (g, seg) in tr.segments.iter().enumerate() {
            if let Some(i) = seg.jobs.iter().position(|&id| id == tj.id) {
                let machine = seg.machine_of.as_ref().expect("checked in accrue")[i];
                let l = speeds[machine] / acc.local_rank[g][i] as f64;
                suffix.push((seg.start, tj.size - done, l, acc.delay[g][i]));
                done += tr.speed * seg.rates[i] * seg.len();
            }
        }
        let mut residual = 0.0;
        for &(t, remaining, l, d) in suffix.iter().rev() {
            residual += d;
            let bound = (k + 2.0) / ((k + 1.0) * eta) * remaining / l;
            residual_bound_checks += 1;
            if residual > bound * (1.0 + CERT_TOL) + 1e-12 {
                violations.push(Violation {
                    constraint: "residual delay <= (k+2)/((k+1) eta) p_j(t)/L".into(),
                    job: Some(tj.id),
                    time: t,
                    at: None,
                    excess: residual / bound - 1.0,
                });
            }
            let growth = (k + 2.0) * (t - tj.release) + residual;
            growth_bound_checks += 1;
            if cert.delay[j] > growth * (1.0 + CERT_TOL) + 1e-12 {
                violations.push(Violation {
                    constraint: "Delta_j <= (k+2)(t - r_j) + residual delay".into(),
                    job: Some(tj.id),
                    time: t,
                    at: None,
                    excess: cert.delay[j] / growth - 1.0,
                });
            }
        }
    }

    let total_flow = reference.total_flow;
    let delay_sum: f64 = cert.delay.iter().sum();
    let e = cert.epsilon;
    let identity = total_flow * e * e / ((1.0 + 2.0 * e) * (1.0 + 3.0 * e));
    Ok(BlassCertReport {
        feasible: violations.is_empty(),
        violations,
        max_violation,
        delay_identity_gap: (delay_sum - total_flow).abs() / total_flow,
        objective_identity_gap: (cert.objective - identity).abs() / identity,
        residual_bound_checks,
        growth_bound_checks,
        total_flow,
        lower_bound_lp: cert.objective,
        lower_bound_flow: cert.objective / 2.0,
        certified_ratio: total_flow / cert.objective,
        guaranteed_ratio: cert.guaranteed_ratio(),
    })
}

/// Build and check the certificate of a BLASS trace.
pub fn certify_blass(inst: &Instance, tr: &Trace, cfg: &BlassConfig) -> Result<(UnrelatedDualCert, BlassCertReport)> {
    let cert = blass_duals(tr, inst, cfg)?;
    let report = check_blass_cert(&cert, inst, tr)?;
    Ok((cert, report))
}
