//! Exact offline optima for tiny instances, used to sanity-check certified bounds.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{Family, Instance};

pub const BRUTE_FORCE_MAX_JOBS: usize = 5;
pub const BRUTE_FORCE_MAX_SLOTS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    WeightedCompletion,
    WeightedFlow,
}

/// Smallest value whose cumulative weight reaches half the total.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Param("weighted median needs equal-length nonempty inputs".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let half = weights.iter().sum::<f64>() / 2.0;
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= half {
            return Ok(values[i]);
        }
    }
    Ok(values[order[order.len() - 1]])
}

/// Time job `j` needs alone on a single-machine instance.
fn solo_time(inst: &Instance, j: usize) -> Result<f64> {
    let job = &inst.jobs()[j];
    match inst.family() {
        Family::Multidim if inst.dimension() == 1 && job.payload[0] >= inst.capacities()[0] => {
            Ok(job.size * job.payload[0] / inst.capacities()[0])
        }
        Family::Unrelated | Family::TreeLb if inst.dimension() == 1 => Ok(job.size / job.payload[0]),
        _ => Err(Error::Param(
            "smith_opt needs one machine: a single resource every job saturates, or one unrelated machine".into(),
        )),
    }
}

/// Optimal total weighted completion time on one machine with all jobs
/// released at 0, by Smith's ratio rule.
pub fn smith_opt(inst: &Instance) -> Result<f64> {
    if inst.jobs().iter().any(|j| j.release != 0.0) {
        return Err(Error::Param("smith_opt needs every release at 0".into()));
    }
    let mut jobs: Vec<(f64, f64)> = (0..inst.len())
        .map(|j| Ok((inst.jobs()[j].weight, solo_time(inst, j)?)))
        .collect::<Result<_>>()?;
    jobs.sort_by(|a, b| (b.0 / b.1).total_cmp(&(a.0 / a.1)));
    let mut t = 0.0;
    Ok(jobs
        .into_iter()
        .map(|(w, e)| {
            t += e;
            w * t
        })
        .sum())
}

/// Best slotted schedule for a tiny unrelated-machines instance: in every slot
/// of width `delta` each machine runs at most one job and each job uses at most
/// one machine; a job finishing inside a slot is charged the slot's end. The
/// search runs over slots keeping the cheapest cost per remaining-work vector
/// and only expands assignments that leave no usable machine idle. Since every
/// slotted schedule is feasible, the result is an upper bound on the optimum,
/// above it by at most about `n * delta * max w`.
pub fn brute_force_opt(inst: &Instance, objective: Objective, delta: f64) -> Result<f64> {
    if !inst.family().is_unrelated_like() {
        return Err(Error::UnsupportedFamily { family: inst.family().to_string(), operation: "brute_force_opt".into() });
    }
    let n = inst.len();
    if n > BRUTE_FORCE_MAX_JOBS {
        return Err(Error::Param(format!("brute force handles at most {BRUTE_FORCE_MAX_JOBS} jobs, got {n}")));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Param(format!("slot width must be positive, got {delta}")));
    }
    let jobs = inst.jobs();
    let m = inst.dimension();
    // Sequential schedule on each job's fastest machine bounds the horizon.
    let mut horizon = jobs.iter().map(|j| j.release).fold(0.0, f64::max);
    for j in jobs {
        let best = j.payload.iter().copied().fold(0.0, f64::max);
        horizon += (j.size / (best * delta)).ceil() * delta;
    }
    let slots = (horizon / delta - 1e-9).ceil() as usize;
    if slots > BRUTE_FORCE_MAX_SLOTS {
        return Err(Error::Param(format!(
            "brute force horizon needs {slots} slots of width {delta} (at most {BRUTE_FORCE_MAX_SLOTS})"
        )));
    }
    const DONE: f64 = 1e-9;
    let quantum = 1e-9;
    let key = |rem: &[f64]| rem.iter().map(|r| (r / quantum).round() as i64).collect::<Vec<i64>>();

    let start: Vec<f64> = jobs.iter().map(|j| j.size).collect();
    let mut layer: HashMap<Vec<i64>, (Vec<f64>, f64)> = HashMap::new();
    layer.insert(key(&start), (start, 0.0));
    let mut best = f64::INFINITY;
    for t in 0..slots {
        let now = t as f64 * delta;
        let end = now + delta;
        let mut next: HashMap<Vec<i64>, (Vec<f64>, f64)> = HashMap::new();
        for (rem, cost) in layer.values() {
            if *cost >= best {
                continue;
            }
            let avail: Vec<usize> = (0..n).filter(|&j| rem[j] > DONE && jobs[j].release <= now + 1e-12).collect();
            let mut assignments = Vec::new();
            assign(&avail, 0, &mut vec![None; avail.len()], &mut vec![false; m], &|a, i| jobs[a].payload[i] > 0.0, &mut assignments);
            for choice in assignments {
                let mut r = rem.clone();
                let mut c = *cost;
                for (slot, &j) in choice.iter().zip(&avail) {
                    if let Some(i) = *slot {
                        r[j] -= jobs[j].payload[i] * delta;
                        if r[j] <= DONE {
                            r[j] = 0.0;
                            let charge = match objective {
                                Objective::WeightedCompletion => end,
                                Objective::WeightedFlow => end - jobs[j].release,
                            };
                            c += jobs[j].weight * charge;
                        }
                    }
                }
                if r.iter().all(|&v| v <= DONE) {
                    best = best.min(c);
                    continue;
                }
                let k = key(&r);
                match next.get(&k) {
                    Some((_, old)) if *old <= c => {}
                    _ => {
                        next.insert(k, (r, c));
                    }
                }
            }
        }
        layer = next;
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Param("no slotted schedule finishes within the horizon".into()))
    }
}

/// Enumerate injective partial job-to-machine maps that leave no machine idle
/// while some unassigned job could use it.
fn assign(
    jobs: &[usize],
    at: usize,
    cur: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    usable: &dyn Fn(usize, usize) -> bool,
    out: &mut Vec<Vec<Option<usize>>>,
) {
    if at == jobs.len() {
        let idle_but_wanted = (0..used.len())
            .any(|i| !used[i] && jobs.iter().zip(cur.iter()).any(|(&j, c)| c.is_none() && usable(j, i)));
        if !idle_but_wanted {
            out.push(cur.clone());
        }
        return;
    }
    assign(jobs, at + 1, cur, used, usable, out);
    for i in 0..used.len() {
        if !used[i] && usable(jobs[at], i) {
            used[i] = true;
            cur[at] = Some(i);
            assign(jobs, at + 1, cur, used, usable, out);
            cur[at] = None;
            used[i] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::Job;
    use std::collections::BTreeMap;

    fn unrelated(jobs: &[(f64, f64, Vec<f64>)]) -> Instance {
        let m = jobs[0].2.len();
        let jobs = jobs
            .iter()
            .enumerate()
            .map(|(i, (w, p, s))| Job { id: i as u64, weight: *w, size: *p, release: 0.0, payload: s.clone() })
            .collect();
        Instance::new(Family::Unrelated, jobs, vec![1.0; m], BTreeMap::new()).unwrap()
    }

    #[test]
    fn median_examples() {
        assert_eq!(weighted_median(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(weighted_median(&[1.0, 2.0], &[3.0, 1.0]).unwrap(), 1.0);
        assert_eq!(weighted_median(&[5.0], &[0.3]).unwrap(), 5.0);
        assert!(weighted_median(&[], &[]).is_err());
    }

    #[test]
    fn smith_examples() {
        // both orders: (1,1) first costs 1 + 2*2 = 5, (2,1) first costs 2 + 2 = 4
        let inst = unrelated(&[(1.0, 1.0, vec![1.0]), (2.0, 1.0, vec![1.0])]);
        assert_eq!(smith_opt(&inst).unwrap(), 4.0);
        let same = unrelated(&[(2.0, 1.5, vec![1.0]), (2.0, 1.5, vec![1.0]), (2.0, 1.5, vec![1.0])]);
        assert_eq!(smith_opt(&same).unwrap(), 2.0 * (1.5 + 3.0 + 4.5));
        assert_eq!(smith_opt(&unrelated(&[(3.0, 2.0, vec![1.0])])).unwrap(), 6.0);
        assert!(smith_opt(&unrelated(&[(1.0, 1.0, vec![1.0, 1.0])])).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let one = unrelated(&[(1.0, 1.0, vec![1.0])]);
        assert!((brute_force_opt(&one, Objective::WeightedCompletion, 0.25).unwrap() - 1.0).abs() < 1e-9);
        let disjoint = unrelated(&[(1.0, 1.0, vec![1.0, 0.0]), (1.0, 1.0, vec![0.0, 1.0])]);
        assert!((brute_force_opt(&disjoint, Objective::WeightedCompletion, 0.25).unwrap() - 2.0).abs() < 1e-9);
        let spt = unrelated(&[(1.0, 1.0, vec![1.0]), (1.0, 2.0, vec![1.0])]);
        assert!((brute_force_opt(&spt, Objective::WeightedCompletion, 0.25).unwrap() - 4.0).abs() < 1e-9);
        assert!(brute_force_opt(&spt, Objective::WeightedCompletion, 0.01).is_err(), "too many slots");
    }
}
