//! Rate allocators: proportional fairness and the max-min / DRF baselines.

use crate::blass::{Blass, BlassConfig};
use crate::eg::{kkt_residuals, solve_eg, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::engine::{EventSet, Scheduler, SchedulerDecision, SchedulerView};
use crate::error::{Error, Result};
use crate::instances::Family;
use crate::lp::{Cmp, LinearProgram};
use crate::polytope::PackingPolytope;

/// Proportional fairness: the weighted log-utility maximizer over the alive jobs.
#[derive(Clone, Debug)]
pub struct Pf {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for Pf {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iters: DEFAULT_MAX_ITERS }
    }
}

pub fn pf_allocate(view: &SchedulerView<'_>, tol: f64, max_iters: usize) -> Result<SchedulerDecision> {
    let p = view.polytope()?;
    let w = view.weights();
    let a = solve_eg(&p, &w, tol, max_iters)?;
    let kkt = kkt_residuals(&p, &w, &a.rates, &a.duals, Some(&a.z))?;
    Ok(SchedulerDecision { rates: a.rates, duals: Some(a.duals), z: Some(a.z), machine_of: None, kkt: Some(kkt) })
}

impl Scheduler for Pf {
    fn name(&self) -> &str {
        "pf"
    }

    fn supports(&self, _family: Family) -> bool {
        true
    }

    fn decide(&mut self, view: &SchedulerView<'_>, _events: &EventSet) -> Result<SchedulerDecision> {
        pf_allocate(view, self.tol, self.max_iters)
    }
}

/// Progressive filling on a direct-form polytope: unfrozen jobs grow as
/// `x_j = growth_j * t`; a job freezes once a row containing it saturates.
pub fn progressive_fill(p: &PackingPolytope, growth: &[f64]) -> Result<Vec<f64>> {
    if !p.is_direct() {
        return Err(Error::Param("progressive_fill needs a direct-form polytope".into()));
    }
    let n = p.num_jobs();
    if growth.len() != n {
        return Err(Error::Dimension { expected: n, got: growth.len() });
    }
    let mut x = vec![0.0; n];
    let mut active: Vec<bool> = growth.iter().map(|&g| g > 0.0).collect();
    while active.iter().any(|&a| a) {
        let mut step = f64::INFINITY;
        for d in 0..p.num_rows() {
            let load: f64 = p.h_row(d).iter().map(|&(j, c)| c * x[j]).sum();
            let rate: f64 = p.h_row(d).iter().filter(|t| active[t.0]).map(|&(j, c)| c * growth[j]).sum();
            if rate > 0.0 {
                step = step.min(((1.0 - load) / rate).max(0.0));
            }
        }
        if !step.is_finite() {
            return Err(Error::Param("progressive filling is unbounded".into()));
        }
        for j in 0..n {
            if active[j] {
                x[j] += growth[j] * step;
            }
        }
        for d in 0..p.num_rows() {
            let load: f64 = p.h_row(d).iter().map(|&(j, c)| c * x[j]).sum();
            let touches_active = p.h_row(d).iter().any(|t| active[t.0]);
            if touches_active && load >= 1.0 - 1e-12 {
                for &(j, _) in p.h_row(d) {
                    active[j] = false;
                }
            }
        }
    }
    // Rounding can leave a row a hair above 1.
    let worst = (0..p.num_rows())
        .map(|d| p.h_row(d).iter().map(|&(j, c)| c * x[j]).sum::<f64>())
        .fold(1.0, f64::max);
    x.iter_mut().for_each(|v| *v /= worst);
    Ok(x)
}

/// Progressive filling on a lifted polytope by linear programming: raise all
/// unfrozen rates together as far as possible, then freeze every job that
/// cannot grow further on its own.
pub fn progressive_fill_lifted(p: &PackingPolytope, growth: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p.num_jobs();
    if growth.len() != n {
        return Err(Error::Dimension { expected: n, got: growth.len() });
    }
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    let relax = 1.0 - 1e-9;
    while fixed.iter().any(Option::is_none) {
        // max t: Q z >= growth * t on unfrozen jobs, >= fixed elsewhere, H z <= 1
        let mut lp = LinearProgram::maximize();
        let zv: Vec<usize> = (0..p.num_z()).map(|_| lp.var(0.0, 0.0, f64::INFINITY)).collect();
        let t = lp.var(1.0, 0.0, f64::INFINITY);
        add_packing(&mut lp, p, &zv);
        for j in 0..n {
            let mut terms: Vec<(usize, f64)> = p.q_job(j).iter().map(|&(k, c)| (zv[k], c)).collect();
            match fixed[j] {
                Some(v) => lp.constraint(terms, Cmp::Ge, v * relax),
                None => {
                    terms.push((t, -growth[j]));
                    lp.constraint(terms, Cmp::Ge, 0.0);
                }
            }
        }
        let (level, _) = lp.solve()?;
        let mut froze_any = false;
        let open: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
        let mut frozen_now = Vec::new();
        for &j in &open {
            // max (Q z)_j with every other job held at its level
            let mut lp = LinearProgram::maximize();
            let zv: Vec<usize> = (0..p.num_z()).map(|_| lp.var(0.0, 0.0, f64::INFINITY)).collect();
            let u = lp.var(1.0, 0.0, f64::INFINITY);
            add_packing(&mut lp, p, &zv);
            for i in 0..n {
                let mut terms: Vec<(usize, f64)> = p.q_job(i).iter().map(|&(k, c)| (zv[k], c)).collect();
                if i == j {
                    terms.push((u, -1.0));
                    lp.constraint(terms, Cmp::Ge, 0.0);
                } else {
                    let v = fixed[i].unwrap_or(growth[i] * level);
                    lp.constraint(terms, Cmp::Ge, v * relax);
                }
            }
            let (best, _) = lp.solve()?;
            if best <= growth[j] * level * (1.0 + 1e-7) + 1e-12 {
                frozen_now.push(j);
            }
        }
        for j in frozen_now {
            fixed[j] = Some(growth[j] * level);
            froze_any = true;
        }
        if !froze_any {
            // numerical stalemate: freeze everything at the common level
            for j in open {
                fixed[j] = Some(growth[j] * level);
            }
        }
    }
    let mut x: Vec<f64> = fixed.into_iter().map(Option::unwrap).collect();
    let rep = p.check_feasible(&x, 0.0)?;
    let scale = (1.0 + rep.max_violation).max(1.0);
    x.iter_mut().for_each(|v| *v /= scale);
    let mut z = rep.witness;
    z.iter_mut().for_each(|v| *v /= scale);
    Ok((x, z))
}

fn add_packing(lp: &mut LinearProgram, p: &PackingPolytope, zv: &[usize]) {
    for d in 0..p.num_rows() {
        lp.constraint(p.h_row(d).iter().map(|&(k, c)| (zv[k], c)).collect(), Cmp::Le, 1.0);
    }
}

/// Max-min fairness (Round-Robin in one dimension). Unweighted.
#[derive(Clone, Debug, Default)]
pub struct MaxMin;

pub fn maxmin_allocate(view: &SchedulerView<'_>) -> Result<SchedulerDecision> {
    let p = view.polytope()?;
    if p.is_direct() {
        let growth: Vec<f64> = if view.capacities().len() == 1 {
            // one resource: equalize the share x_j f_j
            view.alive.iter().map(|j| 1.0 / j.payload[0]).collect()
        } else {
            vec![1.0; p.num_jobs()]
        };
        let x = progressive_fill(&p, &growth)?;
        Ok(SchedulerDecision { z: Some(x.clone()), rates: x, ..Default::default() })
    } else {
        let (x, z) = progressive_fill_lifted(&p, &vec![1.0; p.num_jobs()])?;
        Ok(SchedulerDecision { rates: x, z: Some(z), ..Default::default() })
    }
}

impl Scheduler for MaxMin {
    fn name(&self) -> &str {
        "maxmin"
    }

    fn supports(&self, _family: Family) -> bool {
        true
    }

    fn decide(&mut self, view: &SchedulerView<'_>, _events: &EventSet) -> Result<SchedulerDecision> {
        maxmin_allocate(view)
    }
}

/// Dominant Resource Fairness: equalize `max_d x_j f_jd / R_d`. Unweighted, multidim only.
#[derive(Clone, Debug, Default)]
pub struct Drf;

pub fn drf_allocate(view: &SchedulerView<'_>) -> Result<SchedulerDecision> {
    if view.family() != Family::Multidim {
        return Err(Error::UnsupportedFamily { family: view.family().to_string(), operation: "drf".into() });
    }
    let p = view.polytope()?;
    let caps = view.capacities();
    let growth: Vec<f64> = view
        .alive
        .iter()
        .map(|j| {
            let dominant = j.payload.iter().zip(caps).map(|(f, r)| f / r).fold(0.0, f64::max);
            1.0 / dominant
        })
        .collect();
    let x = progressive_fill(&p, &growth)?;
    Ok(SchedulerDecision { z: Some(x.clone()), rates: x, ..Default::default() })
}

impl Scheduler for Drf {
    fn name(&self) -> &str {
        "drf"
    }

    fn supports(&self, family: Family) -> bool {
        family == Family::Multidim
    }

    fn decide(&mut self, view: &SchedulerView<'_>, _events: &EventSet) -> Result<SchedulerDecision> {
        drf_allocate(view)
    }
}

pub const SCHEDULER_NAMES: [&str; 4] = ["pf", "maxmin", "drf", "blass"];

/// Scheduler by CLI name.
pub fn scheduler_by_name(name: &str, blass: BlassConfig) -> Result<Box<dyn Scheduler>> {
    Ok(match name {
        "pf" => Box::new(Pf::default()),
        "maxmin" => Box::new(MaxMin),
        "drf" => Box::new(Drf),
        "blass" => Box::new(Blass::new(blass)),
        other => return Err(Error::Param(format!("unknown scheduler `{other}` (expected one of {SCHEDULER_NAMES:?})"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SchedulerView;
    use crate::instances::{Instance, Job};
    use std::collections::BTreeMap;

    fn multidim(payloads: &[Vec<f64>], weights: &[f64], caps: Vec<f64>) -> Instance {
        let jobs = payloads
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (f, &w))| Job { id: i as u64, weight: w, size: 1.0, release: 0.0, payload: f.clone() })
            .collect();
        Instance::new(Family::Multidim, jobs, caps, BTreeMap::new()).unwrap()
    }

    fn view(inst: &Instance) -> SchedulerView<'_> {
        SchedulerView::new(inst, 0.0, 1.0, &(0..inst.len()).collect::<Vec<_>>())
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn pf_single_row_and_single_machine() {
        let inst = multidim(&[vec![1.0], vec![1.0]], &[1.0, 1.0], vec![1.0]);
        let d = pf_allocate(&view(&inst), 1e-10, 1000).unwrap();
        assert!(close(&d.rates, &[0.5, 0.5], 1e-8));
        assert!(d.kkt.unwrap().certified(1e-8));
        let jobs = (0..2).map(|i| Job { id: i, weight: 1.0, size: 1.0, release: 0.0, payload: vec![1.0] }).collect();
        let inst = Instance::new(Family::Unrelated, jobs, vec![1.0], BTreeMap::new()).unwrap();
        let d = pf_allocate(&view(&inst), 1e-10, 1000).unwrap();
        assert!(close(&d.rates, &[0.5, 0.5], 1e-8));
    }

    #[test]
    fn pf_ignores_uniform_weight_scaling() {
        let payloads = [vec![1.0, 0.2], vec![0.2, 1.0], vec![0.5, 0.5]];
        let a = pf_allocate(&view(&multidim(&payloads, &[1.0, 2.0, 3.0], vec![1.0, 1.0])), DEFAULT_TOL, 1000).unwrap();
        let b = pf_allocate(&view(&multidim(&payloads, &[7.0, 14.0, 21.0], vec![1.0, 1.0])), DEFAULT_TOL, 1000).unwrap();
        assert!(close(&a.rates, &b.rates, 1e-7));
    }

    /// Lexicographic max-min over a grid: the best sorted rate vector.
    fn grid_maxmin(feasible: impl Fn(&[f64]) -> bool, n: usize, step: f64) -> Vec<f64> {
        let k = (1.0 / step).round() as usize;
        let mut best: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut idx = vec![0usize; n];
        loop {
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
            if feasible(&x) {
                let mut sorted = x.clone();
                sorted.sort_by(f64::total_cmp);
                if best.as_ref().is_none_or(|(b, _)| sorted > *b) {
                    best = Some((sorted, x));
                }
            }
            let mut c = 0;
            while c < n && idx[c] == k {
                idx[c] = 0;
                c += 1;
            }
            if c == n {
                break;
            }
            idx[c] += 1;
        }
        best.unwrap().1
    }

    #[test]
    fn maxmin_examples() {
        let inst = multidim(&[vec![1.0], vec![1.0]], &[1.0, 1.0], vec![1.0]);
        assert!(close(&maxmin_allocate(&view(&inst)).unwrap().rates, &[0.5, 0.5], 1e-12));
        // job 0 is capped at 0.2 by a private resource
        let inst = multidim(&[vec![1.0, 5.0], vec![1.0, 0.0], vec![1.0, 0.0]], &[1.0; 3], vec![1.0, 1.0]);
        let x = maxmin_allocate(&view(&inst)).unwrap().rates;
        assert!(close(&x, &[0.2, 0.4, 0.4], 1e-12));
        let oracle = grid_maxmin(|x| x[0] + x[1] + x[2] <= 1.0 + 1e-12 && 5.0 * x[0] <= 1.0 + 1e-12, 3, 0.02);
        assert!(close(&x, &oracle, 1e-9), "{oracle:?}");
        let inst = multidim(&[vec![0.25]], &[1.0], vec![1.0]);
        assert!(close(&maxmin_allocate(&view(&inst)).unwrap().rates, &[1.0], 1e-12));
    }

    #[test]
    fn maxmin_lifted_matches_equal_sharing() {
        let jobs = (0..4).map(|i| Job { id: i, weight: 1.0, size: 1.0, release: 0.0, payload: vec![2.0, 1.0, 1.0, 1.0] }).collect();
        let inst = Instance::new(Family::Unrelated, jobs, vec![1.0; 4], BTreeMap::new()).unwrap();
        let x = maxmin_allocate(&view(&inst)).unwrap().rates;
        assert!(close(&x, &[1.25; 4], 1e-7), "{x:?}");
    }

    #[test]
    fn drf_examples() {
        let inst = multidim(&[vec![1.0], vec![1.0]], &[1.0, 1.0], vec![1.0]);
        assert!(close(&drf_allocate(&view(&inst)).unwrap().rates, &[0.5, 0.5], 1e-12));
        let f = [vec![1.0, 4.0], vec![3.0, 1.0]];
        let caps = [3.0, 6.0];
        let x = drf_allocate(&view(&multidim(&f, &[1.0, 1.0], caps.to_vec()))).unwrap().rates;
        // bisection on the common dominant share until a resource or a cap saturates
        let dom: Vec<f64> = f.iter().map(|fj| fj.iter().zip(&caps).map(|(a, r)| a / r).fold(0.0, f64::max)).collect();
        let fits = |share: f64| {
            let x: Vec<f64> = dom.iter().map(|d| share / d).collect();
            x.iter().all(|&v| v <= 1.0) && (0..2).all(|d| x[0] * f[0][d] + x[1] * f[1][d] <= caps[d])
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(close(&x, &[lo / dom[0], lo / dom[1]], 1e-9), "{x:?}");
        assert!(close(&x, &[1.0, 2.0 / 3.0], 1e-9));
        let single = multidim(&[vec![0.5, 0.25]], &[1.0], vec![1.0, 1.0]);
        assert!(close(&drf_allocate(&view(&single)).unwrap().rates, &[1.0], 1e-12));
    }

    #[test]
    fn drf_rejects_other_families() {
        let jobs = vec![Job { id: 0, weight: 1.0, size: 1.0, release: 0.0, payload: vec![1.0] }];
        let inst = Instance::new(Family::Unrelated, jobs, vec![1.0], BTreeMap::new()).unwrap();
        assert!(matches!(drf_allocate(&view(&inst)), Err(Error::UnsupportedFamily { .. })));
    }

    #[test]
    fn names_resolve() {
        for name in SCHEDULER_NAMES {
            assert_eq!(scheduler_by_name(name, BlassConfig::default()).unwrap().name(), name);
        }
        assert!(scheduler_by_name("srpt", BlassConfig::default()).is_err());
    }
}
