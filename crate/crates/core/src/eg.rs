//! Eisenberg-Gale (proportional fairness) allocations over a packing polytope.
//!
//! Maximizes `sum_j w_j log x_j` subject to `x <= Q z`, `H z <= 1`, `z >= 0`
//! with a primal-dual interior-point method. With `mu_j = w_j / x_j` the
//! optimality conditions are
//!
//! ```text
//! r = H^T y - Q^T mu >= 0,   s = 1 - H z >= 0,
//! z . r = 0,   y . s = 0,   mu_j (Q z)_j = w_j,
//! ```
//!
//! and the iteration follows the central path `z . r = y . s = tau -> 0`.
//! Each Newton step reduces to a positive definite system in `(mu, y)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{Family, Instance, JobId};
use crate::polytope::{PackingPolytope, RowKey};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
const RATE_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Alive jobs, in the polytope's column order.
    pub jobs: Vec<JobId>,
    pub rates: Vec<f64>,
    /// One dual per polytope row.
    pub duals: Vec<f64>,
    /// Auxiliary variables with `rates <= Q z` and `H z <= 1`.
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Some rate fell below `1e-300` and was raised to it.
    pub clamped: bool,
}

impl Allocation {
    pub fn rate(&self, id: JobId) -> Option<f64> {
        self.jobs.iter().position(|&j| j == id).map(|i| self.rates[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max_d (H_d z - 1)^+`.
    pub primal: f64,
    /// `max_d |y_d (H_d z - 1)|`; scales with the weights, so certification compares it with `tol * max(1, W)`.
    pub complementary: f64,
    /// Relative stationarity. Direct form: `max_j |w_j/x_j - B_.j y| / (w_j/x_j)`.
    /// Lifted form: the larger of `max_k (Q^T mu - H^T y)_k^+ / (Q^T mu)_k` and
    /// `sum_k z_k (H^T y - Q^T mu)_k / W`, with `mu = w / x`.
    pub stationarity: f64,
    /// `|sum_d y_d - W|`.
    pub dual_gap: f64,
    /// Total weight `W` of the alive jobs.
    pub total_weight: f64,
}

impl KktReport {
    /// All residuals within `tol`; complementarity and the dual-sum gap scale
    /// with the weights and are measured relative to `max(1, W)`.
    pub fn certified(&self, tol: f64) -> bool {
        let w = self.total_weight.max(1.0);
        self.primal <= tol
            && self.complementary <= tol * w
            && self.stationarity <= tol
            && self.dual_gap <= tol * self.total_weight.max(1.0)
    }

    pub fn worst(&self) -> f64 {
        self.primal
            .max(self.complementary / self.total_weight.max(1.0))
            .max(self.stationarity)
            .max(self.dual_gap / self.total_weight.max(1.0))
    }
}

/// Weights of the polytope's jobs, looked up in `inst`.
pub fn weights_for(inst: &Instance, p: &PackingPolytope) -> Vec<f64> {
    p.jobs().iter().map(|&id| inst.job(id).expect("job of polytope").weight).collect()
}

pub fn solve_eg(p: &PackingPolytope, weights: &[f64], tol: f64, max_iters: usize) -> Result<Allocation> {
    let n = p.num_jobs();
    if weights.len() != n {
        return Err(Error::Dimension { expected: n, got: weights.len() });
    }
    for (j, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidJob { job: p.jobs()[j], reason: format!("weight must be positive, got {w}") });
        }
    }
    if !(tol > 0.0) {
        return Err(Error::Param(format!("tolerance must be positive, got {tol}")));
    }
    if n == 0 {
        return Ok(Allocation {
            jobs: Vec::new(),
            rates: Vec::new(),
            duals: vec![0.0; p.num_rows()],
            z: vec![0.0; p.num_z()],
            objective: 0.0,
            iterations: 0,
            clamped: false,
        });
    }
    if n == 1 {
        if let Some(a) = solve_single(p, weights[0], tol) {
            return Ok(a);
        }
    }
    Ipm::new(p, weights).run(tol, max_iters)
}

/// One alive job: it takes its best auxiliary variable to the tightest row, and
/// that row carries the whole dual when it dominates the job's other options.
fn solve_single(p: &PackingPolytope, w: f64, tol: f64) -> Option<Allocation> {
    let (mut best_k, mut best_rate) = (0, 0.0);
    for &(k, q) in p.q_job(0) {
        let hmax = p.h_z(k).iter().map(|t| t.1).fold(0.0, f64::max);
        if q / hmax > best_rate {
            best_rate = q / hmax;
            best_k = k;
        }
    }
    let hmax = p.h_z(best_k).iter().map(|t| t.1).fold(0.0, f64::max);
    let mut z = vec![0.0; p.num_z()];
    z[best_k] = 1.0 / hmax;
    let x = p.q_times(&z)[0];
    let binding = p.h_z(best_k).iter().filter(|t| t.1 == hmax).map(|t| t.0).find(|&d| {
        p.q_job(0).iter().all(|&(k, q)| {
            let h = p.h_z(k).iter().find(|t| t.0 == d).map_or(0.0, |t| t.1);
            h * x >= q * (1.0 - 1e-15)
        })
    })?;
    let mut y = vec![0.0; p.num_rows()];
    y[binding] = w;
    let a = Allocation {
        jobs: p.jobs().to_vec(),
        rates: vec![x],
        duals: y,
        z,
        objective: w * x.ln(),
        iterations: 0,
        clamped: false,
    };
    let rep = kkt_residuals(p, &[w], &a.rates, &a.duals, Some(&a.z)).ok()?;
    rep.certified(tol).then_some(a)
}

struct Ipm<'a> {
    p: &'a PackingPolytope,
    w: Vec<f64>,
    mu: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    s: Vec<f64>,
}

impl<'a> Ipm<'a> {
    fn new(p: &'a PackingPolytope, w: &[f64]) -> Self {
        let (nd, nk) = (p.num_rows(), p.num_z());
        let max_row_sum = (0..nd).map(|d| p.h_row(d).iter().map(|t| t.1).sum::<f64>()).fold(0.0, f64::max);
        let z = vec![0.5 / max_row_sum; nk];
        let s: Vec<f64> = p.h_times(&z).iter().map(|v| 1.0 - v).collect();
        let x = p.q_times(&z);
        let mu: Vec<f64> = w.iter().zip(&x).map(|(w, x)| w / x).collect();
        let qtmu = p.qt_times(&mu);
        let c = (0..nk)
            .map(|k| qtmu[k] / p.h_z(k).iter().map(|t| t.1).sum::<f64>())
            .fold(0.0, f64::max);
        let y = vec![2.0 * c + f64::MIN_POSITIVE; nd];
        let hty = p.ht_times(&y);
        let r: Vec<f64> = (0..nk).map(|k| hty[k] - qtmu[k]).collect();
        Self { p, w: w.to_vec(), mu, y, z, r, s }
    }

    fn allocation(&self, iterations: usize) -> Allocation {
        let p = self.p;
        let mut z = self.z.clone();
        let scale = p.h_times(&z).into_iter().fold(1.0, f64::max);
        z.iter_mut().for_each(|v| *v /= scale);
        let mut clamped = false;
        let rates: Vec<f64> = p
            .q_times(&z)
            .into_iter()
            .map(|x| {
                if x < RATE_FLOOR {
                    clamped = true;
                    RATE_FLOOR
                } else {
                    x
                }
            })
            .collect();
        let objective = self.w.iter().zip(&rates).map(|(w, x)| w * x.ln()).sum();
        Allocation {
            jobs: p.jobs().to_vec(),
            rates,
            duals: self.y.clone(),
            z,
            objective,
            iterations,
            clamped,
        }
    }

    fn run(mut self, tol: f64, max_iters: usize) -> Result<Allocation> {
        let p = self.p;
        let (n, nd, nk) = (p.num_jobs(), p.num_rows(), p.num_z());
        let m = n + nd;
        let mut best: Option<(f64, Allocation, KktReport)> = None;
        let mut since_best = 0;
        let mut sigma: f64 = 0.1;

        for iter in 0..=max_iters {
            let alloc = self.allocation(iter);
            let rep = kkt_residuals(p, &self.w, &alloc.rates, &alloc.duals, Some(&alloc.z))?;
            if rep.certified(tol) {
                return Ok(alloc);
            }
            let merit = rep.worst();
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, alloc, rep));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if iter == max_iters || since_best > 60 {
                break;
            }

            let x = p.q_times(&self.z);
            let hty = p.ht_times(&self.y);
            let qtmu = p.qt_times(&self.mu);
            let hz = p.h_times(&self.z);
            let r1: Vec<f64> = (0..nk).map(|k| hty[k] - qtmu[k] - self.r[k]).collect();
            let r2: Vec<f64> = (0..nd).map(|d| 1.0 - hz[d] - self.s[d]).collect();
            let r5: Vec<f64> = (0..n).map(|j| self.mu[j] * x[j] - self.w[j]).collect();
            let gap: f64 = (0..nk).map(|k| self.z[k] * self.r[k]).sum::<f64>()
                + (0..nd).map(|d| self.y[d] * self.s[d]).sum::<f64>();
            let tau = sigma * gap / (nk + nd) as f64;
            let r3: Vec<f64> = (0..nk).map(|k| self.z[k] * self.r[k] - tau).collect();
            let r4: Vec<f64> = (0..nd).map(|d| self.y[d] * self.s[d] - tau).collect();
            let theta: Vec<f64> = (0..nk).map(|k| self.z[k] / self.r[k]).collect();
            let g1: Vec<f64> = (0..nk).map(|k| -r1[k] - r3[k] / self.z[k]).collect();

            // Normal matrix diag(x/mu, s/y) + A Theta A^T with A = [-Q; H].
            let mut mat = DMatrix::<f64>::zeros(m, m);
            let mut rhs = DVector::<f64>::zeros(m);
            for j in 0..n {
                mat[(j, j)] = x[j] / self.mu[j];
                rhs[j] = -r5[j] / self.mu[j];
            }
            for d in 0..nd {
                mat[(n + d, n + d)] = self.s[d] / self.y[d];
                rhs[n + d] = -r2[d] - r4[d] / self.y[d];
            }
            let mut col: Vec<(usize, f64)> = Vec::new();
            for k in 0..nk {
                col.clear();
                col.extend(p.q_z(k).iter().map(|&(j, q)| (j, -q)));
                col.extend(p.h_z(k).iter().map(|&(d, h)| (n + d, h)));
                for &(a, va) in &col {
                    rhs[a] += va * theta[k] * g1[k];
                    for &(b, vb) in &col {
                        mat[(a, b)] += theta[k] * va * vb;
                    }
                }
            }
            let Some(sol) = solve_normal(mat, &rhs) else { break };
            let dmu: Vec<f64> = (0..n).map(|j| sol[j]).collect();
            let dy: Vec<f64> = (0..nd).map(|d| sol[n + d]).collect();
            let ht_dy = p.ht_times(&dy);
            let qt_dmu = p.qt_times(&dmu);
            let dz: Vec<f64> = (0..nk).map(|k| theta[k] * (g1[k] - ht_dy[k] + qt_dmu[k])).collect();
            let dr: Vec<f64> = (0..nk).map(|k| (-r3[k] - self.r[k] * dz[k]) / self.z[k]).collect();
            let ds: Vec<f64> = (0..nd).map(|d| (-r4[d] - self.s[d] * dy[d]) / self.y[d]).collect();

            let mut alpha: f64 = 1.0;
            for (v, dv) in [(&self.mu, &dmu), (&self.y, &dy), (&self.z, &dz), (&self.r, &dr), (&self.s, &ds)] {
                for (a, b) in v.iter().zip(dv.iter()) {
                    if *b < 0.0 {
                        alpha = alpha.min(-0.995 * a / b);
                    }
                }
            }
            if !alpha.is_finite() || alpha <= 0.0 {
                break;
            }
            let step = |v: &mut Vec<f64>, dv: &[f64]| {
                v.iter_mut().zip(dv).for_each(|(a, b)| *a += alpha * b);
            };
            step(&mut self.mu, &dmu);
            step(&mut self.y, &dy);
            step(&mut self.z, &dz);
            step(&mut self.r, &dr);
            step(&mut self.s, &ds);
            sigma = if alpha < 0.5 { 0.5 } else { 0.1 };
        }

        let (_, best, rep) = best.expect("at least one iterate");
        Err(Error::NonConvergence {
            iterations: best.iterations,
            stationarity: rep.stationarity,
            dual_gap: rep.dual_gap,
            best: Box::new(best),
        })
    }
}

/// Cholesky solve, retried with growing diagonal regularization and finally by LU.
fn solve_normal(mat: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = mat.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let m = mat.nrows();
    let diag = (0..m).map(|i| mat[(i, i)].abs()).fold(0.0, f64::max);
    for rel in [1e-14, 1e-12, 1e-10] {
        let mut bumped = mat.clone();
        for i in 0..m {
            bumped[(i, i)] += rel * diag;
        }
        if let Some(ch) = bumped.cholesky() {
            return Some(ch.solve(rhs));
        }
    }
    mat.lu().solve(rhs).filter(|v| v.iter().all(|x| x.is_finite()))
}

/// KKT residuals of `(x, y)` (and witness `z` for lifted polytopes; found by an
/// LP when omitted).
pub fn kkt_residuals(
    p: &PackingPolytope,
    weights: &[f64],
    x: &[f64],
    y: &[f64],
    z: Option<&[f64]>,
) -> Result<KktReport> {
    let n = p.num_jobs();
    for (len, expected) in [(weights.len(), n), (x.len(), n), (y.len(), p.num_rows())] {
        if len != expected {
            return Err(Error::Dimension { expected, got: len });
        }
    }
    let z: Vec<f64> = match z {
        Some(z) if z.len() != p.num_z() => return Err(Error::Dimension { expected: p.num_z(), got: z.len() }),
        Some(z) => z.to_vec(),
        None if p.is_direct() => x.to_vec(),
        None => p.check_feasible(x, f64::INFINITY)?.witness,
    };
    let total_weight: f64 = weights.iter().sum();
    let hz = p.h_times(&z);
    let primal = hz.iter().map(|v| (v - 1.0).max(0.0)).fold(0.0, f64::max);
    let complementary = hz.iter().zip(y).map(|(v, yd)| (yd * (v - 1.0)).abs()).fold(0.0, f64::max);
    let dual_gap = (y.iter().sum::<f64>() - total_weight).abs();
    let hty = p.ht_times(y);
    let stationarity = if p.is_direct() {
        (0..n)
            .map(|j| {
                let price = weights[j] / x[j];
                (price - hty[j]).abs() / price
            })
            .fold(0.0, f64::max)
    } else {
        let mu: Vec<f64> = (0..n).map(|j| weights[j] / x[j]).collect();
        let qtmu = p.qt_times(&mu);
        let infeasible = (0..p.num_z())
            .filter(|&k| qtmu[k] > 0.0)
            .map(|k| ((qtmu[k] - hty[k]) / qtmu[k]).max(0.0))
            .fold(0.0, f64::max);
        let slack: f64 = (0..p.num_z()).map(|k| z[k] * (hty[k] - qtmu[k])).sum::<f64>();
        // x <= Qz may be loose; the unused part counts against stationarity too.
        let qz = p.q_times(&z);
        let cover: f64 = (0..n).map(|j| mu[j] * (qz[j] - x[j])).sum::<f64>();
        infeasible.max(slack.abs() / total_weight.max(f64::MIN_POSITIVE)).max(cover.abs() / total_weight)
    };
    Ok(KktReport { primal, complementary, stationarity, dual_gap, total_weight })
}

/// Per-resource prices of a multidim allocation and how well they explain it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// `lambda_d = y_d / R_d` per instance resource (0 for rows without alive demand).
    pub prices: Vec<f64>,
    /// Dual of each job's `x_j <= 1` row, in the allocation's job order.
    pub cap_prices: Vec<f64>,
    /// `|x_j (sum_d lambda_d f_jd + psi_j) - w_j|` per job.
    pub budget_residuals: Vec<f64>,
    pub max_budget_residual: f64,
    /// Fraction of each resource in use.
    pub utilization: Vec<f64>,
    /// `max_d lambda_d R_d (1 - utilization_d)`: priced capacity left unused.
    pub clearing_residual: f64,
}

impl EquilibriumReport {
    pub fn market_clears(&self, tol: f64) -> bool {
        self.clearing_residual <= tol
    }
}

pub fn equilibrium_prices(inst: &Instance, p: &PackingPolytope, a: &Allocation) -> Result<EquilibriumReport> {
    if inst.family() != Family::Multidim || p.family() != Some(Family::Multidim) {
        return Err(Error::UnsupportedFamily {
            family: inst.family().to_string(),
            operation: "equilibrium_prices".into(),
        });
    }
    if a.duals.len() != p.num_rows() || a.rates.len() != p.num_jobs() {
        return Err(Error::Dimension { expected: p.num_rows(), got: a.duals.len() });
    }
    let caps = inst.capacities();
    let mut prices = vec![0.0; caps.len()];
    let mut cap_prices = vec![0.0; p.num_jobs()];
    for (row, key) in p.rows().iter().enumerate() {
        match *key {
            RowKey::Resource(d) => prices[d] = a.duals[row] / caps[d],
            RowKey::JobCap(id) => {
                let j = p.job_index(id).expect("cap row of alive job");
                cap_prices[j] = a.duals[row];
            }
            _ => unreachable!("multidim rows"),
        }
    }
    let mut utilization = vec![0.0; caps.len()];
    let mut budget_residuals = Vec::with_capacity(p.num_jobs());
    for (j, &id) in p.jobs().iter().enumerate() {
        let job = inst.job(id).expect("alive job");
        let unit_price: f64 = job.payload.iter().zip(&prices).map(|(f, l)| f * l).sum::<f64>() + cap_prices[j];
        budget_residuals.push((a.rates[j] * unit_price - job.weight).abs());
        for (d, f) in job.payload.iter().enumerate() {
            utilization[d] += a.rates[j] * f / caps[d];
        }
    }
    let clearing_residual = (0..caps.len())
        .map(|d| prices[d] * caps[d] * (1.0 - utilization[d]).max(0.0))
        .fold(0.0, f64::max);
    let max_budget_residual = budget_residuals.iter().copied().fold(0.0, f64::max);
    Ok(EquilibriumReport { prices, cap_prices, budget_residuals, max_budget_residual, utilization, clearing_residual })
}
