//! Packing polytopes over the alive jobs, in lifted form `x <= Q z`, `H z <= 1`.
//!
//! Multidim instances use the direct form (`Q = I`, so `z` is `x` itself and
//! `H` is the row-normalized demand matrix plus singleton rows). The other
//! families keep their auxiliary variables: job-machine shares for unrelated
//! machines, page shares for broadcast, feasible sets for all-or-nothing.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{Family, Instance, JobId};
use crate::lp::{Cmp, LinearProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKey {
    /// `sum_j x_j f_jd / R_d <= 1`.
    Resource(usize),
    /// `x_j <= 1`.
    JobCap(JobId),
    /// A machine runs at most one job at a time.
    Machine(usize),
    /// A job occupies at most one machine at a time.
    JobShare(JobId),
    /// The server broadcasts at most one page at a time.
    Broadcast,
    /// All-or-nothing: one feasible set is scheduled at a time.
    Schedule,
    /// Row of a hand-written matrix.
    Explicit(usize),
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowKey::Resource(d) => write!(f, "resource[{d}]"),
            RowKey::JobCap(j) => write!(f, "cap[{j}]"),
            RowKey::Machine(i) => write!(f, "machine[{i}]"),
            RowKey::JobShare(j) => write!(f, "share[{j}]"),
            RowKey::Broadcast => write!(f, "broadcast"),
            RowKey::Schedule => write!(f, "schedule"),
            RowKey::Explicit(d) => write!(f, "row[{d}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZKey {
    /// Direct form: the job's own rate.
    Job(JobId),
    /// Share of machine `machine` given to `job`.
    Assign { machine: usize, job: JobId },
    /// Share of time page `i` is broadcast.
    Page(usize),
    /// Share of time a feasible set (bitmask over instance job positions) runs.
    Set(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackingPolytope {
    family: Option<Family>,
    jobs: Vec<JobId>,
    rows: Vec<RowKey>,
    zkeys: Vec<ZKey>,
    direct: bool,
    /// Per job: `(z index, Q_jk)`.
    q_by_job: Vec<Vec<(usize, f64)>>,
    /// Per z: `(job index, Q_jk)`.
    q_by_z: Vec<Vec<(usize, f64)>>,
    /// Per z: `(row index, H_dk)`.
    h_by_z: Vec<Vec<(usize, f64)>>,
    /// Per row: `(z index, H_dk)`.
    h_by_row: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    /// `max_d (H_d z - 1)` at the best witness (for direct form, `max_d (B_d x - 1)`).
    pub max_violation: f64,
    pub violated_rows: Vec<RowKey>,
    pub feasible: bool,
    /// Witness `z` with `x <= Q z` (equals `x` in direct form).
    pub witness: Vec<f64>,
}

struct Builder {
    jobs: Vec<JobId>,
    rows: Vec<RowKey>,
    zkeys: Vec<ZKey>,
    q: Vec<(usize, usize, f64)>,
    h: Vec<(usize, usize, f64)>,
}

impl Builder {
    fn new(jobs: Vec<JobId>) -> Self {
        Self { jobs, rows: Vec::new(), zkeys: Vec::new(), q: Vec::new(), h: Vec::new() }
    }

    fn row(&mut self, key: RowKey) -> usize {
        self.rows.push(key);
        self.rows.len() - 1
    }

    fn z(&mut self, key: ZKey) -> usize {
        self.zkeys.push(key);
        self.zkeys.len() - 1
    }

    fn finish(self, family: Option<Family>, direct: bool) -> Result<PackingPolytope> {
        let nj = self.jobs.len();
        let nz = self.zkeys.len();
        let mut q_by_job = vec![Vec::new(); nj];
        let mut q_by_z = vec![Vec::new(); nz];
        for &(j, k, c) in &self.q {
            if c > 0.0 {
                q_by_job[j].push((k, c));
                q_by_z[k].push((j, c));
            }
        }
        let mut h_by_z = vec![Vec::new(); nz];
        let mut h_by_row = vec![Vec::new(); self.rows.len()];
        for &(d, k, c) in &self.h {
            if c < 0.0 || !c.is_finite() {
                return Err(Error::InvalidInstance(format!("negative or non-finite coefficient {c}")));
            }
            if c > 0.0 {
                h_by_z[k].push((d, c));
                h_by_row[d].push((k, c));
            }
        }
        for (j, col) in q_by_job.iter().enumerate() {
            let usable = col.iter().any(|&(k, _)| !h_by_z[k].is_empty());
            if col.is_empty() || (!usable && direct) {
                return Err(Error::Unprocessable(self.jobs[j]));
            }
        }
        for (k, col) in h_by_z.iter().enumerate() {
            if col.is_empty() {
                return Err(Error::InvalidInstance(format!("auxiliary variable {:?} is unbounded", self.zkeys[k])));
            }
        }
        Ok(PackingPolytope {
            family,
            jobs: self.jobs,
            rows: self.rows,
            zkeys: self.zkeys,
            direct,
            q_by_job,
            q_by_z,
            h_by_z,
            h_by_row,
        })
    }
}

/// Packing polytope of `inst` restricted to the `alive` jobs (columns in rank order).
pub fn build_polytope(inst: &Instance, alive: &[JobId]) -> Result<PackingPolytope> {
    let mut pos: Vec<usize> = Vec::with_capacity(alive.len());
    for &id in alive {
        pos.push(inst.position(id).ok_or_else(|| Error::InvalidJob {
            job: id,
            reason: "not in instance".into(),
        })?);
    }
    pos.sort_unstable();
    pos.dedup();
    let jobs: Vec<JobId> = pos.iter().map(|&p| inst.jobs()[p].id).collect();
    let mut b = Builder::new(jobs.clone());
    let payload = |j: usize| &inst.jobs()[pos[j]].payload;
    let dim = inst.dimension();

    match inst.family() {
        Family::Multidim => {
            for j in 0..jobs.len() {
                let k = b.z(ZKey::Job(jobs[j]));
                b.q.push((j, k, 1.0));
            }
            for d in 0..dim {
                if (0..jobs.len()).any(|j| payload(j)[d] > 0.0) {
                    let r = b.row(RowKey::Resource(d));
                    let cap = inst.capacities()[d];
                    for j in 0..jobs.len() {
                        b.h.push((r, j, payload(j)[d] / cap));
                    }
                }
            }
            for (j, &id) in jobs.iter().enumerate() {
                let r = b.row(RowKey::JobCap(id));
                b.h.push((r, j, 1.0));
            }
            b.finish(Some(Family::Multidim), true)
        }
        Family::Unrelated | Family::TreeLb => {
            let mut machine_row = vec![None; dim];
            let mut share_rows = Vec::with_capacity(jobs.len());
            for (j, &id) in jobs.iter().enumerate() {
                let mut share = None;
                for (i, &s) in payload(j).iter().enumerate() {
                    if s <= 0.0 {
                        continue;
                    }
                    let mr = *machine_row[i].get_or_insert_with(|| b.row(RowKey::Machine(i)));
                    let sr = *share.get_or_insert_with(|| b.row(RowKey::JobShare(id)));
                    let k = b.z(ZKey::Assign { machine: i, job: id });
                    b.q.push((j, k, s));
                    b.h.push((mr, k, 1.0));
                    b.h.push((sr, k, 1.0));
                }
                share_rows.push(share);
            }
            if let Some(j) = share_rows.iter().position(Option::is_none) {
                return Err(Error::Unprocessable(jobs[j]));
            }
            b.finish(Some(inst.family()), false)
        }
        Family::Broadcast => {
            let row = b.row(RowKey::Broadcast);
            for i in 0..dim {
                if (0..jobs.len()).any(|j| payload(j)[i] > 0.0) {
                    let k = b.z(ZKey::Page(i));
                    b.h.push((row, k, 1.0));
                    for j in 0..jobs.len() {
                        b.q.push((j, k, payload(j)[i]));
                    }
                }
            }
            if jobs.is_empty() {
                b.rows.clear();
            }
            b.finish(Some(Family::Broadcast), false)
        }
        Family::AllOrNothing => {
            let alive_mask: u32 = pos.iter().fold(0, |m, &p| m | (1 << p));
            let projected: BTreeSet<u32> =
                inst.feasible_sets().iter().map(|s| s & alive_mask).filter(|&s| s != 0).collect();
            let maximal: Vec<u32> = projected
                .iter()
                .copied()
                .filter(|&s| !projected.iter().any(|&t| t != s && t & s == s))
                .collect();
            if !maximal.is_empty() {
                let row = b.row(RowKey::Schedule);
                for s in maximal {
                    let k = b.z(ZKey::Set(s));
                    b.h.push((row, k, 1.0));
                    for (j, &p) in pos.iter().enumerate() {
                        if s & (1 << p) != 0 {
                            b.q.push((j, k, 1.0));
                        }
                    }
                }
            }
            b.finish(Some(Family::AllOrNothing), false)
        }
    }
}

impl PackingPolytope {
    /// Direct-form polytope `B x <= 1` from explicit rows of `(job, coefficient)`.
    pub fn from_rows(jobs: &[JobId], rows: &[Vec<(JobId, f64)>]) -> Result<Self> {
        let mut b = Builder::new(jobs.to_vec());
        for (j, &id) in jobs.iter().enumerate() {
            let k = b.z(ZKey::Job(id));
            b.q.push((j, k, 1.0));
        }
        for (d, row) in rows.iter().enumerate() {
            let r = b.row(RowKey::Explicit(d));
            for &(id, c) in row {
                let j = jobs.iter().position(|&x| x == id).ok_or_else(|| Error::InvalidJob {
                    job: id,
                    reason: "row refers to unknown job".into(),
                })?;
                b.h.push((r, j, c));
            }
        }
        b.finish(None, true)
    }

    pub fn family(&self) -> Option<Family> {
        self.family
    }

    /// Alive job ids, in column order.
    pub fn jobs(&self) -> &[JobId] {
        &self.jobs
    }

    pub fn job_index(&self, id: JobId) -> Option<usize> {
        self.jobs.iter().position(|&j| j == id)
    }

    pub fn rows(&self) -> &[RowKey] {
        &self.rows
    }

    pub fn zkeys(&self) -> &[ZKey] {
        &self.zkeys
    }

    pub fn num_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_z(&self) -> usize {
        self.zkeys.len()
    }

    /// True when `z` is `x` itself (`Q = I`).
    pub fn is_direct(&self) -> bool {
        self.direct
    }

    pub fn q_job(&self, j: usize) -> &[(usize, f64)] {
        &self.q_by_job[j]
    }

    pub fn q_z(&self, k: usize) -> &[(usize, f64)] {
        &self.q_by_z[k]
    }

    pub fn h_z(&self, k: usize) -> &[(usize, f64)] {
        &self.h_by_z[k]
    }

    pub fn h_row(&self, d: usize) -> &[(usize, f64)] {
        &self.h_by_row[d]
    }

    /// Sparse row `d` as `(job id, coefficient)` pairs (direct form only).
    pub fn row_entries(&self, d: usize) -> Vec<(JobId, f64)> {
        assert!(self.direct, "row_entries needs a direct-form polytope");
        self.h_by_row[d].iter().map(|&(k, c)| (self.jobs[k], c)).collect()
    }

    /// `Q z`.
    pub fn q_times(&self, z: &[f64]) -> Vec<f64> {
        self.q_by_job.iter().map(|col| col.iter().map(|&(k, c)| c * z[k]).sum()).collect()
    }

    /// `H z`.
    pub fn h_times(&self, z: &[f64]) -> Vec<f64> {
        self.h_by_row.iter().map(|row| row.iter().map(|&(k, c)| c * z[k]).sum()).collect()
    }

    /// `H^T y`.
    pub fn ht_times(&self, y: &[f64]) -> Vec<f64> {
        self.h_by_z.iter().map(|col| col.iter().map(|&(d, c)| c * y[d]).sum()).collect()
    }

    /// `Q^T mu`.
    pub fn qt_times(&self, mu: &[f64]) -> Vec<f64> {
        self.q_by_z.iter().map(|col| col.iter().map(|&(j, c)| c * mu[j]).sum()).collect()
    }

    /// Largest rate job `j` can get alone.
    pub fn solo_rate(&self, j: usize) -> f64 {
        self.q_by_job[j]
            .iter()
            .map(|&(k, c)| {
                let hmax = self.h_by_z[k].iter().map(|t| t.1).fold(0.0, f64::max);
                c / hmax
            })
            .fold(0.0, f64::max)
    }

    /// Whether `x` (indexed like [`PackingPolytope::jobs`]) lies in the polytope.
    /// Lifted forms solve `min lambda` s.t. `Q z >= x`, `H z <= lambda`.
    pub fn check_feasible(&self, x: &[f64], tol: f64) -> Result<FeasibilityReport> {
        if x.len() != self.jobs.len() {
            return Err(Error::Dimension { expected: self.jobs.len(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite() || *v < -tol) {
            return Err(Error::Param("rates must be finite and nonnegative".into()));
        }
        let z = if self.direct {
            x.to_vec()
        } else if x.iter().all(|&v| v <= 0.0) {
            vec![0.0; self.zkeys.len()]
        } else {
            let mut lp = LinearProgram::minimize();
            let zv: Vec<usize> = (0..self.zkeys.len()).map(|_| lp.var(0.0, 0.0, f64::INFINITY)).collect();
            let lam = lp.var(1.0, 0.0, f64::INFINITY);
            for (j, col) in self.q_by_job.iter().enumerate() {
                if x[j] > 0.0 {
                    lp.constraint(col.iter().map(|&(k, c)| (zv[k], c)).collect(), Cmp::Ge, x[j]);
                }
            }
            for row in &self.h_by_row {
                let mut terms: Vec<(usize, f64)> = row.iter().map(|&(k, c)| (zv[k], c)).collect();
                terms.push((lam, -1.0));
                lp.constraint(terms, Cmp::Le, 0.0);
            }
            let (_, v) = lp.solve()?;
            zv.iter().map(|&k| v[k].max(0.0)).collect()
        };
        Ok(self.report(x, z, tol))
    }

    /// Feasibility of `x` certified by the given witness `z`.
    pub fn check_witness(&self, x: &[f64], z: &[f64], tol: f64) -> Result<FeasibilityReport> {
        if x.len() != self.jobs.len() {
            return Err(Error::Dimension { expected: self.jobs.len(), got: x.len() });
        }
        if z.len() != self.zkeys.len() {
            return Err(Error::Dimension { expected: self.zkeys.len(), got: z.len() });
        }
        Ok(self.report(x, z.to_vec(), tol))
    }

    fn report(&self, x: &[f64], z: Vec<f64>, tol: f64) -> FeasibilityReport {
        let hz = self.h_times(&z);
        let qz = self.q_times(&z);
        let mut max_violation = if self.rows.is_empty() { 0.0 } else { f64::NEG_INFINITY };
        let mut violated_rows = Vec::new();
        for (d, v) in hz.iter().enumerate() {
            let viol = v - 1.0;
            max_violation = f64::max(max_violation, viol);
            if viol > tol {
                violated_rows.push(self.rows[d]);
            }
        }
        let cover = x.iter().zip(&qz).map(|(a, b)| a - b).fold(0.0, f64::max);
        if !self.direct {
            max_violation = max_violation.max(cover);
        }
        let min_z = z.iter().copied().fold(0.0, f64::min);
        let feasible = max_violation <= tol && min_z >= -tol;
        FeasibilityReport { max_violation, violated_rows, feasible, witness: z }
    }
}

/// Decompose a fractional job-by-machine assignment (row and column sums at most 1)
/// into a convex combination of injective partial assignments. Each term is
/// `(coefficient, machine of each job or None)`; coefficients sum to 1.
pub fn decompose_assignment(z: &[Vec<f64>], tol: f64) -> Result<Vec<(f64, Vec<Option<usize>>)>> {
    let n = z.len();
    let m = z.first().map_or(0, Vec::len);
    for row in z {
        if row.len() != m {
            return Err(Error::Dimension { expected: m, got: row.len() });
        }
        if row.iter().any(|&v| v < -tol) || row.iter().sum::<f64>() > 1.0 + tol {
            return Err(Error::Param("job row must be nonnegative with sum at most 1".into()));
        }
    }
    for i in 0..m {
        if (0..n).map(|j| z[j][i]).sum::<f64>() > 1.0 + tol {
            return Err(Error::Param(format!("machine {i} is over-assigned")));
        }
    }
    // Doubly stochastic completion: [[Z, diag(1 - rowsum)], [diag(1 - colsum), Z^T]].
    let size = n + m;
    let mut a = vec![vec![0.0; size]; size];
    for j in 0..n {
        let rs: f64 = z[j].iter().sum();
        for i in 0..m {
            a[j][i] = z[j][i].max(0.0);
            a[n + i][m + j] = z[j][i].max(0.0);
        }
        a[j][m + j] = (1.0 - rs).max(0.0);
    }
    for i in 0..m {
        let cs: f64 = (0..n).map(|j| z[j][i]).sum();
        a[n + i][i] = (1.0 - cs).max(0.0);
    }

    let mut out = Vec::new();
    let mut remaining = 1.0;
    while remaining > tol {
        let matching = perfect_matching(&a, tol).ok_or_else(|| {
            Error::Param("assignment is not decomposable within tolerance".into())
        })?;
        let theta = (0..size).map(|r| a[r][matching[r]]).fold(f64::INFINITY, f64::min).min(remaining);
        for r in 0..size {
            a[r][matching[r]] -= theta;
        }
        remaining -= theta;
        let assignment = (0..n).map(|j| (matching[j] < m).then_some(matching[j])).collect();
        out.push((theta, assignment));
    }
    Ok(out)
}

/// Perfect matching on entries above `tol` by augmenting paths.
fn perfect_matching(a: &[Vec<f64>], tol: f64) -> Option<Vec<usize>> {
    let n = a.len();
    let mut col_owner: Vec<Option<usize>> = vec![None; n];
    fn augment(r: usize, a: &[Vec<f64>], tol: f64, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for c in 0..a.len() {
            if a[r][c] > tol && !seen[c] {
                seen[c] = true;
                if owner[c].is_none_or(|o| augment(o, a, tol, seen, owner)) {
                    owner[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    for r in 0..n {
        let mut seen = vec![false; n];
        if !augment(r, a, tol, &mut seen, &mut col_owner) {
            return None;
        }
    }
    let mut m = vec![0; n];
    for (c, o) in col_owner.iter().enumerate() {
        m[o.unwrap()] = c;
    }
    Some(m)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::instances::Job;

    fn inst(family: Family, caps: Vec<f64>, payloads: Vec<Vec<f64>>) -> Instance {
        let jobs = payloads
            .into_iter()
            .enumerate()
            .map(|(i, p)| Job { id: i as JobId + 1, weight: 1.0, size: 1.0, release: 0.0, payload: p })
            .collect();
        Instance::new(family, jobs, caps, BTreeMap::new()).unwrap()
    }

    #[test]
    fn multidim_single_resource_rows() {
        let i = inst(Family::Multidim, vec![1.0], vec![vec![1.0], vec![1.0]]);
        let p = build_polytope(&i, &[1, 2]).unwrap();
        assert_eq!(p.rows(), &[RowKey::Resource(0), RowKey::JobCap(1), RowKey::JobCap(2)]);
        assert_eq!(p.row_entries(0), vec![(1, 1.0), (2, 1.0)]);
        assert_eq!(p.row_entries(1), vec![(1, 1.0)]);
        assert_eq!(p.row_entries(2), vec![(2, 1.0)]);
    }

    #[test]
    fn multidim_rows_are_normalized_by_capacity() {
        let i = inst(Family::Multidim, vec![2.0, 4.0], vec![vec![1.0, 0.0], vec![0.5, 2.0]]);
        let p = build_polytope(&i, &[2]).unwrap();
        assert_eq!(p.row_entries(0), vec![(2, 0.25)]);
        assert_eq!(p.row_entries(1), vec![(2, 0.5)]);
        // resource 1 has no demand among alive job 1 and is dropped
        let p = build_polytope(&i, &[1]).unwrap();
        assert_eq!(p.rows(), &[RowKey::Resource(0), RowKey::JobCap(1)]);
    }

    #[test]
    fn unrelated_lifted_structure() {
        let i = inst(Family::Unrelated, vec![1.0, 1.0], vec![vec![1.0, 2.0], vec![3.0, 1.0]]);
        let p = build_polytope(&i, &[1, 2]).unwrap();
        assert!(!p.is_direct());
        assert_eq!(p.num_z(), 4);
        // each job: two Q entries equal to its speeds
        assert_eq!(p.q_job(0).iter().map(|t| t.1).collect::<Vec<_>>(), vec![1.0, 2.0]);
        assert_eq!(p.q_job(1).iter().map(|t| t.1).collect::<Vec<_>>(), vec![3.0, 1.0]);
        // every z appears in exactly one machine row and one job-share row
        for k in 0..p.num_z() {
            let kinds: Vec<_> = p.h_z(k).iter().map(|&(d, _)| p.rows()[d]).collect();
            assert_eq!(kinds.len(), 2);
            assert!(kinds.iter().any(|r| matches!(r, RowKey::Machine(_))));
            assert!(kinds.iter().any(|r| matches!(r, RowKey::JobShare(_))));
        }
        let rep = p.check_feasible(&[1.0, 3.0], 1e-9).unwrap();
        assert!(rep.feasible, "{rep:?}");
        assert!(p.check_feasible(&[2.0, 3.0], 1e-9).unwrap().feasible);
        let rep = p.check_feasible(&[2.5, 3.0], 1e-9).unwrap();
        assert!(!rep.feasible);
        assert!(rep.max_violation > 0.01);
    }

    #[test]
    fn broadcast_zero_column_is_rejected() {
        let jobs = vec![Job { id: 4, weight: 1.0, size: 1.0, release: 0.0, payload: vec![0.0] }];
        // instance validation already rejects an all-zero payload
        assert!(Instance::new(Family::Broadcast, jobs, vec![1.0], BTreeMap::new()).is_err());
        let p = PackingPolytope::from_rows(&[1, 2], &[vec![(1, 1.0)]]);
        assert!(matches!(p, Err(Error::Unprocessable(2))));
    }

    #[test]
    fn broadcast_shares_pages() {
        let i = inst(Family::Broadcast, vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![0.5, 0.0], vec![0.0, 1.0]]);
        let p = build_polytope(&i, &[1, 2, 3]).unwrap();
        assert_eq!(p.rows(), &[RowKey::Broadcast]);
        // page 0 fully: jobs 1, 2 at rates 1, 0.5
        assert!(p.check_feasible(&[1.0, 0.5, 0.0], 1e-9).unwrap().feasible);
        assert!(p.check_feasible(&[0.5, 0.25, 0.5], 1e-9).unwrap().feasible);
        assert!(!p.check_feasible(&[0.5, 0.25, 0.6], 1e-9).unwrap().feasible);
    }

    #[test]
    fn all_or_nothing_uses_maximal_sets() {
        let i = inst(Family::AllOrNothing, vec![2.0], vec![vec![1.0], vec![1.0], vec![2.0]]);
        let p = build_polytope(&i, &[1, 2, 3]).unwrap();
        let mut sets: Vec<_> = p.zkeys().to_vec();
        sets.sort();
        assert_eq!(sets, vec![ZKey::Set(0b011), ZKey::Set(0b100)]);
        assert!(p.check_feasible(&[0.5, 0.5, 0.5], 1e-9).unwrap().feasible);
        assert!(!p.check_feasible(&[0.6, 0.5, 0.5], 1e-9).unwrap().feasible);
        let p = build_polytope(&i, &[2, 3]).unwrap();
        assert_eq!(p.num_z(), 2);
    }

    #[test]
    fn explicit_row_feasibility() {
        let p = PackingPolytope::from_rows(&[1, 2], &[vec![(1, 1.0), (2, 1.0)]]).unwrap();
        let r = p.check_feasible(&[0.5, 0.5], 1e-12).unwrap();
        assert!(r.feasible);
        assert_eq!(r.max_violation, 0.0);
        let r = p.check_feasible(&[0.6, 0.6], 1e-12).unwrap();
        assert!(!r.feasible);
        assert!((r.max_violation - 0.2).abs() < 1e-12);
        assert_eq!(r.violated_rows, vec![RowKey::Explicit(0)]);
        assert!(matches!(p.check_feasible(&[0.5], 1e-9), Err(Error::Dimension { .. })));
    }

    #[test]
    fn unknown_alive_job_is_rejected() {
        let i = inst(Family::Multidim, vec![1.0], vec![vec![1.0]]);
        assert!(matches!(build_polytope(&i, &[9]), Err(Error::InvalidJob { job: 9, .. })));
    }

    #[test]
    fn decomposition_reconstructs_assignment() {
        let z = vec![vec![0.5, 0.3, 0.0], vec![0.2, 0.4, 0.4], vec![0.3, 0.1, 0.5]];
        let terms = decompose_assignment(&z, 1e-12).unwrap();
        let total: f64 = terms.iter().map(|t| t.0).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut rebuilt = vec![vec![0.0; 3]; 3];
        for (theta, a) in &terms {
            let used: Vec<_> = a.iter().flatten().collect();
            let distinct: BTreeSet<_> = used.iter().collect();
            assert_eq!(used.len(), distinct.len(), "mapping must be injective");
            for (j, m) in a.iter().enumerate() {
                if let Some(i) = m {
                    rebuilt[j][*i] += theta;
                }
            }
        }
        for j in 0..3 {
            for i in 0..3 {
                assert!((rebuilt[j][i] - z[j][i]).abs() < 1e-12);
            }
        }
    }
}
