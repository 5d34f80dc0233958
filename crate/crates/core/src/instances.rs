//! Jobs, instances, generators and the instance document format.
//!
//! An [`Instance`] is immutable once built: jobs are validated and sorted by
//! `(release, id)`, and that order is the global rank used by every scheduler.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type JobId = u64;

/// Largest all-or-nothing instance whose feasible subsets are enumerated.
pub const MAX_ALL_OR_NOTHING_JOBS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Multidim,
    AllOrNothing,
    Unrelated,
    Broadcast,
    TreeLb,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Multidim,
        Family::AllOrNothing,
        Family::Unrelated,
        Family::Broadcast,
        Family::TreeLb,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Multidim => "multidim",
            Family::AllOrNothing => "all_or_nothing",
            Family::Unrelated => "unrelated",
            Family::Broadcast => "broadcast",
            Family::TreeLb => "tree_lb",
        }
    }

    /// Machine-like families: payload entries are speeds and capacities are unit.
    pub fn is_machine_family(&self) -> bool {
        matches!(self, Family::Unrelated | Family::Broadcast | Family::TreeLb)
    }

    /// Families whose payload is a per-machine speed vector with one machine per job at a time.
    pub fn is_unrelated_like(&self) -> bool {
        matches!(self, Family::Unrelated | Family::TreeLb)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Param(format!("unknown family `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub weight: f64,
    pub size: f64,
    pub release: f64,
    /// Demand vector `f_j` (multidim, all-or-nothing) or speed vector `s_.j`
    /// (unrelated, broadcast, tree).
    pub payload: Vec<f64>,
}

/// What a non-clairvoyant scheduler may know about a job: everything but its size.
#[derive(Clone, Debug, PartialEq)]
pub struct PublicJob {
    pub id: JobId,
    pub weight: f64,
    pub release: f64,
    pub payload: Vec<f64>,
    /// Global rank (0-based position in release order).
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    family: Family,
    jobs: Vec<Job>,
    capacities: Vec<f64>,
    metadata: BTreeMap<String, String>,
    /// All-or-nothing only: every feasible subset as a bitmask over job positions.
    feasible_sets: Vec<u32>,
    index: BTreeMap<JobId, usize>,
}

impl Instance {
    pub fn new(
        family: Family,
        mut jobs: Vec<Job>,
        capacities: Vec<f64>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        if capacities.is_empty() {
            return Err(Error::InvalidInstance("no resources or machines".into()));
        }
        for (d, &c) in capacities.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidInstance(format!("capacity {d} must be positive, got {c}")));
            }
            if family.is_machine_family() && c != 1.0 {
                return Err(Error::InvalidInstance(format!(
                    "{family} capacities are unit machine/page slots, got {c} at {d}"
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for job in &jobs {
            validate_job(job, capacities.len())?;
            if !seen.insert(job.id) {
                return Err(Error::InvalidJob { job: job.id, reason: "duplicate id".into() });
            }
        }
        jobs.sort_by(|a, b| a.release.total_cmp(&b.release).then(a.id.cmp(&b.id)));
        let index = jobs.iter().enumerate().map(|(i, j)| (j.id, i)).collect();

        let feasible_sets = if family == Family::AllOrNothing {
            if jobs.len() > MAX_ALL_OR_NOTHING_JOBS {
                return Err(Error::Param(format!(
                    "all_or_nothing supports at most {MAX_ALL_OR_NOTHING_JOBS} jobs, got {}",
                    jobs.len()
                )));
            }
            let sets = enumerate_feasible_sets(&jobs, &capacities);
            for (pos, job) in jobs.iter().enumerate() {
                if !sets.contains(&(1u32 << pos)) {
                    return Err(Error::InvalidJob {
                        job: job.id,
                        reason: "demand exceeds capacity on its own".into(),
                    });
                }
            }
            sets
        } else {
            Vec::new()
        };

        Ok(Self { family, jobs, capacities, metadata, feasible_sets, index })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Jobs in global-rank order.
    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn dimension(&self) -> usize {
        self.capacities.len()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn feasible_sets(&self) -> &[u32] {
        &self.feasible_sets
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Position of a job in global-rank order.
    pub fn position(&self, id: JobId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn job(&self, id: JobId) -> Option<&Job> {
        self.position(id).map(|p| &self.jobs[p])
    }

    pub fn public_job(&self, pos: usize) -> PublicJob {
        let j = &self.jobs[pos];
        PublicJob {
            id: j.id,
            weight: j.weight,
            release: j.release,
            payload: j.payload.clone(),
            rank: pos,
        }
    }

    pub fn with_metadata(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn to_document(&self) -> InstanceDoc {
        InstanceDoc {
            family: self.family,
            capacities: self.capacities.clone(),
            jobs: self.jobs.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Canonical JSON text of this instance.
    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("instance serializes")
    }
}

fn validate_job(job: &Job, dim: usize) -> Result<()> {
    let bad = |reason: String| Err(Error::InvalidJob { job: job.id, reason });
    if !(job.weight.is_finite() && job.weight > 0.0) {
        return bad(format!("weight must be positive, got {}", job.weight));
    }
    if !(job.size.is_finite() && job.size > 0.0) {
        return bad(format!("size must be positive, got {}", job.size));
    }
    if !(job.release.is_finite() && job.release >= 0.0) {
        return bad(format!("release must be nonnegative, got {}", job.release));
    }
    if job.payload.len() != dim {
        return bad(format!("payload has {} entries, instance has {dim}", job.payload.len()));
    }
    if job.payload.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return bad("payload entries must be finite and nonnegative".into());
    }
    if !job.payload.iter().any(|v| *v > 0.0) {
        return bad("payload has no positive entry".into());
    }
    Ok(())
}

/// Every subset of jobs whose summed demands fit all capacities, as bitmasks
/// over job positions (the empty set included).
pub fn enumerate_feasible_sets(jobs: &[Job], capacities: &[f64]) -> Vec<u32> {
    let n = jobs.len();
    assert!(n <= 31);
    let mut out = Vec::new();
    let mut load = vec![0.0; capacities.len()];
    for mask in 0u32..(1u32 << n) {
        load.iter_mut().for_each(|l| *l = 0.0);
        let mut m = mask;
        while m != 0 {
            let j = m.trailing_zeros() as usize;
            for (l, f) in load.iter_mut().zip(&jobs[j].payload) {
                *l += f;
            }
            m &= m - 1;
        }
        if load.iter().zip(capacities).all(|(l, r)| *l <= r * (1.0 + 1e-12)) {
            out.push(mask);
        }
    }
    out
}

/// Serialized form of an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub family: Family,
    pub capacities: Vec<f64>,
    pub jobs: Vec<Job>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl InstanceDoc {
    pub fn into_instance(self) -> Result<Instance> {
        Instance::new(self.family, self.jobs, self.capacities, self.metadata)
    }
}

pub fn load_instance(text: &str) -> Result<Instance> {
    let doc: InstanceDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    doc.into_instance()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Exponential with the given mean, shifted by `min` so samples stay positive.
    Exponential { mean: f64, min: f64 },
}

impl Dist {
    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            Dist::Constant { value } => value > 0.0 && value.is_finite(),
            Dist::Uniform { lo, hi } => lo > 0.0 && hi >= lo && hi.is_finite(),
            Dist::Exponential { mean, min } => mean > 0.0 && min > 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("{what} distribution {self:?} must be positive and finite")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Uniform { lo, hi } if lo == hi => lo,
            Dist::Uniform { lo, hi } => rng.random_range(lo..hi),
            Dist::Exponential { mean, min } => min + Exp::new(1.0 / mean).unwrap().sample(rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReleaseProcess {
    AllZero,
    /// Poisson arrivals with the given rate, starting at time 0.
    Poisson { rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub n: usize,
    /// Resources (multidim, all-or-nothing), machines (unrelated) or pages (broadcast).
    pub m: usize,
    pub sizes: Dist,
    pub weights: Dist,
    pub releases: ReleaseProcess,
}

impl GenParams {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            sizes: Dist::Uniform { lo: 0.5, hi: 2.0 },
            weights: Dist::Uniform { lo: 0.5, hi: 2.0 },
            releases: ReleaseProcess::Poisson { rate: 1.0 },
        }
    }

    pub fn unit_weights(mut self) -> Self {
        self.weights = Dist::Constant { value: 1.0 };
        self
    }

    pub fn released_at_zero(mut self) -> Self {
        self.releases = ReleaseProcess::AllZero;
        self
    }
}

/// Random instance of one of the four packing families. Deterministic in `seed`.
pub fn gen_family(family: Family, params: &GenParams, seed: u64) -> Result<Instance> {
    if params.n == 0 || params.m == 0 {
        return Err(Error::Param(format!("n and m must be at least 1 (n={}, m={})", params.n, params.m)));
    }
    if family == Family::AllOrNothing && params.n > MAX_ALL_OR_NOTHING_JOBS {
        return Err(Error::Param(format!(
            "all_or_nothing supports at most {MAX_ALL_OR_NOTHING_JOBS} jobs, got {}",
            params.n
        )));
    }
    if family == Family::TreeLb {
        return Err(Error::UnsupportedFamily {
            family: family.to_string(),
            operation: "gen_family (use gen_lower_bound_tree)".into(),
        });
    }
    params.sizes.validate("size")?;
    params.weights.validate("weight")?;
    if let ReleaseProcess::Poisson { rate } = params.releases {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Param(format!("release rate must be positive, got {rate}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = params.m;
    let capacities: Vec<f64> = match family {
        Family::Multidim => (0..m).map(|_| rng.random_range(1.0..2.0)).collect(),
        _ => vec![1.0; m],
    };

    let mut t = 0.0;
    let mut jobs = Vec::with_capacity(params.n);
    for id in 0..params.n as JobId {
        let release = match params.releases {
            ReleaseProcess::AllZero => 0.0,
            ReleaseProcess::Poisson { rate } => {
                if id > 0 {
                    t += Exp::new(rate).unwrap().sample(&mut rng);
                }
                t
            }
        };
        let payload = match family {
            Family::Multidim => sparse_vector(&mut rng, m, 0.3, 0.1, 1.0),
            Family::AllOrNothing => sparse_vector(&mut rng, m, 0.3, 0.15, 0.6),
            Family::Unrelated => sparse_vector(&mut rng, m, 0.25, 0.2, 2.0),
            Family::Broadcast => {
                let mut v = vec![0.0; m];
                let k = rng.random_range(1..=m.min(3));
                for _ in 0..k {
                    let page = rng.random_range(0..m);
                    v[page] = rng.random_range(0.2..1.0);
                }
                v
            }
            Family::TreeLb => unreachable!(),
        };
        jobs.push(Job {
            id,
            weight: params.weights.sample(&mut rng),
            size: params.sizes.sample(&mut rng),
            release,
            payload,
        });
    }

    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), format!("gen_family/{family}"));
    meta.insert("seed".to_string(), seed.to_string());
    meta.insert("params".to_string(), serde_json::to_string(params)?);
    Instance::new(family, jobs, capacities, meta)
}

/// Vector with each entry zero with probability `p_zero`, else uniform in `[lo, hi)`;
/// at least one entry is positive.
fn sparse_vector(rng: &mut ChaCha8Rng, m: usize, p_zero: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m)
        .map(|_| if rng.random::<f64>() < p_zero { 0.0 } else { rng.random_range(lo..hi) })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        let d = rng.random_range(0..m);
        v[d] = rng.random_range(lo..hi);
    }
    v
}

/// Concatenate `copies` of a zero-release unrelated base instance, copy `c`
/// released at `c * gap`. Copies share the machines, so two jobs of different
/// copies never run on one machine at the same time.
pub fn gen_flowtime_concat(base: &Instance, copies: usize, gap: f64) -> Result<Instance> {
    if !base.family().is_unrelated_like() {
        return Err(Error::UnsupportedFamily {
            family: base.family().to_string(),
            operation: "gen_flowtime_concat".into(),
        });
    }
    if copies == 0 {
        return Err(Error::Param("copies must be at least 1".into()));
    }
    if !(gap.is_finite() && gap >= 0.0) {
        return Err(Error::Param(format!("gap must be nonnegative, got {gap}")));
    }
    if base.jobs().iter().any(|j| j.release != 0.0) {
        return Err(Error::Param("base instance must release every job at time 0".into()));
    }
    if copies == 1 {
        return Ok(base.clone());
    }
    let stride = base.jobs().iter().map(|j| j.id).max().unwrap_or(0) + 1;
    let mut jobs = Vec::with_capacity(base.len() * copies);
    for c in 0..copies {
        for j in base.jobs() {
            jobs.push(Job {
                id: c as JobId * stride + j.id,
                release: c as f64 * gap,
                ..j.clone()
            });
        }
    }
    let mut meta = base.metadata().clone();
    meta.insert("generator".to_string(), "gen_flowtime_concat".to_string());
    meta.insert("copies".to_string(), copies.to_string());
    meta.insert("gap".to_string(), gap.to_string());
    Instance::new(base.family(), jobs, base.capacities().to_vec(), meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(id: JobId, weight: f64, payload: Vec<f64>) -> Job {
        Job { id, weight, size: 1.0, release: 0.0, payload }
    }

    #[test]
    fn loads_unrelated_document() {
        let doc = r#"{
            "family": "unrelated",
            "capacities": [1, 1],
            "jobs": [
                {"id": 1, "weight": 1, "size": 2, "release": 0, "payload": [1, 2]},
                {"id": 2, "weight": 1, "size": 1, "release": 0.5, "payload": [3, 1]}
            ],
            "metadata": {"source": "hand"}
        }"#;
        let inst = load_instance(doc).unwrap();
        assert_eq!(inst.family(), Family::Unrelated);
        assert_eq!(inst.len(), 2);
        assert_eq!(inst.jobs()[1].payload, vec![3.0, 1.0]);
    }

    #[test]
    fn zero_weight_is_rejected_with_job_id() {
        let doc = r#"{"family": "multidim", "capacities": [1],
            "jobs": [{"id": 7, "weight": 0, "size": 1, "release": 0, "payload": [1]}]}"#;
        match load_instance(doc) {
            Err(Error::InvalidJob { job, .. }) => assert_eq!(job, 7),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_document_is_a_parse_error() {
        assert!(matches!(load_instance("{\"family\": "), Err(Error::Parse(_))));
        assert!(matches!(
            load_instance(r#"{"family": "nope", "capacities": [1], "jobs": []}"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn dimension_mismatch_and_zero_payload_rejected() {
        let caps = vec![1.0, 1.0];
        let e = Instance::new(Family::Unrelated, vec![job(3, 1.0, vec![1.0])], caps.clone(), BTreeMap::new());
        assert!(matches!(e, Err(Error::InvalidJob { job: 3, .. })));
        let e = Instance::new(Family::Unrelated, vec![job(4, 1.0, vec![0.0, 0.0])], caps, BTreeMap::new());
        assert!(matches!(e, Err(Error::InvalidJob { job: 4, .. })));
    }

    #[test]
    fn rank_order_breaks_release_ties_by_id() {
        let mut a = job(5, 1.0, vec![1.0]);
        a.release = 1.0;
        let b = job(9, 1.0, vec![1.0]);
        let c = job(2, 1.0, vec![1.0]);
        let inst = Instance::new(Family::Multidim, vec![a, b, c], vec![1.0], BTreeMap::new()).unwrap();
        let ids: Vec<_> = inst.jobs().iter().map(|j| j.id).collect();
        assert_eq!(ids, vec![2, 9, 5]);
    }

    #[test]
    fn all_or_nothing_feasible_sets_by_enumeration() {
        let jobs = vec![job(1, 1.0, vec![1.0]), job(2, 1.0, vec![1.0]), job(3, 1.0, vec![2.0])];
        let inst = Instance::new(Family::AllOrNothing, jobs, vec![2.0], BTreeMap::new()).unwrap();
        // {}, {1}, {2}, {1,2}, {3}
        let mut got = inst.feasible_sets().to_vec();
        got.sort();
        assert_eq!(got, vec![0b000, 0b001, 0b010, 0b011, 0b100]);
    }

    #[test]
    fn generator_is_deterministic() {
        let p = GenParams::new(4, 2);
        let a = gen_family(Family::Unrelated, &p, 7).unwrap();
        let b = gen_family(Family::Unrelated, &p, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_family(Family::Unrelated, &p, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generator_rejects_bad_ranges() {
        assert!(gen_family(Family::Multidim, &GenParams::new(0, 1), 1).is_err());
        assert!(gen_family(Family::AllOrNothing, &GenParams::new(16, 2), 1).is_err());
        let mut p = GenParams::new(3, 1);
        p.sizes = Dist::Uniform { lo: -1.0, hi: 1.0 };
        assert!(gen_family(Family::Multidim, &p, 1).is_err());
    }

    #[test]
    fn degenerate_multidim_instance() {
        let inst = gen_family(Family::Multidim, &GenParams::new(1, 1), 3).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst.dimension(), 1);
        assert!(inst.jobs()[0].payload[0] > 0.0);
    }

    #[test]
    fn concat_releases_and_identity() {
        let base = crate::tree::gen_lower_bound_tree(1, 0).unwrap().to_unrelated().unwrap();
        let cat = gen_flowtime_concat(&base, 3, 1.0).unwrap();
        let rel: Vec<f64> = cat.jobs().iter().map(|j| j.release).collect();
        assert_eq!(rel, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(gen_flowtime_concat(&base, 1, 1.0).unwrap(), base);
        let md = gen_family(Family::Multidim, &GenParams::new(2, 1).released_at_zero(), 1).unwrap();
        assert!(gen_flowtime_concat(&md, 2, 1.0).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
    }
}
