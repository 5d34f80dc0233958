//! Scheduler x speed grids over instance sets, with certificates and reports.
//!
//! Cells run in parallel; the report keeps the grid order (instance, then
//! scheduler, then speed) so output is byte-identical across runs except for
//! the runtime column.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blass::{Blass, BlassConfig};
use crate::certify::{certified_flow_lower_bound, certify_blass, certify_completion, DEFAULT_CERT_S};
use crate::engine::{metrics, simulate, Scheduler, Trace};
use crate::error::{Error, Result};
use crate::instances::{gen_family, gen_flowtime_concat, load_instance, Family, GenParams, Instance};
use crate::schedulers::scheduler_by_name;
use crate::tree::gen_lower_bound_tree;

/// Speeds closer than this to `1 + 3 epsilon` get the BLASS certificate.
const ETA_MATCH_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Instance documents on disk.
    Files { paths: Vec<PathBuf> },
    /// `count` random instances with seeds `seed, seed + 1, ...`.
    Generated { family: Family, params: GenParams, count: usize },
    /// Depth-1 lower-bound tree as an unrelated-machines instance.
    LowerBoundTree { depth: usize },
    /// `copies` concatenated depth-1 lower-bound trees released `gap` apart.
    Concat { copies: usize, gap: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: InstanceSource,
    pub schedulers: Vec<String>,
    pub speeds: Vec<f64>,
    /// Stretch factor of the completion-time certificate; `None` skips it.
    pub cert_s: Option<f64>,
    /// BLASS epsilon; also enables the BLASS certificate at speed `1 + 3 epsilon`.
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Write every trace under `out/traces`.
    #[serde(default)]
    pub write_traces: bool,
}

impl ExperimentConfig {
    pub fn new(source: InstanceSource, schedulers: &[&str], speeds: &[f64], seed: u64) -> Self {
        Self {
            source,
            schedulers: schedulers.iter().map(|s| s.to_string()).collect(),
            speeds: speeds.to_vec(),
            cert_s: Some(DEFAULT_CERT_S),
            epsilon: None,
            out: None,
            seed,
            write_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedulers.is_empty() {
            return Err(Error::Param("scheduler list is empty".into()));
        }
        for s in &self.schedulers {
            scheduler_by_name(s, BlassConfig::default())?;
        }
        if self.speeds.is_empty() {
            return Err(Error::Param("speed grid is empty".into()));
        }
        if let Some(v) = self.speeds.iter().find(|v| !(v.is_finite() && **v >= 1.0)) {
            return Err(Error::Param(format!("speeds must be at least 1, got {v}")));
        }
        if let Some(s) = self.cert_s {
            if !(s.is_finite() && s > 1.0) {
                return Err(Error::Param(format!("certificate stretch must exceed 1, got {s}")));
            }
        }
        self.blass_config()?.validate()?;
        match &self.source {
            InstanceSource::Files { paths } if paths.is_empty() => Err(Error::Param("no instance files given".into())),
            InstanceSource::Generated { count: 0, .. } => Err(Error::Param("instance count must be at least 1".into())),
            _ => Ok(()),
        }
    }

    fn blass_config(&self) -> Result<BlassConfig> {
        match self.epsilon {
            Some(e) => BlassConfig::new(e),
            None => Ok(BlassConfig::default()),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Named instances of a config source.
pub fn load_instances(source: &InstanceSource, seed: u64) -> Result<Vec<(String, Instance)>> {
    match source {
        InstanceSource::Files { paths } => paths
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p)?;
                let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                Ok((name, load_instance(&text)?))
            })
            .collect(),
        InstanceSource::Generated { family, params, count } => (0..*count as u64)
            .map(|i| Ok((format!("{family}-{}", seed + i), gen_family(*family, params, seed + i)?)))
            .collect(),
        InstanceSource::LowerBoundTree { depth } => {
            Ok(vec![(format!("tree-d{depth}"), gen_lower_bound_tree(*depth, seed)?.to_unrelated()?)])
        }
        InstanceSource::Concat { copies, gap } => {
            let base = gen_lower_bound_tree(1, seed)?.to_unrelated()?;
            Ok(vec![(format!("concat-{copies}"), gen_flowtime_concat(&base, *copies, *gap)?)])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertSummary {
    pub feasible: bool,
    pub lower_bound: f64,
    pub certified_ratio: f64,
    pub max_violation: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub instance: String,
    pub scheduler: String,
    pub speed: f64,
    pub config_hash: String,
    pub seed: u64,
    pub jobs: usize,
    pub weighted_completion: Option<f64>,
    pub weighted_flow: Option<f64>,
    pub total_flow: Option<f64>,
    pub makespan: Option<f64>,
    pub max_kkt: Option<f64>,
    pub completion_cert: Option<CertSummary>,
    pub flow_lower_bound: Option<f64>,
    pub blass_cert: Option<CertSummary>,
    /// BLASS monotonicity invariants held at every event.
    pub invariants_clean: Option<bool>,
    pub error: Option<String>,
    pub runtime_ms: f64,
}

impl ReportRow {
    pub fn cert_failed(&self) -> bool {
        let bad = |c: &Option<CertSummary>| c.as_ref().is_some_and(|c| !c.feasible);
        bad(&self.completion_cert) || bad(&self.blass_cert) || self.invariants_clean == Some(false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn certificate_failures(&self) -> usize {
        self.rows.iter().filter(|r| r.cert_failed()).count()
    }

    pub fn errors(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow::from(r)).map_err(|e| Error::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv()?)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    config_hash: &'a str,
    seed: u64,
    instance: &'a str,
    scheduler: &'a str,
    speed: f64,
    jobs: usize,
    weighted_completion: Option<f64>,
    weighted_flow: Option<f64>,
    total_flow: Option<f64>,
    makespan: Option<f64>,
    max_kkt: Option<f64>,
    completion_cert_feasible: Option<bool>,
    completion_lower_bound: Option<f64>,
    completion_certified_ratio: Option<f64>,
    completion_max_violation: Option<f64>,
    flow_lower_bound: Option<f64>,
    blass_cert_feasible: Option<bool>,
    blass_lower_bound: Option<f64>,
    blass_certified_ratio: Option<f64>,
    blass_max_violation: Option<f64>,
    invariants_clean: Option<bool>,
    error: Option<&'a str>,
    runtime_ms: f64,
}

impl<'a> From<&'a ReportRow> for CsvRow<'a> {
    fn from(r: &'a ReportRow) -> Self {
        let c = r.completion_cert.as_ref();
        let b = r.blass_cert.as_ref();
        Self {
            config_hash: &r.config_hash,
            seed: r.seed,
            instance: &r.instance,
            scheduler: &r.scheduler,
            speed: r.speed,
            jobs: r.jobs,
            weighted_completion: r.weighted_completion,
            weighted_flow: r.weighted_flow,
            total_flow: r.total_flow,
            makespan: r.makespan,
            max_kkt: r.max_kkt,
            completion_cert_feasible: c.map(|c| c.feasible),
            completion_lower_bound: c.map(|c| c.lower_bound),
            completion_certified_ratio: c.map(|c| c.certified_ratio),
            completion_max_violation: c.map(|c| c.max_violation),
            flow_lower_bound: r.flow_lower_bound,
            blass_cert_feasible: b.map(|b| b.feasible),
            blass_lower_bound: b.map(|b| b.lower_bound),
            blass_certified_ratio: b.map(|b| b.certified_ratio),
            blass_max_violation: b.map(|b| b.max_violation),
            invariants_clean: r.invariants_clean,
            error: r.error.as_deref(),
            runtime_ms: r.runtime_ms,
        }
    }
}

struct Cell<'a> {
    name: &'a str,
    inst: &'a Instance,
    scheduler: &'a str,
    speed: f64,
}

/// Run every (instance, scheduler, speed) cell. Config errors abort; cell
/// errors are recorded in the row and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let blass_cfg = cfg.blass_config()?;
    let instances = load_instances(&cfg.source, cfg.seed)?;
    let hash = cfg.hash();
    let cells: Vec<Cell<'_>> = instances
        .iter()
        .flat_map(|(name, inst)| {
            cfg.schedulers.iter().flat_map(move |s| {
                cfg.speeds.iter().map(move |&speed| Cell { name, inst, scheduler: s, speed })
            })
        })
        .collect();
    let results: Vec<(ReportRow, Option<Trace>)> =
        cells.par_iter().map(|c| run_cell(c, cfg, &blass_cfg, &hash)).collect();
    if let Some(dir) = &cfg.out {
        if cfg.write_traces {
            let traces = dir.join("traces");
            fs::create_dir_all(&traces)?;
            for (row, tr) in &results {
                if let Some(tr) = tr {
                    let file = format!("{}_{}_{}.json", row.instance, row.scheduler, row.speed);
                    fs::write(traces.join(file), tr.to_json())?;
                }
            }
        }
    }
    let report = Report { config: cfg.clone(), config_hash: hash, rows: results.into_iter().map(|(r, _)| r).collect() };
    if let Some(dir) = &cfg.out {
        report.write(dir)?;
    }
    Ok(report)
}

fn run_cell(c: &Cell<'_>, cfg: &ExperimentConfig, blass_cfg: &BlassConfig, hash: &str) -> (ReportRow, Option<Trace>) {
    let started = Instant::now();
    let mut row = ReportRow {
        instance: c.name.to_string(),
        scheduler: c.scheduler.to_string(),
        speed: c.speed,
        config_hash: hash.to_string(),
        seed: cfg.seed,
        jobs: c.inst.len(),
        weighted_completion: None,
        weighted_flow: None,
        total_flow: None,
        makespan: None,
        max_kkt: None,
        completion_cert: None,
        flow_lower_bound: None,
        blass_cert: None,
        invariants_clean: None,
        error: None,
        runtime_ms: 0.0,
    };
    let trace = match fill_cell(&mut row, c, cfg, blass_cfg) {
        Ok(tr) => Some(tr),
        Err(e) => {
            row.error = Some(e.to_string());
            None
        }
    };
    row.runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    (row, trace)
}

fn fill_cell(row: &mut ReportRow, c: &Cell<'_>, cfg: &ExperimentConfig, blass_cfg: &BlassConfig) -> Result<Trace> {
    let tr = if c.scheduler == "blass" {
        let mut b = Blass::new(*blass_cfg);
        let tr = simulate(c.inst, &mut b as &mut dyn Scheduler, c.speed)?;
        if blass_cfg.check_invariants {
            row.invariants_clean = Some(b.invariants().clean());
        }
        tr
    } else {
        let mut s = scheduler_by_name(c.scheduler, *blass_cfg)?;
        simulate(c.inst, s.as_mut(), c.speed)?
    };
    let m = metrics(&tr)?;
    row.weighted_completion = Some(m.weighted_completion);
    row.weighted_flow = Some(m.weighted_flow);
    row.total_flow = Some(m.total_flow);
    row.makespan = Some(m.makespan);
    row.max_kkt = tr.max_kkt;
    if let (Some(s), "pf") = (cfg.cert_s, c.scheduler) {
        let (_, rep) = certify_completion(c.inst, &tr, s)?;
        row.completion_cert = Some(CertSummary {
            feasible: rep.feasible,
            lower_bound: rep.lower_bound,
            certified_ratio: rep.certified_ratio,
            max_violation: rep.max_violation,
            violations: rep.violations.len(),
        });
        if rep.feasible {
            row.flow_lower_bound = Some(certified_flow_lower_bound(c.inst, &tr, s)?.value);
        }
    }
    if c.scheduler == "blass" && cfg.epsilon.is_some() && (c.speed - blass_cfg.eta()).abs() <= ETA_MATCH_TOL {
        let (_, rep) = certify_blass(c.inst, &tr, blass_cfg)?;
        row.blass_cert = Some(CertSummary {
            feasible: rep.feasible,
            lower_bound: rep.lower_bound_lp,
            certified_ratio: rep.certified_ratio,
            max_violation: rep.max_violation,
            violations: rep.violations.len(),
        });
    }
    Ok(tr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpeedRow {
    pub instance: String,
    pub speed: f64,
    pub weighted_flow: f64,
    pub flow_lower_bound: Option<f64>,
    /// Instance comes from the lower-bound concatenation.
    pub concat: bool,
    /// Concatenation instance whose flow time is strictly worse than at the next faster speed.
    pub degrades: bool,
}

/// PF over the config's speed grid: weighted flow time against certified lower bounds.
pub fn compare_flowtime_speed(cfg: &ExperimentConfig) -> Result<Vec<FlowSpeedRow>> {
    let mut cfg = cfg.clone();
    cfg.schedulers = vec!["pf".to_string()];
    cfg.speeds.sort_by(f64::total_cmp);
    cfg.speeds.dedup();
    let report = run_experiment(&cfg)?;
    let concat = matches!(cfg.source, InstanceSource::Concat { .. });
    let mut rows = Vec::with_capacity(report.rows.len());
    for r in &report.rows {
        let flow = r.weighted_flow.ok_or_else(|| {
            Error::Simulation(format!("{} at speed {}: {}", r.instance, r.speed, r.error.as_deref().unwrap_or("no metrics")))
        })?;
        rows.push(FlowSpeedRow {
            instance: r.instance.clone(),
            speed: r.speed,
            weighted_flow: flow,
            flow_lower_bound: r.flow_lower_bound,
            concat,
            degrades: false,
        });
    }
    for i in 0..rows.len().saturating_sub(1) {
        if rows[i].concat && rows[i].instance == rows[i + 1].instance {
            rows[i].degrades = rows[i].weighted_flow > rows[i + 1].weighted_flow;
        }
    }
    Ok(rows)
}
