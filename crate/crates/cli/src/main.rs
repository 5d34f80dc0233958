//! `polysched` command line: generate instances, run scheduler grids, certify
//! traces and sweep speeds.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 certificate violation, 3 config error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polysched::blass::{Blass, BlassConfig};
use polysched::certify::{certify_blass, certify_completion, DEFAULT_CERT_S};
use polysched::engine::{simulate, Scheduler, Trace};
use polysched::experiment::{compare_flowtime_speed, run_experiment, ExperimentConfig, InstanceSource};
use polysched::instances::{gen_family, gen_flowtime_concat, load_instance, Family, GenParams, Instance};
use polysched::schedulers::scheduler_by_name;
use polysched::tree::gen_lower_bound_tree;

#[derive(Parser)]
#[command(name = "polysched", version, about = "Non-clairvoyant scheduling under packing constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated instance document.
    Gen(GenArgs),
    /// Run a scheduler x speed grid and write report.csv and summary.json.
    Run(RunArgs),
    /// Simulate (or load a trace) and check its certificate.
    Certify(CertifyArgs),
    /// PF weighted flow time against certified lower bounds over a speed grid.
    Sweep(RunArgs),
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Instance document; repeat for several.
    #[arg(long = "instance")]
    instances: Vec<PathBuf>,
    /// Generate instances of this family instead.
    #[arg(long)]
    family: Option<Family>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Number of generated instances.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Use the lower-bound tree of this depth.
    #[arg(long)]
    tree: Option<usize>,
    /// Concatenate this many depth-1 lower-bound trees.
    #[arg(long)]
    concat: Option<usize>,
    /// Release gap between concatenated copies.
    #[arg(long, default_value_t = 1.5)]
    gap: f64,
}

impl SourceArgs {
    fn source(&self) -> Result<InstanceSource, Failure> {
        let chosen = [!self.instances.is_empty(), self.family.is_some(), self.tree.is_some(), self.concat.is_some()];
        match chosen.iter().filter(|&&c| c).count() {
            0 => return Err(Failure::Config("give --instance, --family, --tree or --concat".into())),
            1 => {}
            _ => return Err(Failure::Config("--instance, --family, --tree and --concat are exclusive".into())),
        }
        Ok(if !self.instances.is_empty() {
            InstanceSource::Files { paths: self.instances.clone() }
        } else if let Some(family) = self.family {
            InstanceSource::Generated { family, params: GenParams::new(self.n, self.m), count: self.count }
        } else if let Some(depth) = self.tree {
            InstanceSource::LowerBoundTree { depth }
        } else {
            InstanceSource::Concat { copies: self.concat.unwrap(), gap: self.gap }
        })
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Schedulers, comma separated.
    #[arg(long = "sched", value_delimiter = ',', default_value = "pf")]
    schedulers: Vec<String>,
    /// Speeds, comma separated.
    #[arg(long = "speed", value_delimiter = ',', default_value = "1")]
    speeds: Vec<f64>,
    /// Stretch of the completion-time certificate; 0 disables it.
    #[arg(long, default_value_t = DEFAULT_CERT_S)]
    cert_s: f64,
    /// BLASS epsilon (1/epsilon integral); enables the BLASS certificate at speed 1 + 3 epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every trace.
    #[arg(long)]
    traces: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, Failure> {
        Ok(ExperimentConfig {
            source: self.source.source()?,
            schedulers: self.schedulers.iter().filter(|s| !s.is_empty()).cloned().collect(),
            speeds: self.speeds.clone(),
            cert_s: (self.cert_s != 0.0).then_some(self.cert_s),
            epsilon: self.epsilon,
            out: self.out.clone(),
            seed: self.seed,
            write_traces: self.traces,
        })
    }
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Certify this trace instead of simulating.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long = "sched", default_value = "pf")]
    scheduler: String,
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = DEFAULT_CERT_S)]
    cert_s: f64,
    /// BLASS epsilon; BLASS traces must run at speed 1 + 3 epsilon.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    /// Write the certificate and report as JSON here; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
    Certificate(String),
}

impl From<polysched::Error> for Failure {
    fn from(e: polysched::Error) -> Self {
        use polysched::Error as E;
        match e {
            E::Parse(_)
            | E::InvalidJob { .. }
            | E::InvalidInstance(_)
            | E::Param(_)
            | E::UnsupportedFamily { .. }
            | E::Certificate(_)
            | E::Io(_) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn gen(args: &GenArgs) -> Result<(), Failure> {
    let s = &args.source;
    let inst = if let Some(family) = s.family {
        gen_family(family, &GenParams::new(s.n, s.m), args.seed)?
    } else if let Some(depth) = s.tree {
        gen_lower_bound_tree(depth, args.seed)?.to_unrelated()?
    } else if let Some(copies) = s.concat {
        gen_flowtime_concat(&gen_lower_bound_tree(1, args.seed)?.to_unrelated()?, copies, s.gap)?
    } else {
        return Err(Failure::Config("gen needs --family, --tree or --concat".into()));
    };
    write_or_print(&args.out, &inst.emit())
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.config()?;
    let report = run_experiment(&cfg)?;
    if cfg.out.is_none() {
        print!("{}", report.to_csv()?);
    }
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} {} speed {}: {}", r.instance, r.scheduler, r.speed, r.error.as_deref().unwrap_or_default());
    }
    let failed = report.certificate_failures();
    if failed > 0 {
        return Err(Failure::Certificate(format!("{failed} rows failed certification")));
    }
    if report.errors() > 0 {
        return Err(Failure::Runtime(format!("{} rows failed", report.errors())));
    }
    Ok(())
}

fn sweep(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.config()?;
    let rows = compare_flowtime_speed(&cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?).unwrap();
    let out = args.out.as_ref().map(|d| d.join("sweep.csv"));
    write_or_print(&out, text.trim_end())?;
    if rows.iter().any(|r| r.flow_lower_bound.is_some_and(|lb| lb > r.weighted_flow * (1.0 + 1e-12))) {
        return Err(Failure::Certificate("a certified lower bound exceeds the measured flow time".into()));
    }
    Ok(())
}

fn certify(args: &CertifyArgs) -> Result<(), Failure> {
    let inst: Instance = load_instance(&fs::read_to_string(&args.instance)?)?;
    let cfg = BlassConfig::new(args.epsilon)?;
    let trace: Trace = match &args.trace {
        Some(p) => Trace::from_json(&fs::read_to_string(p)?)?,
        None if args.scheduler == "blass" => simulate(&inst, &mut Blass::new(cfg) as &mut dyn Scheduler, args.speed)?,
        None => simulate(&inst, scheduler_by_name(&args.scheduler, cfg)?.as_mut(), args.speed)?,
    };
    let (feasible, text) = if trace.scheduler == "blass" {
        let (cert, report) = certify_blass(&inst, &trace, &cfg)?;
        (report.feasible, serde_json::json!({ "certificate": cert, "report": report }))
    } else {
        let (cert, report) = certify_completion(&inst, &trace, args.cert_s)?;
        (report.feasible, serde_json::json!({ "certificate": cert, "report": report }))
    };
    write_or_print(&args.out, &serde_json::to_string_pretty(&text).map_err(|e| Failure::Runtime(e.to_string()))?)?;
    if feasible {
        Ok(())
    } else {
        Err(Failure::Certificate("certificate check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Certify(a) => certify(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Certificate(m)) => {
            eprintln!("certificate violation: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(3)
        }
    }
}
