//! Non-clairvoyant online scheduling under packing constraints.
//!
//! Jobs arrive over time with a weight and a resource-demand (or machine-speed)
//! vector; their sizes stay hidden until they finish. At every arrival or
//! completion a scheduler picks rates for the alive jobs inside a packing
//! polytope. The crate provides instance generators, the polytopes, a
//! proportional-fairness solver with KKT certification, an exact event-driven
//! simulator, several schedulers, and offline dual-fitting certificates that
//! lower-bound the optimal objective for a finished run.
//!
//! ```
//! use polysched::{certify_completion, gen_family, simulate, Family, GenParams, Pf};
//!
//! # fn main() -> polysched::Result<()> {
//! let inst = gen_family(Family::Multidim, &GenParams::new(10, 2), 7)?;
//! let trace = simulate(&inst, &mut Pf::default(), 1.0)?;
//! let (_cert, report) = certify_completion(&inst, &trace, 32.0)?;
//! assert!(report.feasible && report.lower_bound <= report.weighted_completion);
//! # Ok(())
//! # }
//! ```

pub mod blass;
pub mod certify;
pub mod eg;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod instances;
mod lp;
pub mod polytope;
pub mod schedulers;
pub mod tree;

pub use blass::{Blass, BlassConfig};
pub use eg::{equilibrium_prices, kkt_residuals, solve_eg, Allocation, KktReport};
pub use engine::{metrics, simulate, simulate_with, Metrics, Scheduler, SchedulerDecision, SchedulerView, SimOptions, Trace};
pub use error::{Error, Result};
pub use instances::{gen_family, gen_flowtime_concat, load_instance, Family, GenParams, Instance, Job, JobId};
pub use polytope::{build_polytope, PackingPolytope};
pub use schedulers::{scheduler_by_name, Drf, MaxMin, Pf, SCHEDULER_NAMES};
pub use tree::{gen_lower_bound_tree, verify_tree_witness, TreeInstance};
pub use certify::{
    certified_flow_lower_bound, certify_blass, certify_completion, slot_trace, CompletionDualCert, CompletionReport,
    UnrelatedDualCert,
};
pub use experiment::{compare_flowtime_speed, run_experiment, ExperimentConfig, InstanceSource, Report};
