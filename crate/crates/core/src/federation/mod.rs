//! Round orchestration for FedPG-BR and the federated baselines.

mod config;
mod optimizer;
mod runner;

pub use config::{Algorithm, AttackParams, BatchSpec, RunConfig};
pub use optimizer::{Optimizer, OptimizerConfig};
pub use runner::{
    collect_reports, run, run_fed_gpomdp, run_fed_svrpg, run_fedpg_br, sample_geometric,
    scsg_inner_loop, FilterSummary, InnerLoop, RoundReports, SelectedIterate, TrainingLog,
};
