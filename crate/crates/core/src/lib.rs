//! Fault-tolerant federated policy gradient.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: episodic MDPs (CartPole and an enumerable chain MDP).
//! - [`policy`]: softmax policies with hand-written backpropagation.
//! - [`gradient`]: trajectory sampling, REINFORCE/GPOMDP, importance weights
//!   and the semi-stochastic (SCSG) gradient.
//! - [`filter`]: the two-rule Byzantine filter and aggregation.
//! - [`byzantine`]: attack models applied to agent reports.
//! - [`federation`]: round orchestrators for FedPG-BR and the federated
//!   GPOMDP / SVRPG baselines.
//! - [`oracle`]: exact gradients by enumeration, finite differences and the
//!   theory-constant calculator.
//! - [`experiment`]: multi-seed runs, CSV metrics, bootstrap intervals.

// Negated comparisons are used to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod byzantine;
pub mod env;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod filter;
pub mod gradient;
pub mod linalg;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod verify;

pub use byzantine::{AgentBehavior, AttackContext, AttackType, BehaviorKind, FedPgDirection};
pub use env::{ActionSpace, CartPole, ChainMdp, ChainMdpSpec, EnvSpec, Environment, StepResult};
pub use error::{Error, Result};
pub use experiment::{MetricsRecord, SuiteManifest};
pub use federation::{Algorithm, BatchSpec, OptimizerConfig, RunConfig, TrainingLog};
pub use filter::{FilterConfig, FilterOutcome, FilterRule};
pub use gradient::{Estimator, EstimatorKind, GradientEstimate, Step, Trajectory};
pub use policy::{Activation, Architecture, PolicyParams, PolicySpec};
pub use rng::SimRng;
