use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerConfig;
use crate::byzantine::{assign_behaviors, AgentBehavior, AttackType, BehaviorKind, FedPgDirection};
use crate::env::{normalize_env_id, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::gradient::{Baseline, Estimator, EstimatorKind};
use crate::policy::PolicySpec;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(alias = "fedpg-br", alias = "ft_fedpg")]
    FedpgBr,
    #[serde(alias = "gpomdp")]
    FedGpomdp,
    #[serde(alias = "svrpg")]
    FedSvrpg,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::FedpgBr => "fedpg_br",
            Algorithm::FedGpomdp => "fed_gpomdp",
            Algorithm::FedSvrpg => "fed_svrpg",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fedpg_br" | "ft_fedpg" | "fedpgbr" => Ok(Algorithm::FedpgBr),
            "fed_gpomdp" | "gpomdp" => Ok(Algorithm::FedGpomdp),
            "fed_svrpg" | "svrpg" => Ok(Algorithm::FedSvrpg),
            other => Err(Error::config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Per-round batch size `B_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSpec {
    Constant(usize),
    /// Uniform integer on the closed interval, redrawn every round.
    Range {
        lo: usize,
        hi: usize,
    },
}

impl BatchSpec {
    pub fn sample(&self, rng: &mut SimRng) -> usize {
        match *self {
            BatchSpec::Constant(b) => b,
            BatchSpec::Range { lo, hi } => rng.random_range(lo..=hi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BatchSpec::Constant(0) => Err(Error::config("batch size must be at least 1")),
            BatchSpec::Range { lo, hi } if lo == 0 || lo > hi => {
                Err(Error::config(format!("invalid batch range [{lo}, {hi}]")))
            }
            _ => Ok(()),
        }
    }
}

/// Knobs of the attack models selected by `attack`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackParams {
    pub noise_scale: f64,
    pub sign_flip_factor: f64,
    pub z_max: f64,
    pub fedpg_direction: FedPgDirection,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            noise_scale: 1.0,
            sign_flip_factor: crate::byzantine::DEFAULT_SIGN_FLIP,
            z_max: crate::byzantine::DEFAULT_Z_MAX,
            fedpg_direction: FedPgDirection::RandomUnit,
        }
    }
}

impl AttackParams {
    pub fn behavior(&self, attack: AttackType) -> BehaviorKind {
        match attack {
            AttackType::RandomNoise => BehaviorKind::RandomNoise {
                scale: self.noise_scale,
            },
            AttackType::RandomAction => BehaviorKind::RandomAction,
            AttackType::SignFlip => BehaviorKind::SignFlip {
                factor: self.sign_flip_factor,
            },
            AttackType::Fedpg => BehaviorKind::FedPgAttack {
                direction: self.fedpg_direction,
            },
            AttackType::Variance => BehaviorKind::VarianceAttack { z_max: self.z_max },
        }
    }
}

/// Everything a training run needs. Missing keys in a config file take the
/// CartPole FedPG-BR defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_name: String,
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    /// Defaults to the CartPole MLP or, on the chain MDP, a tabular softmax.
    pub policy: Option<PolicySpec>,
    pub num_agents: usize,
    /// Per-agent trajectory budget; the run stops once it is reached.
    pub max_trajectories: usize,
    pub max_rounds: Option<usize>,
    pub batch: BatchSpec,
    /// Server minibatch size `b_t`.
    pub minibatch: usize,
    /// Fixed inner epoch length of the SVRPG baseline.
    pub inner_steps: usize,
    pub step_size: f64,
    pub optimizer: OptimizerConfig,
    pub filter: FilterConfig,
    pub num_byzantine: usize,
    pub attack: Option<AttackType>,
    pub attack_params: AttackParams,
    /// Explicit per-agent behaviours; overrides `num_byzantine`/`attack`.
    pub behaviors: Option<Vec<AgentBehavior>>,
    pub estimator: EstimatorKind,
    pub baseline: f64,
    /// Upper clip on importance weights; unclipped when absent.
    pub importance_weight_cap: Option<f64>,
    pub eval_trajectories: usize,
    /// Online evaluation after every round.
    pub evaluate: bool,
    pub seed: u64,
}

/// Filter σ for the CartPole preset. The unnormalised GPOMDP estimator with
/// γ = 0.999 and H = 500 grows by two orders of magnitude as episodes
/// lengthen; this covers the late-training batch spread so the filter never
/// empties on clean rounds.
pub const CARTPOLE_SIGMA: f64 = 1e4;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::cartpole(Algorithm::FedpgBr, 10)
    }
}

impl RunConfig {
    /// CartPole hyperparameters for the given algorithm and federation size.
    pub fn cartpole(algorithm: Algorithm, num_agents: usize) -> Self {
        let (batch, inner_steps) = match algorithm {
            Algorithm::FedpgBr => (BatchSpec::Range { lo: 12, hi: 20 }, 0),
            Algorithm::FedGpomdp => (BatchSpec::Constant(16), 1),
            Algorithm::FedSvrpg => (BatchSpec::Constant(16), 3),
        };
        RunConfig {
            run_name: format!("cartpole_{}_k{num_agents}", algorithm.as_str()),
            algorithm,
            env: EnvConfig {
                id: "cartpole".into(),
                horizon: Some(500),
                test_horizon: Some(500),
                gamma: Some(0.999),
                chain: None,
            },
            policy: None,
            num_agents,
            max_trajectories: 5000,
            max_rounds: None,
            batch,
            minibatch: 4,
            inner_steps,
            step_size: 1e-3,
            optimizer: OptimizerConfig::default(),
            filter: FilterConfig {
                sigma: CARTPOLE_SIGMA,
                delta: 0.6,
                alpha: 0.3,
            },
            num_byzantine: 0,
            attack: None,
            attack_params: AttackParams::default(),
            behaviors: None,
            estimator: EstimatorKind::Gpomdp,
            baseline: 0.0,
            importance_weight_cap: None,
            eval_trajectories: 10,
            evaluate: true,
            seed: 0,
        }
    }

    /// Small chain-MDP run, cheap enough for unit tests.
    pub fn chain(algorithm: Algorithm, num_agents: usize) -> Self {
        RunConfig {
            run_name: format!("chain_{}_k{num_agents}", algorithm.as_str()),
            env: EnvConfig {
                id: "chain".into(),
                ..EnvConfig::default()
            },
            max_trajectories: 200,
            filter: FilterConfig {
                sigma: 5.0,
                delta: 0.6,
                alpha: 0.3,
            },
            step_size: 0.05,
            ..RunConfig::cartpole(algorithm, num_agents)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        RunConfig::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn behaviors(&self) -> Result<Vec<AgentBehavior>> {
        if let Some(b) = &self.behaviors {
            if b.len() != self.num_agents {
                return Err(Error::config(format!(
                    "{} behaviours listed for {} agents",
                    b.len(),
                    self.num_agents
                )));
            }
            return Ok(b.clone());
        }
        let kind = self.attack.map(|a| self.attack_params.behavior(a));
        assign_behaviors(self.num_agents, self.num_byzantine, kind)
    }

    pub fn policy_spec(&self, env: &dyn Environment) -> Result<PolicySpec> {
        if let Some(p) = &self.policy {
            return Ok(p.clone());
        }
        let n_actions = env
            .spec()
            .action_space
            .n_discrete()
            .ok_or_else(|| Error::config("only discrete action spaces are supported"))?;
        Ok(match normalize_env_id(&self.env.id).as_str() {
            "chain" => {
                let n_states = self.env.chain.as_ref().map_or(3, |c| c.n_states);
                PolicySpec::tabular(n_states, n_actions)
            }
            _ => PolicySpec::mlp(
                env.spec().state_dim,
                vec![16, 16],
                n_actions,
                crate::policy::Activation::Relu,
            ),
        })
    }

    pub fn estimator(&self, gamma: f64) -> Estimator {
        Estimator::new(self.estimator, gamma).with_baseline(Baseline::Constant(self.baseline))
    }

    pub fn weight_cap(&self) -> f64 {
        self.importance_weight_cap.unwrap_or(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(Error::config("at least one agent is required"));
        }
        if self.minibatch == 0 {
            return Err(Error::config("minibatch size must be at least 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::config("step size must be positive"));
        }
        if self.max_trajectories == 0 && self.max_rounds.is_none() {
            return Err(Error::config(
                "either max_trajectories or max_rounds must bound the run",
            ));
        }
        self.batch.validate()?;
        self.filter.validate()?;
        self.behaviors()?;
        Ok(())
    }
}
