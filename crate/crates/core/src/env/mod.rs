//! Episodic MDPs.
//!
//! Environments are immutable descriptions: the state is carried by the
//! caller and passed back into [`Environment::step`], so one instance can be
//! shared by every agent and the outcome depends only on (state, action, rng).

mod cartpole;
mod chain;

pub use cartpole::{CartPole, CartPoleParams};
pub use chain::{ChainMdp, ChainMdpSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    pub fn n_discrete(&self) -> Option<usize> {
        match self {
            ActionSpace::Discrete(n) => Some(*n),
            ActionSpace::Continuous { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub gamma: f64,
    pub reward_bound: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::config("state_dim must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!(
                "discount must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if !(self.reward_bound > 0.0) {
            return Err(Error::config("reward bound must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    fn reset(&self, rng: &mut SimRng) -> Vec<f64>;

    fn step(&self, state: &[f64], action: usize, rng: &mut SimRng) -> Result<StepResult>;

    fn n_actions(&self) -> usize {
        self.spec().action_space.n_discrete().unwrap_or(0)
    }

    /// Same dynamics with a different episode horizon (train vs test).
    fn with_horizon(&self, horizon: usize) -> Box<dyn Environment>;
}

pub(crate) fn check_action(action: usize, n_actions: usize) -> Result<()> {
    if action >= n_actions {
        Err(Error::InvalidAction { action, n_actions })
    } else {
        Ok(())
    }
}

/// Environment selection as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// `"cartpole"` or `"chain"`.
    pub id: String,
    /// Training horizon; defaults to the environment's own.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub test_horizon: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Custom chain tables; the default chain is used when absent.
    #[serde(default)]
    pub chain: Option<ChainMdpSpec>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            id: "cartpole".into(),
            horizon: None,
            test_horizon: None,
            gamma: None,
            chain: None,
        }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        let env: Box<dyn Environment> = match normalize_env_id(&self.id).as_str() {
            "cartpole" => {
                let mut params = CartPoleParams::default();
                if let Some(h) = self.horizon {
                    params.horizon = h;
                }
                if let Some(g) = self.gamma {
                    params.gamma = g;
                }
                Box::new(CartPole::new(params)?)
            }
            "chain" => {
                let mut spec = self.chain.clone().unwrap_or_default();
                if let Some(h) = self.horizon {
                    spec.horizon = h;
                }
                if let Some(g) = self.gamma {
                    spec.gamma = g;
                }
                Box::new(ChainMdp::new(spec)?)
            }
            other => return Err(Error::config(format!("unknown environment id {other:?}"))),
        };
        Ok(env)
    }

    pub fn build_test(&self) -> Result<Box<dyn Environment>> {
        let env = self.build()?;
        Ok(match self.test_horizon {
            Some(h) => env.with_horizon(h),
            None => env,
        })
    }
}

/// Accepts gym-style names such as `CartPole-v1`.
pub fn normalize_env_id(id: &str) -> String {
    let lower = id.to_ascii_lowercase();
    let base = lower.split('-').next().unwrap_or("");
    match base {
        "cartpole" => "cartpole".into(),
        "chain" => "chain".into(),
        _ => lower,
    }
}
