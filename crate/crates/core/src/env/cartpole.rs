use serde::{Deserialize, Serialize};

use rand::Rng;

use super::{check_action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::Result;
use crate::rng::SimRng;

/// Classic cart-pole constants with explicit Euler integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
    pub init_range: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            x_threshold: 2.4,
            init_range: 0.05,
            horizon: 500,
            gamma: 0.999,
        }
    }
}

/// State is `[x, x_dot, theta, theta_dot]`; action 0 pushes left, 1 pushes right.
#[derive(Debug, Clone)]
pub struct CartPole {
    params: CartPoleParams,
    spec: EnvSpec,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self> {
        let spec = EnvSpec {
            state_dim: 4,
            action_space: ActionSpace::Discrete(2),
            horizon: params.horizon,
            gamma: params.gamma,
            reward_bound: 1.0,
        };
        spec.validate()?;
        Ok(CartPole { params, spec })
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole::new(CartPoleParams::default()).expect("default cart-pole parameters are valid")
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut SimRng) -> Vec<f64> {
        let r = self.params.init_range;
        (0..4).map(|_| rng.random_range(-r..=r)).collect()
    }

    fn step(&self, state: &[f64], action: usize, _rng: &mut SimRng) -> Result<StepResult> {
        check_action(action, 2)?;
        if state.len() != 4 {
            return Err(crate::Error::DimensionMismatch {
                expected: 4,
                got: state.len(),
            });
        }
        let p = &self.params;
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let force = if action == 1 {
            p.force_mag
        } else {
            -p.force_mag
        };
        let total_mass = p.cart_mass + p.pole_mass;
        let polemass_length = p.pole_mass * p.half_length;
        let (sin, cos) = theta.sin_cos();

        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

        let next_state = vec![
            x + p.tau * x_dot,
            x_dot + p.tau * x_acc,
            theta + p.tau * theta_dot,
            theta_dot + p.tau * theta_acc,
        ];
        let done = next_state[0].abs() > p.x_threshold || next_state[2].abs() > p.theta_threshold;
        Ok(StepResult {
            next_state,
            reward: 1.0,
            done,
        })
    }

    fn with_horizon(&self, horizon: usize) -> Box<dyn Environment> {
        let mut params = self.params.clone();
        params.horizon = horizon;
        Box::new(CartPole::new(params).expect("horizon override keeps parameters valid"))
    }
}
