use serde::{Deserialize, Serialize};

use super::{check_action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const MAX_CHAIN_STATES: usize = 6;
pub const MAX_CHAIN_ACTIONS: usize = 3;
const STOCHASTIC_TOL: f64 = 1e-12;

/// Tables of a small tabular MDP.
///
/// `transitions[s][a][s']` is the probability of moving from `s` to `s'`
/// under `a`; `rewards[s][a]` is the deterministic reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub horizon: usize,
    pub gamma: f64,
    pub reward_bound: f64,
}

impl Default for ChainMdpSpec {
    /// Three states in a line; action 0 drifts left, action 1 drifts right,
    /// both with slip. The right end pays best.
    fn default() -> Self {
        ChainMdpSpec {
            n_states: 3,
            n_actions: 2,
            transitions: vec![
                vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0]],
                vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.2, 0.8]],
                vec![vec![0.0, 0.9, 0.1], vec![0.0, 0.2, 0.8]],
            ],
            rewards: vec![vec![0.0, 0.1], vec![0.2, 0.0], vec![1.0, 0.5]],
            initial: vec![0.6, 0.3, 0.1],
            horizon: 3,
            gamma: 0.9,
            reward_bound: 1.0,
        }
    }
}

impl ChainMdpSpec {
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || ns > MAX_CHAIN_STATES {
            return Err(Error::config(format!(
                "chain n_states must be in 1..={MAX_CHAIN_STATES}, got {ns}"
            )));
        }
        if na == 0 || na > MAX_CHAIN_ACTIONS {
            return Err(Error::config(format!(
                "chain n_actions must be in 1..={MAX_CHAIN_ACTIONS}, got {na}"
            )));
        }
        if self.transitions.len() != ns || self.rewards.len() != ns || self.initial.len() != ns {
            return Err(Error::config("chain tables must have one row per state"));
        }
        check_distribution(&self.initial, "initial distribution")?;
        for (s, (rows, rewards)) in self.transitions.iter().zip(&self.rewards).enumerate() {
            if rows.len() != na || rewards.len() != na {
                return Err(Error::config(format!("state {s}: expected {na} actions")));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != ns {
                    return Err(Error::config(format!(
                        "transition row ({s},{a}) has {} entries",
                        row.len()
                    )));
                }
                check_distribution(row, "transition row")?;
            }
            for &r in rewards {
                if !(0.0..=self.reward_bound).contains(&r) {
                    return Err(Error::config(format!(
                        "reward {r} outside [0, {}]",
                        self.reward_bound
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::config(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::config(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// States are encoded as a one-element vector holding the state index.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    tables: ChainMdpSpec,
    spec: EnvSpec,
}

impl ChainMdp {
    pub fn new(tables: ChainMdpSpec) -> Result<Self> {
        tables.validate()?;
        let spec = EnvSpec {
            state_dim: 1,
            action_space: ActionSpace::Discrete(tables.n_actions),
            horizon: tables.horizon,
            gamma: tables.gamma,
            reward_bound: tables.reward_bound,
        };
        spec.validate()?;
        Ok(ChainMdp { tables, spec })
    }

    pub fn tables(&self) -> &ChainMdpSpec {
        &self.tables
    }

    pub fn state_index(&self, state: &[f64]) -> Result<usize> {
        let s = state.first().copied().ok_or(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        })?;
        if s < 0.0 || s.fract() != 0.0 || s as usize >= self.tables.n_states {
            return Err(Error::config(format!("invalid chain state {s}")));
        }
        Ok(s as usize)
    }

    pub fn encode(s: usize) -> Vec<f64> {
        vec![s as f64]
    }
}

impl Default for ChainMdp {
    fn default() -> Self {
        ChainMdp::new(ChainMdpSpec::default()).expect("default chain tables are valid")
    }
}

impl Environment for ChainMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut SimRng) -> Vec<f64> {
        ChainMdp::encode(crate::rng::sample_categorical(&self.tables.initial, rng))
    }

    fn step(&self, state: &[f64], action: usize, rng: &mut SimRng) -> Result<StepResult> {
        check_action(action, self.tables.n_actions)?;
        let s = self.state_index(state)?;
        let next = crate::rng::sample_categorical(&self.tables.transitions[s][action], rng);
        Ok(StepResult {
            next_state: ChainMdp::encode(next),
            reward: self.tables.rewards[s][action],
            done: false,
        })
    }

    fn with_horizon(&self, horizon: usize) -> Box<dyn Environment> {
        let mut tables = self.tables.clone();
        tables.horizon = horizon;
        Box::new(ChainMdp::new(tables).expect("horizon override keeps tables valid"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn with_initial(initial: Vec<f64>) -> ChainMdp {
        ChainMdp::new(ChainMdpSpec {
            initial,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn degenerate_initial_distribution() {
        let env = with_initial(vec![1.0, 0.0, 0.0]);
        let mut rng = seeded(11);
        for _ in 0..100 {
            assert_eq!(env.reset(&mut rng), vec![0.0]);
        }
    }

    #[test]
    fn initial_frequency_matches_distribution() {
        let env = with_initial(vec![0.5, 0.5, 0.0]);
        let mut rng = seeded(12);
        let n = 100_000;
        let zeros = (0..n).filter(|_| env.reset(&mut rng)[0] == 0.0).count();
        let freq = zeros as f64 / n as f64;
        assert!((0.49..=0.51).contains(&freq), "freq {freq}");
    }

    #[test]
    fn deterministic_transition_gives_unique_successor() {
        let mut spec = ChainMdpSpec::default();
        spec.transitions[1][1] = vec![0.0, 0.0, 1.0];
        let env = ChainMdp::new(spec).unwrap();
        let mut rng = seeded(0);
        for _ in 0..50 {
            let r = env.step(&[1.0], 1, &mut rng).unwrap();
            assert_eq!(r.next_state, vec![2.0]);
            assert_eq!(r.reward, 0.0);
        }
    }

    #[test]
    fn transition_frequencies_within_one_percent() {
        let mut spec = ChainMdpSpec::default();
        spec.transitions[0][0] = vec![0.3, 0.7, 0.0];
        let env = ChainMdp::new(spec).unwrap();
        let mut rng = seeded(99);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[env.step(&[0.0], 0, &mut rng).unwrap().next_state[0] as usize] += 1;
        }
        assert!((counts[0] as f64 / n as f64 - 0.3).abs() <= 0.01);
        assert!((counts[1] as f64 / n as f64 - 0.7).abs() <= 0.01);
        assert_eq!(counts[2], 0);
    }

    #[test]
    fn rejects_bad_tables() {
        let mut spec = ChainMdpSpec::default();
        spec.transitions[0][0] = vec![0.5, 0.4, 0.0];
        assert!(ChainMdp::new(spec).is_err());

        let mut spec = ChainMdpSpec::default();
        spec.rewards[0][0] = 2.0;
        assert!(ChainMdp::new(spec).is_err());

        let spec = ChainMdpSpec {
            n_states: 7,
            ..Default::default()
        };
        assert!(ChainMdp::new(spec).is_err());
    }

    #[test]
    fn invalid_action_errors() {
        let env = ChainMdp::default();
        assert!(env.step(&[0.0], 2, &mut seeded(0)).is_err());
    }

    #[test]
    fn tables_load_from_nested_config() {
        let text = r#"
            n_states = 2
            n_actions = 2
            transitions = [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]
            rewards = [[0.0, 1.0], [0.5, 0.0]]
            initial = [1.0, 0.0]
            horizon = 2
            gamma = 0.5
            reward_bound = 1.0
        "#;
        let spec: ChainMdpSpec = toml::from_str(text).unwrap();
        let env = ChainMdp::new(spec).unwrap();
        assert_eq!(env.spec().horizon, 2);
    }
}
