//! Agent behaviours: honest reporting and the attack suite.
//!
//! A behaviour turns the gradient an agent computed this round into the
//! vector it actually sends. Random-action agents differ earlier, at
//! sampling time; see [`AgentBehavior::action_source`].

use std::collections::BTreeSet;

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::ActionSource;
use crate::linalg;
use crate::policy::PolicyParams;
use crate::rng::SimRng;

pub const DEFAULT_SIGN_FLIP: f64 = -2.5;
pub const DEFAULT_Z_MAX: f64 = 0.18;

/// How the FedPG attack displaces the colluders' mean by `3σ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FedPgDirection {
    /// A uniformly random unit vector drawn once per round, shared by all colluders.
    #[default]
    RandomUnit,
    /// Add `3σ̄` to every coordinate.
    PerCoordinate,
    /// Unit vector opposite to the colluders' mean gradient.
    AntiGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorKind {
    Good,
    RandomNoise {
        scale: f64,
    },
    RandomAction,
    SignFlip {
        factor: f64,
    },
    FedPgAttack {
        #[serde(default)]
        direction: FedPgDirection,
    },
    VarianceAttack {
        z_max: f64,
    },
}

/// Rounds in which an attacker misbehaves; honest otherwise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivitySchedule {
    #[default]
    Always,
    Rounds(BTreeSet<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBehavior {
    pub kind: BehaviorKind,
    #[serde(default)]
    pub schedule: ActivitySchedule,
}

impl AgentBehavior {
    pub fn good() -> Self {
        AgentBehavior::always(BehaviorKind::Good)
    }

    pub fn always(kind: BehaviorKind) -> Self {
        AgentBehavior {
            kind,
            schedule: ActivitySchedule::Always,
        }
    }

    pub fn is_byzantine(&self) -> bool {
        self.kind != BehaviorKind::Good
    }

    pub fn is_active(&self, round: usize) -> bool {
        match &self.schedule {
            ActivitySchedule::Always => true,
            ActivitySchedule::Rounds(r) => r.contains(&round),
        }
    }

    /// Attacks that need every colluder's honest gradient before reporting.
    pub fn is_colluding(&self) -> bool {
        matches!(
            self.kind,
            BehaviorKind::FedPgAttack { .. } | BehaviorKind::VarianceAttack { .. }
        )
    }

    pub fn action_source(&self, round: usize) -> ActionSource {
        if self.kind == BehaviorKind::RandomAction && self.is_active(round) {
            ActionSource::UniformRandom
        } else {
            ActionSource::Policy
        }
    }
}

/// Attack names as accepted in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackType {
    RandomNoise,
    RandomAction,
    SignFlip,
    Fedpg,
    Variance,
}

impl AttackType {
    pub fn default_behavior(self) -> BehaviorKind {
        match self {
            AttackType::RandomNoise => BehaviorKind::RandomNoise { scale: 1.0 },
            AttackType::RandomAction => BehaviorKind::RandomAction,
            AttackType::SignFlip => BehaviorKind::SignFlip {
                factor: DEFAULT_SIGN_FLIP,
            },
            AttackType::Fedpg => BehaviorKind::FedPgAttack {
                direction: FedPgDirection::default(),
            },
            AttackType::Variance => BehaviorKind::VarianceAttack {
                z_max: DEFAULT_Z_MAX,
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttackType::RandomNoise => "random-noise",
            AttackType::RandomAction => "random-action",
            AttackType::SignFlip => "sign-flip",
            AttackType::Fedpg => "fedpg",
            AttackType::Variance => "variance",
        }
    }
}

impl std::str::FromStr for AttackType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "random-noise" | "rn" => Ok(AttackType::RandomNoise),
            "random-action" | "ra" => Ok(AttackType::RandomAction),
            "sign-flip" | "sign-flipping" | "sf" => Ok(AttackType::SignFlip),
            "fedpg" | "fedpg-attack" => Ok(AttackType::Fedpg),
            "variance" | "variance-attack" | "va" => Ok(AttackType::Variance),
            other => Err(Error::config(format!("unknown attack type {other:?}"))),
        }
    }
}

/// `K` behaviours with the last `num_byzantine` ids running `attack`.
pub fn assign_behaviors(
    k: usize,
    num_byzantine: usize,
    attack: Option<BehaviorKind>,
) -> Result<Vec<AgentBehavior>> {
    if num_byzantine > k {
        return Err(Error::config(format!(
            "{num_byzantine} Byzantine agents among only {k}"
        )));
    }
    if num_byzantine > 0 && attack.is_none() {
        return Err(Error::config("num_byzantine > 0 requires an attack type"));
    }
    Ok((0..k)
        .map(|i| match &attack {
            Some(kind) if i >= k - num_byzantine => AgentBehavior::always(kind.clone()),
            _ => AgentBehavior::good(),
        })
        .collect())
}

/// What an agent knows when it decides what to send.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub broadcast_params: &'a PolicyParams,
    /// The agent's own batch gradient (from uniform-random rollouts for
    /// random-action agents).
    pub honest_gradient: &'a [f64],
    /// Honest gradients of every active colluder this round, by agent id.
    pub colluder_gradients: &'a [Vec<f64>],
    pub round: usize,
    /// Seed of the randomness shared among colluders this round.
    pub collusion_seed: u64,
}

pub fn report(
    behavior: &AgentBehavior,
    ctx: &AttackContext<'_>,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    if !behavior.is_active(ctx.round) {
        return Ok(ctx.honest_gradient.to_vec());
    }
    match &behavior.kind {
        BehaviorKind::Good | BehaviorKind::RandomAction => Ok(ctx.honest_gradient.to_vec()),
        BehaviorKind::RandomNoise { scale } => {
            let normal =
                Normal::new(0.0, *scale).map_err(|e| Error::config(format!("noise scale: {e}")))?;
            Ok((0..ctx.honest_gradient.len())
                .map(|_| normal.sample(rng))
                .collect())
        }
        BehaviorKind::SignFlip { factor } => {
            Ok(ctx.honest_gradient.iter().map(|g| factor * g).collect())
        }
        BehaviorKind::FedPgAttack { direction } => {
            require_colluders(ctx)?;
            let mut shared = crate::rng::seeded(ctx.collusion_seed);
            fedpg_attack(ctx.colluder_gradients, *direction, &mut shared)
        }
        BehaviorKind::VarianceAttack { z_max } => {
            require_colluders(ctx)?;
            variance_attack(ctx.colluder_gradients, *z_max)
        }
    }
}

fn require_colluders(ctx: &AttackContext<'_>) -> Result<()> {
    if ctx.colluder_gradients.is_empty() {
        Err(Error::Empty("colluder gradients for a colluding attack"))
    } else {
        Ok(())
    }
}

/// `μ̄ + 3σ̄·u` where `μ̄` is the colluders' mean and `2σ̄` their largest
/// pairwise distance.
pub fn fedpg_attack(
    colluders: &[Vec<f64>],
    direction: FedPgDirection,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let mean = linalg::mean(colluders).ok_or(Error::Empty("colluder gradients"))?;
    let mut max_dist: f64 = 0.0;
    for i in 0..colluders.len() {
        for j in i + 1..colluders.len() {
            max_dist = max_dist.max(linalg::distance(&colluders[i], &colluders[j]));
        }
    }
    let sigma_bar = max_dist / 2.0;
    let d = mean.len();
    let offset: Vec<f64> = match direction {
        FedPgDirection::RandomUnit => {
            let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = linalg::norm(&u);
            if n > 0.0 {
                linalg::scale(1.0 / n, &mut u);
            }
            u
        }
        FedPgDirection::PerCoordinate => vec![1.0; d],
        FedPgDirection::AntiGradient => {
            let n = linalg::norm(&mean);
            if n > 0.0 {
                mean.iter().map(|m| -m / n).collect()
            } else {
                vec![0.0; d]
            }
        }
    };
    Ok(mean
        .iter()
        .zip(&offset)
        .map(|(m, u)| m + 3.0 * sigma_bar * u)
        .collect())
}

/// `m − z_max·s` per coordinate, with `m` and `s` the colluders' mean and
/// population standard deviation (`s = 0` for a single colluder).
pub fn variance_attack(colluders: &[Vec<f64>], z_max: f64) -> Result<Vec<f64>> {
    let mean = linalg::mean(colluders).ok_or(Error::Empty("colluder gradients"))?;
    let n = colluders.len();
    if n < 2 {
        return Ok(mean);
    }
    let mut var = vec![0.0; mean.len()];
    for c in colluders {
        for ((v, x), m) in var.iter_mut().zip(c).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    Ok(mean
        .iter()
        .zip(&var)
        .map(|(m, v)| m - z_max * (v / n as f64).sqrt())
        .collect())
}
