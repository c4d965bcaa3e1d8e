//! Trajectory sampling and policy-gradient estimators.
//!
//! Both estimators are written as `Σ_t w_t ∇log π(a_t|s_t)` with per-step
//! weights:
//!
//! - REINFORCE: `w_t = Σ_h γ^h r_h − C_b` for every `t`;
//! - GPOMDP: `w_t = Σ_{h≥t} (γ^h r_h − C_{b_h})`, which regroups
//!   `Σ_h [Σ_{t≤h} ∇log π(a_t|s_t)] (γ^h r_h − C_{b_h})`.
//!
//! Early-terminated trajectories sum over their actual length and discount
//! with the true step index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg;
use crate::policy::PolicyParams;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Fingerprint of the parameters that generated the trajectory.
    pub behavior_params_id: u64,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>, behavior_params_id: u64) -> Self {
        Trajectory {
            steps,
            behavior_params_id,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut discount = 1.0;
        let mut total = 0.0;
        for s in &self.steps {
            total += discount * s.reward;
            discount *= gamma;
        }
        total
    }
}

/// Where actions come from during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    Policy,
    /// Uniform over the action space, ignoring the policy.
    UniformRandom,
}

/// Rolls out `π_θ` for at most `H` steps, stopping early on `done`.
pub fn sample_trajectory(
    env: &dyn Environment,
    params: &PolicyParams,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    sample_trajectory_with(env, params, ActionSource::Policy, rng)
}

pub fn sample_trajectory_with(
    env: &dyn Environment,
    params: &PolicyParams,
    source: ActionSource,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    let spec = env.spec();
    if spec.action_space.n_discrete() != Some(params.n_actions()) {
        return Err(Error::config(
            "policy action count does not match the environment",
        ));
    }
    let mut state = env.reset(rng);
    let mut steps = Vec::with_capacity(spec.horizon.min(1024));
    for _ in 0..spec.horizon {
        let action = match source {
            ActionSource::Policy => params.act(&state, rng)?.0,
            ActionSource::UniformRandom => rng.random_range(0..params.n_actions()),
        };
        let result = env.step(&state, action, rng)?;
        steps.push(Step {
            state,
            action,
            reward: result.reward,
        });
        state = result.next_state;
        if result.done {
            break;
        }
    }
    Ok(Trajectory::new(steps, params.fingerprint()))
}

pub fn sample_batch(
    env: &dyn Environment,
    params: &PolicyParams,
    n: usize,
    source: ActionSource,
    rng: &mut SimRng,
) -> Result<Vec<Trajectory>> {
    (0..n)
        .map(|_| sample_trajectory_with(env, params, source, rng))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Reinforce,
    #[default]
    Gpomdp,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reinforce" => Ok(EstimatorKind::Reinforce),
            "gpomdp" => Ok(EstimatorKind::Gpomdp),
            other => Err(Error::config(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Baseline subtracted from returns: `C_b` for REINFORCE, `C_{b_h}` for GPOMDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Baseline {
    Constant(f64),
    /// `C_{b_h}` by step index; steps past the end use 0.
    PerStep(Vec<f64>),
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::Constant(0.0)
    }
}

impl Baseline {
    pub fn at(&self, h: usize) -> f64 {
        match self {
            Baseline::Constant(c) => *c,
            Baseline::PerStep(v) => v.get(h).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub kind: EstimatorKind,
    pub gamma: f64,
    pub baseline: Baseline,
}

impl Estimator {
    pub fn new(kind: EstimatorKind, gamma: f64) -> Self {
        Estimator {
            kind,
            gamma,
            baseline: Baseline::default(),
        }
    }

    pub fn with_baseline(mut self, baseline: Baseline) -> Self {
        self.baseline = baseline;
        self
    }

    fn step_weights(&self, traj: &Trajectory) -> Vec<f64> {
        let n = traj.len();
        match self.kind {
            EstimatorKind::Reinforce => {
                let ret = traj.discounted_return(self.gamma) - self.baseline.at(0);
                vec![ret; n]
            }
            EstimatorKind::Gpomdp => {
                let mut terms = Vec::with_capacity(n);
                let mut discount = 1.0;
                for (h, s) in traj.steps.iter().enumerate() {
                    terms.push(discount * s.reward - self.baseline.at(h));
                    discount *= self.gamma;
                }
                let mut suffix = 0.0;
                for t in terms.iter_mut().rev() {
                    suffix += *t;
                    *t = suffix;
                }
                terms
            }
        }
    }

    /// Returns `g(τ|θ)` and `log Π_h π_θ(a_h|s_h)` from a single pass.
    pub fn gradient_and_log_prob(
        &self,
        traj: &Trajectory,
        params: &PolicyParams,
    ) -> Result<(Vec<f64>, f64)> {
        let weights = self.step_weights(traj);
        let mut g = vec![0.0; params.dim()];
        let mut log_prob = 0.0;
        for (step, w) in traj.steps.iter().zip(weights) {
            log_prob += params.accumulate_grad_log_prob(&step.state, step.action, w, &mut g)?;
        }
        if !linalg::all_finite(&g) {
            return Err(Error::NonFinite("per-trajectory gradient"));
        }
        Ok((g, log_prob))
    }

    /// Per-trajectory estimate `g(τ|θ)`.
    pub fn gradient(&self, traj: &Trajectory, params: &PolicyParams) -> Result<Vec<f64>> {
        Ok(self.gradient_and_log_prob(traj, params)?.0)
    }
}

/// `[Σ_h ∇log π(a_h|s_h)] · [Σ_h γ^h r_h − C_b]`.
pub fn reinforce_estimate(
    traj: &Trajectory,
    params: &PolicyParams,
    gamma: f64,
    baseline: f64,
) -> Result<Vec<f64>> {
    Estimator::new(EstimatorKind::Reinforce, gamma)
        .with_baseline(Baseline::Constant(baseline))
        .gradient(traj, params)
}

/// `Σ_h [Σ_{t≤h} ∇log π(a_t|s_t)] (γ^h r_h − C_{b_h})`.
pub fn gpomdp_estimate(
    traj: &Trajectory,
    params: &PolicyParams,
    gamma: f64,
    baselines: Baseline,
) -> Result<Vec<f64>> {
    Estimator::new(EstimatorKind::Gpomdp, gamma)
        .with_baseline(baselines)
        .gradient(traj, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub n_trajectories: usize,
}

/// Mean of per-trajectory estimates, summed in batch order.
pub fn batch_estimate(
    trajs: &[Trajectory],
    params: &PolicyParams,
    estimator: &Estimator,
) -> Result<GradientEstimate> {
    if trajs.is_empty() {
        return Err(Error::Empty("trajectory batch"));
    }
    let per_traj: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| estimator.gradient(t, params))
        .collect::<Result<_>>()?;
    Ok(GradientEstimate {
        vector: linalg::mean(&per_traj).expect("nonempty"),
        n_trajectories: trajs.len(),
    })
}

/// `ω = p(τ|θ_old) / p(τ|θ_new)`; transition and initial-state factors cancel.
pub fn importance_weight(
    traj: &Trajectory,
    params_new: &PolicyParams,
    params_old: &PolicyParams,
) -> Result<f64> {
    let log_old = params_old.trajectory_log_prob(traj)?;
    let log_new = params_new.trajectory_log_prob(traj)?;
    Ok((log_old - log_new).exp())
}

/// `(1/b) Σ_j [g(τ_j|θ_n) − ω(τ_j|θ_n,θ_0) g(τ_j|θ_0)] + μ`.
///
/// `weight_cap` clips ω from above; pass `f64::INFINITY` for no clipping.
pub fn semi_stochastic_gradient(
    minibatch: &[Trajectory],
    params_n: &PolicyParams,
    params_0: &PolicyParams,
    mu: &[f64],
    estimator: &Estimator,
    weight_cap: f64,
) -> Result<Vec<f64>> {
    if minibatch.is_empty() {
        return Err(Error::Empty("semi-stochastic minibatch"));
    }
    if mu.len() != params_n.dim() {
        return Err(Error::DimensionMismatch {
            expected: params_n.dim(),
            got: mu.len(),
        });
    }
    let mut acc = vec![0.0; params_n.dim()];
    for traj in minibatch {
        let (g_n, log_n) = estimator.gradient_and_log_prob(traj, params_n)?;
        let (g_0, log_0) = estimator.gradient_and_log_prob(traj, params_0)?;
        let omega = (log_0 - log_n).exp().min(weight_cap);
        for ((a, gn), g0) in acc.iter_mut().zip(&g_n).zip(&g_0) {
            *a += gn - omega * g0;
        }
    }
    let b = minibatch.len() as f64;
    let v: Vec<f64> = acc.iter().zip(mu).map(|(a, m)| a / b + m).collect();
    if !linalg::all_finite(&v) {
        return Err(Error::NonFinite("semi-stochastic gradient"));
    }
    Ok(v)
}

/// Spread of per-trajectory estimates around their batch mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaReport {
    pub n_trajectories: usize,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    /// Largest distance between two batch means of size `batch_size`,
    /// halved; the spread the filter actually sees.
    pub batch_half_spread: f64,
    pub batch_size: usize,
}

/// Warm-up estimate of the bounded-deviation constant σ. Reports only; the
/// filter never reads it.
pub fn estimate_sigma(
    env: &dyn Environment,
    params: &PolicyParams,
    estimator: &Estimator,
    n_trajectories: usize,
    batch_size: usize,
    rng: &mut SimRng,
) -> Result<SigmaReport> {
    if n_trajectories == 0 || batch_size == 0 {
        return Err(Error::Empty("warm-up batch"));
    }
    let trajs = sample_batch(env, params, n_trajectories, ActionSource::Policy, rng)?;
    let grads: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| estimator.gradient(t, params))
        .collect::<Result<_>>()?;
    let center = linalg::mean(&grads).expect("nonempty");
    let devs: Vec<f64> = grads.iter().map(|g| linalg::distance(g, &center)).collect();
    let means: Vec<Vec<f64>> = grads
        .chunks(batch_size)
        .filter(|c| c.len() == batch_size)
        .map(|c| linalg::mean(c).unwrap())
        .collect();
    let mut spread: f64 = 0.0;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            spread = spread.max(linalg::distance(&means[i], &means[j]));
        }
    }
    Ok(SigmaReport {
        n_trajectories,
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        mean_deviation: devs.iter().sum::<f64>() / devs.len() as f64,
        batch_half_spread: spread / 2.0,
        batch_size,
    })
}
