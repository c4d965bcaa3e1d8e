use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

use super::config::{Algorithm, RunConfig};
use super::optimizer::Optimizer;
use crate::byzantine::{report, AgentBehavior, AttackContext, BehaviorKind};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::experiment::{evaluate, MetricsRecord};
use crate::filter::{fedpg_aggregate, plain_mean, FilterOutcome, FilterRule};
use crate::gradient::{
    batch_estimate, sample_batch, semi_stochastic_gradient, ActionSource, Estimator,
};
use crate::linalg;
use crate::policy::PolicyParams;
use crate::rng::{derive_seed, purpose, substream, SimRng};

/// Draws `N` with `P(N = k) = (1−Γ)Γ^k`, `k ≥ 0`, so `E[N] = Γ/(1−Γ)`.
pub fn sample_geometric(gamma: f64, rng: &mut SimRng) -> Result<u64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config(format!(
            "geometric parameter must lie in (0,1), got {gamma}"
        )));
    }
    let dist = Geometric::new(1.0 - gamma).map_err(|e| Error::config(e.to_string()))?;
    Ok(dist.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub rule: FilterRule,
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    pub threshold: f64,
    pub r1_accepted_count: Option<usize>,
}

impl FilterSummary {
    fn from_outcome(o: &FilterOutcome, k: usize) -> Self {
        FilterSummary {
            rule: o.rule_used,
            accepted: o.accepted.clone(),
            rejected: o.rejected(k),
            threshold: o.threshold_used,
            r1_accepted_count: o.r1_accepted_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedIterate {
    pub round: usize,
    pub params: PolicyParams,
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    /// Row 0 evaluates the initial parameters; row `t` follows round `t`.
    pub records: Vec<MetricsRecord>,
    /// Per round (index `t − 1`); `None` for unfiltered baselines.
    pub filter: Vec<Option<FilterSummary>>,
    /// Aggregated gradient `μ_t` per round.
    pub aggregates: Vec<Vec<f64>>,
    pub initial_params: PolicyParams,
    pub final_params: PolicyParams,
    /// `θ̃_a`, drawn uniformly over the round iterates.
    pub selected: Option<SelectedIterate>,
    /// Per agent.
    pub total_agent_trajectories: usize,
    pub total_server_trajectories: usize,
}

impl TrainingLog {
    pub fn rounds(&self) -> usize {
        self.aggregates.len()
    }

    pub fn final_return(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.mean_test_return)
    }
}

/// Reports of one round after the attack models have been applied.
#[derive(Debug, Clone)]
pub struct RoundReports {
    pub honest: Vec<Vec<f64>>,
    pub sent: Vec<Vec<f64>>,
}

/// Every agent samples `batch_size` trajectories under `params` and
/// reports. Agents run in parallel on independent streams keyed by
/// `(seed, agent, round)`, so the result is independent of scheduling.
pub fn collect_reports(
    env: &dyn Environment,
    params: &PolicyParams,
    behaviors: &[AgentBehavior],
    estimator: &Estimator,
    batch_size: usize,
    round: usize,
    seed: u64,
) -> Result<RoundReports> {
    let honest: Vec<Vec<f64>> = behaviors
        .par_iter()
        .enumerate()
        .map(|(k, behavior)| {
            let noise_only = behavior.is_active(round)
                && matches!(behavior.kind, BehaviorKind::RandomNoise { .. });
            if noise_only {
                return Ok(vec![0.0; params.dim()]);
            }
            let mut rng = substream(seed, &[purpose::AGENT, k as u64, round as u64]);
            let source = behavior.action_source(round);
            let trajs = sample_batch(env, params, batch_size, source, &mut rng)?;
            Ok(batch_estimate(&trajs, params, estimator)?.vector)
        })
        .collect::<Result<_>>()?;

    let colluders: Vec<Vec<f64>> = behaviors
        .iter()
        .zip(&honest)
        .filter(|(b, _)| b.is_colluding() && b.is_active(round))
        .map(|(_, g)| g.clone())
        .collect();
    let collusion_seed = derive_seed(seed, &[purpose::COLLUSION, round as u64]);

    let sent = behaviors
        .iter()
        .zip(&honest)
        .enumerate()
        .map(|(k, (behavior, g))| {
            let ctx = AttackContext {
                broadcast_params: params,
                honest_gradient: g,
                colluder_gradients: &colluders,
                round,
                collusion_seed,
            };
            report(
                behavior,
                &ctx,
                &mut substream(seed, &[purpose::ATTACK, k as u64, round as u64]),
            )
        })
        .collect::<Result<_>>()?;
    Ok(RoundReports { honest, sent })
}

#[derive(Debug, Clone)]
pub struct InnerLoop {
    pub params: PolicyParams,
    /// `v_n` for each inner step.
    pub gradients: Vec<Vec<f64>>,
    pub trajectories: usize,
}

/// Runs `n_steps` SCSG updates from `anchor` using server-side minibatches.
#[allow(clippy::too_many_arguments)]
pub fn scsg_inner_loop(
    env: &dyn Environment,
    anchor: &PolicyParams,
    mu: &[f64],
    n_steps: usize,
    minibatch: usize,
    estimator: &Estimator,
    weight_cap: f64,
    optimizer: &mut Optimizer,
    rng: &mut SimRng,
) -> Result<InnerLoop> {
    let mut current = anchor.clone();
    let mut gradients = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let trajs = sample_batch(env, &current, minibatch, ActionSource::Policy, rng)?;
        let v = semi_stochastic_gradient(&trajs, &current, anchor, mu, estimator, weight_cap)?;
        optimizer.apply(&mut current.theta, &v)?;
        if !linalg::all_finite(&current.theta) {
            return Err(Error::NonFinite("policy parameters"));
        }
        gradients.push(v);
    }
    Ok(InnerLoop {
        params: current,
        gradients,
        trajectories: n_steps * minibatch,
    })
}

pub fn run_fedpg_br(config: &RunConfig) -> Result<TrainingLog> {
    expect_algorithm(config, Algorithm::FedpgBr)?;
    run(config)
}

pub fn run_fed_gpomdp(config: &RunConfig) -> Result<TrainingLog> {
    expect_algorithm(config, Algorithm::FedGpomdp)?;
    run(config)
}

pub fn run_fed_svrpg(config: &RunConfig) -> Result<TrainingLog> {
    expect_algorithm(config, Algorithm::FedSvrpg)?;
    run(config)
}

fn expect_algorithm(config: &RunConfig, algorithm: Algorithm) -> Result<()> {
    if config.algorithm != algorithm {
        return Err(Error::config(format!(
            "config is for {}, not {}",
            config.algorithm, algorithm
        )));
    }
    Ok(())
}

struct RoundStep {
    summary: Option<FilterSummary>,
    mu: Vec<f64>,
    batch_size: usize,
    n_steps: usize,
    server_trajs: usize,
}

/// Dispatches on `config.algorithm`.
pub fn run(config: &RunConfig) -> Result<TrainingLog> {
    config.validate()?;
    let env = config.env.build()?;
    let test_env = config.env.build_test()?;
    let spec = config.policy_spec(env.as_ref())?;
    let estimator = config.estimator(env.spec().gamma);
    let behaviors = config.behaviors()?;
    let seed = config.seed;
    let k = config.num_agents;

    let initial = PolicyParams::init(spec, &mut substream(seed, &[purpose::INIT]))?;
    let mut theta = initial.clone();
    let mut optimizer = Optimizer::new(config.optimizer, config.step_size, theta.dim());
    let mut select_rng = substream(seed, &[purpose::SELECT]);

    let mut records = Vec::new();
    let mut filter_log = Vec::new();
    let mut aggregates = Vec::new();
    let mut selected: Option<SelectedIterate> = None;
    let mut agent_total = 0usize;
    let mut server_total = 0usize;

    let eval = |params: &PolicyParams, round: usize| -> Result<f64> {
        if config.evaluate {
            evaluate(
                params,
                test_env.as_ref(),
                config.eval_trajectories,
                &mut substream(seed, &[purpose::EVAL, round as u64]),
            )
        } else {
            Ok(f64::NAN)
        }
    };
    records.push(MetricsRecord {
        run_name: config.run_name.clone(),
        algorithm: config.algorithm.as_str().into(),
        seed,
        round: 0,
        cumulative_trajectories: 0,
        cumulative_server_trajectories: 0,
        mean_test_return: eval(&theta, 0)?,
        filter_rule: "none".into(),
        accepted_count: 0,
        rejected_ids: String::new(),
        batch_size: 0,
        inner_steps: 0,
        wall_time_ms: 0,
    });

    let mut round = 0usize;
    loop {
        if config.max_rounds.is_some_and(|m| round >= m) {
            break;
        }
        if config.max_trajectories > 0 && agent_total >= config.max_trajectories {
            break;
        }
        round += 1;
        let round_start = Instant::now();
        let step = (|| -> Result<RoundStep> {
            let batch_size = config
                .batch
                .sample(&mut substream(seed, &[purpose::BATCH_SIZE, round as u64]));
            let reports = collect_reports(
                env.as_ref(),
                &theta,
                &behaviors,
                &estimator,
                batch_size,
                round,
                seed,
            )?;

            let (summary, mu) = match config.algorithm {
                Algorithm::FedpgBr => {
                    let outcome = fedpg_aggregate(&reports.sent, batch_size, &config.filter)?;
                    (
                        Some(FilterSummary::from_outcome(&outcome, k)),
                        outcome.aggregate,
                    )
                }
                Algorithm::FedGpomdp | Algorithm::FedSvrpg => (None, plain_mean(&reports.sent)?),
            };

            let (n_steps, server_trajs) = match config.algorithm {
                Algorithm::FedGpomdp => {
                    optimizer.apply(&mut theta.theta, &mu)?;
                    (1, 0)
                }
                Algorithm::FedpgBr | Algorithm::FedSvrpg => {
                    let n_steps = if config.algorithm == Algorithm::FedpgBr {
                        let gamma = batch_size as f64 / (batch_size + config.minibatch) as f64;
                        sample_geometric(
                            gamma,
                            &mut substream(seed, &[purpose::GEOMETRIC, round as u64]),
                        )? as usize
                    } else {
                        config.inner_steps
                    };
                    let inner = scsg_inner_loop(
                        env.as_ref(),
                        &theta,
                        &mu,
                        n_steps,
                        config.minibatch,
                        &estimator,
                        config.weight_cap(),
                        &mut optimizer,
                        &mut substream(seed, &[purpose::SERVER, round as u64]),
                    )?;
                    theta = inner.params;
                    (n_steps, inner.trajectories)
                }
            };
            Ok(RoundStep {
                summary,
                mu,
                batch_size,
                n_steps,
                server_trajs,
            })
        })();
        let RoundStep {
            summary,
            mu,
            batch_size,
            n_steps,
            server_trajs,
        } = step.map_err(|e| e.in_round(round))?;

        agent_total += batch_size;
        server_total += server_trajs;
        if select_rng.random_range(0..round) == 0 {
            selected = Some(SelectedIterate {
                round,
                params: theta.clone(),
            });
        }
        let mean_test_return = eval(&theta, round).map_err(|e| e.in_round(round))?;
        let (filter_rule, accepted_count, rejected_ids) = match &summary {
            Some(s) => (
                s.rule.to_string(),
                s.accepted.len(),
                s.rejected
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            None => ("none".into(), k, String::new()),
        };
        records.push(MetricsRecord {
            run_name: config.run_name.clone(),
            algorithm: config.algorithm.as_str().into(),
            seed,
            round,
            cumulative_trajectories: agent_total,
            cumulative_server_trajectories: server_total,
            mean_test_return,
            filter_rule,
            accepted_count,
            rejected_ids,
            batch_size,
            inner_steps: n_steps,
            wall_time_ms: round_start.elapsed().as_millis() as u64,
        });
        filter_log.push(summary);
        aggregates.push(mu);
    }

    Ok(TrainingLog {
        records,
        filter: filter_log,
        aggregates,
        initial_params: initial,
        final_params: theta,
        selected,
        total_agent_trajectories: agent_total,
        total_server_trajectories: server_total,
    })
}
