//! Self-checks run by `fedpg verify`: each compares an implementation
//! against an oracle and reports the worst discrepancy.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::byzantine::{
    fedpg_attack, variance_attack, AgentBehavior, AttackContext, BehaviorKind, FedPgDirection,
};
use crate::env::ChainMdp;
use crate::error::Result;
use crate::experiment::records_to_csv;
use crate::federation::{run, sample_geometric, Algorithm, RunConfig};
use crate::filter::{fedpg_aggregate, FilterConfig, FilterRule};
use crate::gradient::{semi_stochastic_gradient, Estimator, EstimatorKind};
use crate::linalg::{distance, relative_error};
use crate::oracle::{
    exact_gradient, exact_objective, expectation, finite_diff, theory_constants, GradientForm,
};
use crate::policy::{PolicyParams, PolicySpec};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult {
            name,
            passed,
            detail,
        }
    }
}

/// Problem sizes; `quick` keeps the whole suite to a few seconds.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub fd_triples: usize,
    pub parameter_pairs: usize,
    pub filter_instances: usize,
    pub geometric_draws: usize,
    pub seed: u64,
}

impl VerifyOptions {
    pub fn quick() -> Self {
        VerifyOptions {
            fd_triples: 100,
            parameter_pairs: 20,
            filter_instances: 2000,
            geometric_draws: 200_000,
            seed: 0,
        }
    }

    pub fn full() -> Self {
        VerifyOptions {
            fd_triples: 100,
            parameter_pairs: 50,
            filter_instances: 10_000,
            geometric_draws: 1_000_000,
            seed: 0,
        }
    }
}

type Check = fn(&VerifyOptions) -> Result<(bool, String)>;

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    let checks: Vec<(&'static str, Check)> = vec![
        ("score function vs finite differences (tabular)", |o| {
            score_fd(o, PolicySpec::tabular(3, 2), 1)
        }),
        ("score function vs finite differences (cartpole mlp)", |o| {
            score_fd(o, PolicySpec::cartpole(), 4)
        }),
        (
            "exact gradient vs finite differences of J",
            exact_gradient_fd,
        ),
        (
            "REINFORCE / GPOMDP unbiased by enumeration",
            estimator_unbiased,
        ),
        ("importance-weighted gradient unbiased", importance_unbiased),
        (
            "semi-stochastic gradient expectation",
            semi_stochastic_expectation,
        ),
        (
            "filter good inclusion and contamination bound",
            filter_properties,
        ),
        ("geometric inner-loop length mean", geometric_mean),
        ("attack models", attack_models),
        ("R1 threshold formula", threshold_formula),
        ("theory constants worked example", theory_example),
        ("run determinism (chain MDP)", determinism),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f(opts) {
            Ok((passed, detail)) => CheckResult::new(name, passed, detail),
            Err(e) => CheckResult::new(name, false, format!("error: {e}")),
        })
        .collect()
}

fn random_params(spec: PolicySpec, scale: f64, rng: &mut SimRng) -> Result<PolicyParams> {
    let theta = (0..spec.param_count())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    PolicyParams::new(theta, spec)
}

fn score_fd(opts: &VerifyOptions, spec: PolicySpec, state_dim: usize) -> Result<(bool, String)> {
    let mut rng = seeded(opts.seed);
    let n_states = 3;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.fd_triples {
        let params = random_params(spec.clone(), 1.0, &mut rng)?;
        let state: Vec<f64> = if state_dim == 1 {
            vec![rng.random_range(0..n_states) as f64]
        } else {
            (0..state_dim)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect()
        };
        let action = rng.random_range(0..params.n_actions());
        let analytic = params.grad_log_prob(&state, action)?;
        let numeric = finite_diff(
            |th| params.with_theta(th.to_vec()).log_prob(&state, action),
            &params.theta,
            1e-5,
        )?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok((
        worst <= 1e-5,
        format!(
            "max relative error {worst:.2e} over {} triples",
            opts.fd_triples
        ),
    ))
}

fn chain_params(mdp: &ChainMdp, rng: &mut SimRng) -> Result<PolicyParams> {
    let t = mdp.tables();
    random_params(PolicySpec::tabular(t.n_states, t.n_actions), 2.0, rng)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn exact_gradient_fd(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mdp = ChainMdp::default();
    let mut rng = seeded(opts.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.parameter_pairs {
        let params = chain_params(&mdp, &mut rng)?;
        let exact = exact_gradient(&mdp, &params, GradientForm::Likelihood)?;
        let fd = finite_diff(
            |th| exact_objective(&mdp, &params.with_theta(th.to_vec())),
            &params.theta,
            1e-5,
        )?;
        worst = worst.max(relative_error(&exact, &fd));
    }
    Ok((worst <= 1e-8, format!("max relative error {worst:.2e}")))
}

fn estimators() -> Vec<Estimator> {
    let gamma = ChainMdp::default().tables().gamma;
    vec![
        Estimator::new(EstimatorKind::Reinforce, gamma),
        Estimator::new(EstimatorKind::Gpomdp, gamma),
        Estimator::new(EstimatorKind::Reinforce, gamma)
            .with_baseline(crate::gradient::Baseline::Constant(0.4)),
        Estimator::new(EstimatorKind::Gpomdp, gamma)
            .with_baseline(crate::gradient::Baseline::PerStep(vec![0.3, 0.2, 0.1])),
    ]
}

fn estimator_unbiased(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mdp = ChainMdp::default();
    let mut rng = seeded(opts.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.parameter_pairs {
        let params = chain_params(&mdp, &mut rng)?;
        let truth = exact_gradient(&mdp, &params, GradientForm::Recursive)?;
        for est in estimators() {
            let mean = expectation(&mdp, &params, |tau| est.gradient(tau, &params))?;
            worst = worst.max(max_abs_diff(&mean, &truth));
        }
    }
    Ok((worst <= 1e-10, format!("max coordinate error {worst:.2e}")))
}

fn importance_unbiased(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mdp = ChainMdp::default();
    let mut rng = seeded(opts.seed.wrapping_add(1));
    let est = Estimator::new(EstimatorKind::Gpomdp, mdp.tables().gamma);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.parameter_pairs {
        let theta_n = chain_params(&mdp, &mut rng)?;
        let theta_0 = chain_params(&mdp, &mut rng)?;
        let truth = exact_gradient(&mdp, &theta_0, GradientForm::Recursive)?;
        let mean = expectation(&mdp, &theta_n, |tau| {
            let omega = crate::gradient::importance_weight(tau, &theta_n, &theta_0)?;
            let mut g = est.gradient(tau, &theta_0)?;
            crate::linalg::scale(omega, &mut g);
            Ok(g)
        })?;
        worst = worst.max(max_abs_diff(&mean, &truth));
    }
    Ok((worst <= 1e-10, format!("max coordinate error {worst:.2e}")))
}

fn semi_stochastic_expectation(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mdp = ChainMdp::default();
    let mut rng = seeded(opts.seed.wrapping_add(2));
    let est = Estimator::new(EstimatorKind::Gpomdp, mdp.tables().gamma);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.parameter_pairs {
        let theta_n = chain_params(&mdp, &mut rng)?;
        let theta_0 = chain_params(&mdp, &mut rng)?;
        let mu: Vec<f64> = (0..theta_n.dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mean = expectation(&mdp, &theta_n, |tau| {
            semi_stochastic_gradient(
                std::slice::from_ref(tau),
                &theta_n,
                &theta_0,
                &mu,
                &est,
                f64::INFINITY,
            )
        })?;
        let g_n = exact_gradient(&mdp, &theta_n, GradientForm::Recursive)?;
        let g_0 = exact_gradient(&mdp, &theta_0, GradientForm::Recursive)?;
        let expected: Vec<f64> = g_n
            .iter()
            .zip(&g_0)
            .zip(&mu)
            .map(|((a, b), m)| a - b + m)
            .collect();
        worst = worst.max(max_abs_diff(&mean, &expected));
    }
    Ok((worst <= 1e-10, format!("max coordinate error {worst:.2e}")))
}

/// How the good reports of a [`FilterInstance`] were drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoodRegime {
    /// Each good report is the mean of `B` samples within `σ` of the center.
    BatchMean,
    /// Uniform in the ball of radius `σ·min(1, √(V/B))`.
    Concentrated,
    /// Uniform in the ball of radius `σ`.
    Loose,
}

/// A randomized filter instance: good reports near `center`, Byzantine
/// reports from one of several placements.
#[derive(Debug, Clone)]
pub struct FilterInstance {
    pub reports: Vec<Vec<f64>>,
    pub good: Vec<usize>,
    pub center: Vec<f64>,
    pub batch_size: usize,
    pub config: FilterConfig,
    pub regime: GoodRegime,
}

impl FilterInstance {
    /// Whether every good report lies within `σ√(V/B)` of the center, the
    /// event under which the R1 guarantees apply.
    pub fn concentrated(&self) -> bool {
        let r1_radius =
            self.config.sigma * (self.config.v(self.reports.len()) / self.batch_size as f64).sqrt();
        self.good
            .iter()
            .all(|&g| distance(&self.reports[g], &self.center) <= r1_radius)
    }
}

fn random_unit(d: usize, rng: &mut SimRng) -> Vec<f64> {
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = crate::linalg::norm(&u);
    crate::linalg::scale(1.0 / n, &mut u);
    u
}

fn in_ball(center: &[f64], radius: f64, rng: &mut SimRng) -> Vec<f64> {
    let u = random_unit(center.len(), rng);
    let r = radius * rng.random::<f64>().powf(1.0 / center.len() as f64);
    center.iter().zip(&u).map(|(c, x)| c + r * x).collect()
}

/// Draws `K ∈ [3,15]`, `d ∈ [2,64]`, `α ∈ [0.05, 0.49]`, good reports from
/// a random [`GoodRegime`] and up to `⌊αK⌋` Byzantine reports placed as far
/// outliers, a nearby shell, a tight colluding cluster, or copies of a good
/// report.
pub fn random_filter_instance(rng: &mut SimRng) -> FilterInstance {
    let k = rng.random_range(3..=15usize);
    let d = rng.random_range(2..=64usize);
    let alpha = rng.random_range(0.05..0.49);
    let sigma = rng.random_range(0.01..10.0);
    let delta = rng.random_range(0.05..0.95);
    let batch_size = rng.random_range(1..=32usize);
    let config = FilterConfig {
        sigma,
        delta,
        alpha,
    };
    let n_byz = rng.random_range(0..=(alpha * k as f64).floor() as usize);
    let center: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let regime = match rng.random_range(0..3) {
        0 => GoodRegime::BatchMean,
        1 => GoodRegime::Concentrated,
        _ => GoodRegime::Loose,
    };

    let mut ids: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let byz: Vec<usize> = ids[..n_byz].to_vec();
    let mut good: Vec<usize> = ids[n_byz..].to_vec();
    good.sort_unstable();

    let mut reports = vec![Vec::new(); k];
    for &g in &good {
        reports[g] = match regime {
            GoodRegime::BatchMean => {
                let samples: Vec<Vec<f64>> = (0..batch_size)
                    .map(|_| in_ball(&center, sigma, rng))
                    .collect();
                crate::linalg::mean(&samples).expect("batch size is at least 1")
            }
            GoodRegime::Concentrated => in_ball(
                &center,
                sigma * (config.v(k) / batch_size as f64).sqrt().min(1.0),
                rng,
            ),
            GoodRegime::Loose => in_ball(&center, sigma, rng),
        };
    }
    let placement = rng.random_range(0..4);
    let cluster = in_ball(&center, rng.random_range(0.0..8.0) * sigma, rng);
    for &b in &byz {
        reports[b] = match placement {
            0 => {
                let u = random_unit(d, rng);
                let r = sigma * rng.random_range(5.0..1000.0);
                center.iter().zip(&u).map(|(c, x)| c + r * x).collect()
            }
            1 => in_ball(&center, 4.0 * sigma, rng),
            2 => in_ball(&cluster, 0.01 * sigma, rng),
            _ => {
                let src = &reports[good[rng.random_range(0..good.len())]];
                in_ball(src, 0.01 * sigma, rng)
            }
        };
    }
    FilterInstance {
        reports,
        good,
        center,
        batch_size,
        config,
        regime,
    }
}

/// Outcome of filtering one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCheck {
    pub rule: FilterRule,
    /// Every good id was accepted.
    pub all_good_accepted: bool,
    /// The guarantees of the rule that fired are premised on this instance:
    /// always for R2, only under concentration for R1.
    pub premise_holds: bool,
    /// Property violations among instances whose premise holds.
    pub violations: Vec<String>,
}

/// Checks good inclusion, the contamination bound and the fallback
/// condition on one instance.
pub fn check_filter_instance(inst: &FilterInstance) -> Result<FilterCheck> {
    let k = inst.reports.len();
    let out = fedpg_aggregate(&inst.reports, inst.batch_size, &inst.config)?;
    let premise_holds = out.rule_used == FilterRule::R2 || inst.concentrated();
    let all_good_accepted = inst.good.iter().all(|g| out.accepted.contains(g));
    let mut violations = Vec::new();
    if premise_holds {
        if let Some(missing) = inst.good.iter().find(|g| !out.accepted.contains(g)) {
            violations.push(format!(
                "good agent {missing} rejected under {}",
                out.rule_used
            ));
        }
        let bound = match out.rule_used {
            FilterRule::R1 => {
                3.0 * inst.config.sigma * (inst.config.v(k) / inst.batch_size as f64).sqrt()
            }
            FilterRule::R2 => 3.0 * inst.config.sigma,
        };
        for &a in &out.accepted {
            let dist = distance(&inst.reports[a], &inst.center);
            if dist > bound * (1.0 + 1e-12) {
                violations.push(format!(
                    "accepted {a} at {dist:.4} > {bound:.4} under {}",
                    out.rule_used
                ));
            }
        }
    }
    let r1_count = out.r1_accepted_count.unwrap_or(0) as f64;
    let fell_back = out.rule_used == FilterRule::R2;
    if fell_back != (r1_count < (1.0 - inst.config.alpha) * k as f64) {
        violations.push(format!("fallback {fell_back} with R1 count {r1_count}"));
    }
    Ok(FilterCheck {
        rule: out.rule_used,
        all_good_accepted,
        premise_holds,
        violations,
    })
}

fn filter_properties(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = seeded(opts.seed);
    let (mut failures, mut r2, mut unpremised, mut dropped_unpremised) = (0, 0, 0, 0);
    let mut first = None;
    for _ in 0..opts.filter_instances {
        let check = check_filter_instance(&random_filter_instance(&mut rng))?;
        r2 += usize::from(check.rule == FilterRule::R2);
        if !check.premise_holds {
            unpremised += 1;
            dropped_unpremised += usize::from(!check.all_good_accepted);
        }
        if let Some(v) = check.violations.first() {
            failures += 1;
            first.get_or_insert(v.clone());
        }
    }
    let n = opts.filter_instances;
    let detail = match first {
        None => format!(
            "{n} instances, {r2} used R2; R1 outside its concentration event in {unpremised}, dropping a good agent in {dropped_unpremised}"
        ),
        Some(f) => format!("{failures}/{n} instances violated; first: {f}"),
    };
    Ok((failures == 0, detail))
}

fn geometric_mean(opts: &VerifyOptions) -> Result<(bool, String)> {
    let (b_big, b_small) = (16.0, 4.0);
    let gamma = b_big / (b_big + b_small);
    let mut rng = seeded(opts.seed);
    let mut total = 0u64;
    for _ in 0..opts.geometric_draws {
        total += sample_geometric(gamma, &mut rng)?;
    }
    let mean = total as f64 / opts.geometric_draws as f64;
    Ok((
        (3.92..=4.08).contains(&mean),
        format!(
            "mean {mean:.4} over {} draws (target 4)",
            opts.geometric_draws
        ),
    ))
}

fn attack_models(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = seeded(opts.seed);
    let params = PolicyParams::zeros(PolicySpec::tabular(1, 2))?;
    let honest: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ctx = AttackContext {
        broadcast_params: &params,
        honest_gradient: &honest,
        colluder_gradients: &[],
        round: 1,
        collusion_seed: 0,
    };
    let flipped = crate::byzantine::report(
        &AgentBehavior::always(BehaviorKind::SignFlip { factor: -2.5 }),
        &ctx,
        &mut rng,
    )?;
    let sign_ok = flipped
        .iter()
        .zip(&honest)
        .all(|(f, h)| f.to_bits() == (-2.5 * h).to_bits());

    let colluders: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mean = crate::linalg::mean(&colluders).expect("nonempty");
    let mut max_pair: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            max_pair = max_pair.max(distance(&colluders[i], &colluders[j]));
        }
    }
    let attacked = fedpg_attack(&colluders, FedPgDirection::RandomUnit, &mut rng)?;
    let fedpg_err = (distance(&attacked, &mean) - 1.5 * max_pair).abs();

    let va = variance_attack(&colluders, 0.18)?;
    let mut va_err: f64 = 0.0;
    for (i, v) in va.iter().enumerate() {
        let m = colluders.iter().map(|c| c[i]).sum::<f64>() / 3.0;
        let s = (colluders.iter().map(|c| (c[i] - m).powi(2)).sum::<f64>() / 3.0).sqrt();
        va_err = va_err.max((v - (m - 0.18 * s)).abs());
    }
    let ok = sign_ok && fedpg_err <= 1e-9 && va_err <= 1e-12;
    Ok((ok, format!("sign-flip bit-exact {sign_ok}, fedpg distance error {fedpg_err:.1e}, variance error {va_err:.1e}")))
}

fn threshold_formula(_: &VerifyOptions) -> Result<(bool, String)> {
    let cfg = FilterConfig {
        sigma: 0.06,
        delta: 0.6,
        alpha: 0.3,
    };
    let got = cfg.threshold(10, 16);
    let expected = 2.0 * 0.06 * (2.0 * (20.0f64 / 0.6).ln() / 16.0).sqrt();
    let err = (got - expected).abs();
    Ok((err <= 1e-9, format!("threshold {got:.9}, error {err:.1e}")))
}

fn theory_example(_: &VerifyOptions) -> Result<(bool, String)> {
    let c = theory_constants(1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.0, 1.0)?;
    let ok = (c.L, c.L_g, c.C_g, c.C_w, c.Phi) == (4.0, 2.0, 2.0, 6.0, 26.0)
        && (c.Psi - 104f64.cbrt()).abs() < 1e-12;
    Ok((
        ok,
        format!(
            "L={} L_g={} C_g={} C_w={} Φ={} Ψ={:.4}",
            c.L, c.L_g, c.C_g, c.C_w, c.Phi, c.Psi
        ),
    ))
}

fn determinism(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut cfg = RunConfig::chain(Algorithm::FedpgBr, 4);
    cfg.seed = opts.seed;
    cfg.num_byzantine = 1;
    cfg.attack = Some(crate::byzantine::AttackType::SignFlip);
    let strip = |mut records: Vec<crate::experiment::MetricsRecord>| {
        records.iter_mut().for_each(|r| r.wall_time_ms = 0);
        records_to_csv(&records)
    };
    let a = strip(run(&cfg)?.records)?;
    let b = strip(run(&cfg)?.records)?;
    Ok((a == b, format!("{} CSV bytes compared", a.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let opts = VerifyOptions {
            filter_instances: 300,
            geometric_draws: 200_000,
            parameter_pairs: 5,
            ..VerifyOptions::quick()
        };
        for r in run_all(&opts) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
