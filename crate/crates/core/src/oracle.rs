//! Ground truth for the tests: exact expectations on the chain MDP by
//! enumerating every trajectory, central finite differences, and closed-form
//! theory constants.

use serde::Serialize;

use crate::env::{ChainMdp, Environment};
use crate::error::{Error, Result};
use crate::gradient::{Step, Trajectory};
use crate::policy::PolicyParams;

/// Largest number of `(s, a)` paths [`enumerate_trajectories`] will visit.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// One trajectory of the chain MDP with its probability under the policy.
#[derive(Debug, Clone)]
pub struct WeightedPath {
    pub trajectory: Trajectory,
    pub probability: f64,
}

/// How [`exact_gradient`] evaluates `∇J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientForm {
    /// `Σ_τ p(τ|θ) ∇log p(τ|θ) R(τ)` over all enumerated paths.
    #[default]
    Likelihood,
    /// Backward recursion over `Q_h(s, a)` and forward state marginals;
    /// shares no code with the path enumeration.
    Recursive,
}

fn path_count(mdp: &ChainMdp) -> u128 {
    let t = mdp.tables();
    ((t.n_states * t.n_actions) as u128).saturating_pow(t.horizon as u32)
}

/// Every trajectory of length `H` with nonzero probability under `params`,
/// in a fixed depth-first order. Branches with an exactly-zero initial or
/// transition probability are pruned.
pub fn enumerate_trajectories(mdp: &ChainMdp, params: &PolicyParams) -> Result<Vec<WeightedPath>> {
    let paths = path_count(mdp);
    if paths > ENUMERATION_BUDGET {
        return Err(Error::EnumerationBudget {
            paths,
            budget: ENUMERATION_BUDGET,
        });
    }
    let t = mdp.tables();
    let policy: Vec<Vec<f64>> = (0..t.n_states)
        .map(|s| params.probabilities(&ChainMdp::encode(s)))
        .collect::<Result<_>>()?;
    let fingerprint = params.fingerprint();
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(t.horizon);
    for (s0, &rho) in t.initial.iter().enumerate() {
        if rho != 0.0 {
            descend(mdp, &policy, s0, rho, &mut prefix, fingerprint, &mut out);
        }
    }
    Ok(out)
}

fn descend(
    mdp: &ChainMdp,
    policy: &[Vec<f64>],
    s: usize,
    prob: f64,
    prefix: &mut Vec<Step>,
    fingerprint: u64,
    out: &mut Vec<WeightedPath>,
) {
    let t = mdp.tables();
    for a in 0..t.n_actions {
        let p = prob * policy[s][a];
        prefix.push(Step {
            state: ChainMdp::encode(s),
            action: a,
            reward: t.rewards[s][a],
        });
        if prefix.len() == t.horizon {
            out.push(WeightedPath {
                trajectory: Trajectory::new(prefix.clone(), fingerprint),
                probability: p,
            });
        } else {
            for (next, &q) in t.transitions[s][a].iter().enumerate() {
                if q != 0.0 {
                    descend(mdp, policy, next, p * q, prefix, fingerprint, out);
                }
            }
        }
        prefix.pop();
    }
}

/// `Σ_τ p(τ|θ) f(τ)` for a vector-valued `f`.
pub fn expectation<F>(mdp: &ChainMdp, params: &PolicyParams, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&Trajectory) -> Result<Vec<f64>>,
{
    let mut acc: Option<Vec<f64>> = None;
    for path in enumerate_trajectories(mdp, params)? {
        let v = f(&path.trajectory)?;
        let acc = acc.get_or_insert_with(|| vec![0.0; v.len()]);
        if v.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                got: v.len(),
            });
        }
        crate::linalg::axpy(path.probability, &v, acc);
    }
    acc.ok_or(Error::Empty("enumerated trajectories"))
}

/// `J(θ) = E[Σ_h γ^h r_h]`.
pub fn exact_objective(mdp: &ChainMdp, params: &PolicyParams) -> Result<f64> {
    let gamma = mdp.spec().gamma;
    Ok(expectation(mdp, params, |tau| Ok(vec![tau.discounted_return(gamma)]))?[0])
}

pub fn exact_gradient(
    mdp: &ChainMdp,
    params: &PolicyParams,
    form: GradientForm,
) -> Result<Vec<f64>> {
    match form {
        GradientForm::Likelihood => {
            let gamma = mdp.spec().gamma;
            expectation(mdp, params, |tau| {
                let mut score = params.trajectory_score(tau)?;
                crate::linalg::scale(tau.discounted_return(gamma), &mut score);
                Ok(score)
            })
        }
        GradientForm::Recursive => recursive_gradient(mdp, params),
    }
}

/// `∇J = Σ_h γ^h Σ_s d_h(s) Σ_a π(a|s) Q_h(s,a) ∇log π(a|s)` where `Q_h`
/// holds the discounted reward-to-go from step `h`.
#[allow(clippy::needless_range_loop)]
fn recursive_gradient(mdp: &ChainMdp, params: &PolicyParams) -> Result<Vec<f64>> {
    let t = mdp.tables();
    let (ns, na, horizon, gamma) = (t.n_states, t.n_actions, t.horizon, t.gamma);
    let pi: Vec<Vec<f64>> = (0..ns)
        .map(|s| params.probabilities(&ChainMdp::encode(s)))
        .collect::<Result<_>>()?;

    let mut q = vec![vec![vec![0.0; na]; ns]; horizon];
    let mut v_next = vec![0.0; ns];
    for h in (0..horizon).rev() {
        for s in 0..ns {
            for a in 0..na {
                let future: f64 = t.transitions[s][a]
                    .iter()
                    .zip(&v_next)
                    .map(|(p, v)| p * v)
                    .sum();
                q[h][s][a] = t.rewards[s][a] + gamma * future;
            }
        }
        v_next = (0..ns)
            .map(|s| (0..na).map(|a| pi[s][a] * q[h][s][a]).sum())
            .collect();
    }

    let mut grad = vec![0.0; params.dim()];
    let mut d = t.initial.clone();
    let mut discount = 1.0;
    for q_h in &q {
        for s in 0..ns {
            for a in 0..na {
                let w = discount * d[s] * pi[s][a] * q_h[s][a];
                if w != 0.0 {
                    params.accumulate_grad_log_prob(&ChainMdp::encode(s), a, w, &mut grad)?;
                }
            }
        }
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                for (n, p) in t.transitions[s][a].iter().enumerate() {
                    next[n] += d[s] * pi[s][a] * p;
                }
            }
        }
        d = next;
        discount *= gamma;
    }
    Ok(grad)
}

/// Central differences `(f(θ+he_i) − f(θ−he_i)) / 2h`.
pub fn finite_diff<F>(f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let up = f(&x)?;
            x[i] = theta[i] - h;
            let down = f(&x)?;
            x[i] = theta[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Smoothness and variance constants of the convergence analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct TheoryConstants {
    pub G: f64,
    pub M: f64,
    pub W: f64,
    pub L: f64,
    pub L_g: f64,
    pub C_g: f64,
    pub C_w: f64,
    pub Phi: f64,
    pub Psi: f64,
    /// Largest admissible step size for the supplied batch size.
    pub eta_max: f64,
    /// Smallest batch size the analysis allows.
    pub B_min: f64,
}

/// Evaluates the closed forms. Asymptotic bookkeeping only; training never
/// reads these.
#[allow(non_snake_case, clippy::too_many_arguments)]
pub fn theory_constants(
    G: f64,
    M: f64,
    W: f64,
    H: f64,
    R: f64,
    gamma: f64,
    C_b: f64,
    B: f64,
) -> Result<TheoryConstants> {
    if !(0.0..1.0).contains(&gamma) || gamma == 0.0 {
        return Err(Error::config(format!("γ must lie in (0, 1), got {gamma}")));
    }
    for (name, x) in [("G", G), ("M", M), ("W", W), ("H", H), ("R", R), ("B", B)] {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::config(format!(
                "{name} must be positive and finite, got {x}"
            )));
        }
    }
    let horizon = 1.0 - gamma;
    let L = H * R * (M + H * G * G) / horizon;
    let L_g = H * M * (R + C_b.abs()) / horizon;
    let C_g = H * G * (R + C_b.abs()) / horizon;
    let C_w = H * (2.0 * H * G * G + M) * (W + 1.0);
    let Phi = L_g + C_g * C_g * C_w;
    let Psi = (L * Phi).cbrt();
    Ok(TheoryConstants {
        G,
        M,
        W,
        L,
        L_g,
        C_g,
        C_w,
        Phi,
        Psi,
        eta_max: 1.0 / (2.0 * Psi * B.powf(2.0 / 3.0)),
        B_min: 4.0 * Phi / (L * L),
    })
}

/// The two orders in the expected trajectory count to reach an
/// ε-stationary point: `1/(ε^{5/3} K^{2/3})` and `α^{4/3}/ε^{5/3}`.
/// Constants are suppressed, so only ratios are meaningful.
pub fn sample_complexity_terms(epsilon: f64, k: usize, alpha: f64) -> (f64, f64) {
    let e = epsilon.powf(5.0 / 3.0);
    (
        1.0 / (e * (k as f64).powf(2.0 / 3.0)),
        alpha.powf(4.0 / 3.0) / e,
    )
}
