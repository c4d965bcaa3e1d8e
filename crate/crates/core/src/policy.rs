//! Softmax policies over discrete actions.
//!
//! Two architectures are supported: a tabular softmax (one logit per
//! state-action pair, for the chain MDP) and a multilayer perceptron whose
//! final layer feeds a softmax. Gradients of `log π(a|s)` are computed by
//! hand-written backpropagation in `f64`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::Trajectory;
use crate::rng::SimRng;

pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    TabularSoftmax {
        n_states: usize,
        n_actions: usize,
    },
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        n_actions: usize,
        activation: Activation,
        /// Squash logits with tanh before the softmax. Off by default.
        #[serde(default)]
        output_tanh: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub architecture: Architecture,
}

impl PolicySpec {
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        PolicySpec {
            architecture: Architecture::TabularSoftmax {
                n_states,
                n_actions,
            },
        }
    }

    pub fn mlp(
        input_dim: usize,
        hidden: Vec<usize>,
        n_actions: usize,
        activation: Activation,
    ) -> Self {
        PolicySpec {
            architecture: Architecture::Mlp {
                input_dim,
                hidden,
                n_actions,
                activation,
                output_tanh: false,
            },
        }
    }

    /// Categorical MLP with two hidden ReLU layers of width 16.
    pub fn cartpole() -> Self {
        PolicySpec::mlp(4, vec![16, 16], 2, Activation::Relu)
    }

    pub fn n_actions(&self) -> usize {
        match &self.architecture {
            Architecture::TabularSoftmax { n_actions, .. }
            | Architecture::Mlp { n_actions, .. } => *n_actions,
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.architecture {
            Architecture::TabularSoftmax { .. } => 1,
            Architecture::Mlp { input_dim, .. } => *input_dim,
        }
    }

    /// `(in, out)` for each dense layer; empty for tabular policies.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        match &self.architecture {
            Architecture::TabularSoftmax { .. } => Vec::new(),
            Architecture::Mlp {
                input_dim,
                hidden,
                n_actions,
                ..
            } => {
                let mut widths = Vec::with_capacity(hidden.len() + 2);
                widths.push(*input_dim);
                widths.extend(hidden.iter().copied());
                widths.push(*n_actions);
                widths.windows(2).map(|w| (w[0], w[1])).collect()
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.architecture {
            Architecture::TabularSoftmax {
                n_states,
                n_actions,
            } => n_states * n_actions,
            Architecture::Mlp { .. } => self.layer_dims().iter().map(|(i, o)| i * o + o).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.architecture {
            Architecture::TabularSoftmax {
                n_states,
                n_actions,
            } => {
                if *n_states == 0 || *n_actions == 0 {
                    return Err(Error::config(
                        "tabular policy needs at least one state and one action",
                    ));
                }
            }
            Architecture::Mlp {
                input_dim,
                hidden,
                n_actions,
                ..
            } => {
                if *input_dim == 0 || *n_actions == 0 || hidden.contains(&0) {
                    return Err(Error::config("MLP widths must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Flat parameter vector together with the architecture that interprets it.
///
/// MLP layout: for each layer, the row-major `out × in` weight matrix
/// followed by the `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub spec: PolicySpec,
}

struct Forward {
    /// Inputs to each layer; `inputs[0]` is the state.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl PolicyParams {
    pub fn new(theta: Vec<f64>, spec: PolicySpec) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_count();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: theta.len(),
            });
        }
        if !crate::linalg::all_finite(&theta) {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(PolicyParams { theta, spec })
    }

    pub fn zeros(spec: PolicySpec) -> Result<Self> {
        let d = spec.param_count();
        PolicyParams::new(vec![0.0; d], spec)
    }

    /// Each weight uniform in `[-0.05, 0.05]`.
    pub fn init(spec: PolicySpec, rng: &mut SimRng) -> Result<Self> {
        let d = spec.param_count();
        let theta = (0..d)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        PolicyParams::new(theta, spec)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        PolicyParams {
            theta,
            spec: self.spec.clone(),
        }
    }

    /// FNV-1a over the bit patterns of θ; tags trajectories with the
    /// parameters that generated them.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in &self.theta {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn tabular_row(&self, state: &[f64], n_states: usize, n_actions: usize) -> Result<usize> {
        let s = *state.first().ok_or(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        })?;
        if s < 0.0 || s.fract() != 0.0 || s as usize >= n_states {
            return Err(Error::config(format!(
                "tabular policy got invalid state {s}"
            )));
        }
        Ok(s as usize * n_actions)
    }

    fn forward(&self, state: &[f64]) -> Result<Forward> {
        let Architecture::Mlp {
            input_dim,
            activation,
            output_tanh,
            ..
        } = &self.spec.architecture
        else {
            unreachable!("forward is only used for MLP policies")
        };
        if state.len() != *input_dim {
            return Err(Error::DimensionMismatch {
                expected: *input_dim,
                got: state.len(),
            });
        }
        let dims = self.spec.layer_dims();
        let last = dims.len() - 1;
        let mut inputs = Vec::with_capacity(dims.len());
        let mut pre = Vec::with_capacity(last);
        let mut x = state.to_vec();
        let mut offset = 0;
        let mut out_pre = Vec::new();
        for (l, &(n_in, n_out)) in dims.iter().enumerate() {
            let w = &self.theta[offset..offset + n_in * n_out];
            let b = &self.theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let z: Vec<f64> = (0..n_out)
                .map(|i| {
                    b[i] + w[i * n_in..(i + 1) * n_in]
                        .iter()
                        .zip(&x)
                        .map(|(wi, xi)| wi * xi)
                        .sum::<f64>()
                })
                .collect();
            inputs.push(std::mem::take(&mut x));
            if l == last {
                out_pre = z;
            } else {
                x = z.iter().map(|&zi| activation.apply(zi)).collect();
                pre.push(z);
            }
        }
        let logits = if *output_tanh {
            out_pre.iter().map(|z| z.tanh()).collect()
        } else {
            out_pre
        };
        Ok(Forward {
            inputs,
            pre,
            logits,
        })
    }

    pub fn logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        let logits = match &self.spec.architecture {
            Architecture::TabularSoftmax {
                n_states,
                n_actions,
            } => {
                let row = self.tabular_row(state, *n_states, *n_actions)?;
                self.theta[row..row + n_actions].to_vec()
            }
            Architecture::Mlp { .. } => self.forward(state)?.logits,
        };
        if !crate::linalg::all_finite(&logits) {
            return Err(Error::NonFinite("policy logits"));
        }
        Ok(logits)
    }

    pub fn probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(state)?))
    }

    pub fn log_prob(&self, state: &[f64], action: usize) -> Result<f64> {
        let logits = self.logits(state)?;
        crate::env::check_action(action, logits.len())?;
        Ok(logits[action] - log_sum_exp(&logits))
    }

    /// Samples an action and returns it with its log-probability.
    pub fn act(&self, state: &[f64], rng: &mut SimRng) -> Result<(usize, f64)> {
        let logits = self.logits(state)?;
        let probs = softmax(&logits);
        let action = crate::rng::sample_categorical(&probs, rng);
        Ok((action, logits[action] - log_sum_exp(&logits)))
    }

    /// `∇_θ log π_θ(a|s)`.
    pub fn grad_log_prob(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim()];
        self.accumulate_grad_log_prob(state, action, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `scale · ∇_θ log π_θ(a|s)` into `out` and returns `log π_θ(a|s)`.
    pub fn accumulate_grad_log_prob(
        &self,
        state: &[f64],
        action: usize,
        scale: f64,
        out: &mut [f64],
    ) -> Result<f64> {
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: out.len(),
            });
        }
        match &self.spec.architecture {
            Architecture::TabularSoftmax {
                n_states,
                n_actions,
            } => {
                let row = self.tabular_row(state, *n_states, *n_actions)?;
                crate::env::check_action(action, *n_actions)?;
                let logits = &self.theta[row..row + n_actions];
                let probs = softmax(logits);
                for (j, p) in probs.iter().enumerate() {
                    let indicator = if j == action { 1.0 } else { 0.0 };
                    out[row + j] += scale * (indicator - p);
                }
                Ok(logits[action] - log_sum_exp(logits))
            }
            Architecture::Mlp {
                activation,
                output_tanh,
                ..
            } => {
                let fwd = self.forward(state)?;
                if !crate::linalg::all_finite(&fwd.logits) {
                    return Err(Error::NonFinite("policy logits"));
                }
                crate::env::check_action(action, fwd.logits.len())?;
                let probs = softmax(&fwd.logits);
                let log_prob = fwd.logits[action] - log_sum_exp(&fwd.logits);
                if scale == 0.0 {
                    return Ok(log_prob);
                }
                // d log softmax / d logits = onehot(a) - p
                let mut delta: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(j, p)| scale * (if j == action { 1.0 } else { 0.0 } - p))
                    .collect();
                if *output_tanh {
                    for (d, y) in delta.iter_mut().zip(&fwd.logits) {
                        *d *= 1.0 - y * y;
                    }
                }
                self.backward(&fwd, delta, *activation, out);
                Ok(log_prob)
            }
        }
    }

    fn backward(
        &self,
        fwd: &Forward,
        mut delta: Vec<f64>,
        activation: Activation,
        out: &mut [f64],
    ) {
        let dims = self.spec.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut offset = 0;
        for &(n_in, n_out) in &dims {
            offsets.push(offset);
            offset += n_in * n_out + n_out;
        }
        for l in (0..dims.len()).rev() {
            let (n_in, n_out) = dims[l];
            let w_off = offsets[l];
            let b_off = w_off + n_in * n_out;
            let input = &fwd.inputs[l];
            for i in 0..n_out {
                let di = delta[i];
                if di == 0.0 {
                    continue;
                }
                let row = &mut out[w_off + i * n_in..w_off + (i + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += di * x;
                }
                out[b_off + i] += di;
            }
            if l == 0 {
                break;
            }
            let w = &self.theta[w_off..w_off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for i in 0..n_out {
                let di = delta[i];
                if di == 0.0 {
                    continue;
                }
                for (p, wij) in prev.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                    *p += wij * di;
                }
            }
            let z = &fwd.pre[l - 1];
            for (j, p) in prev.iter_mut().enumerate() {
                *p *= activation.derivative(z[j], input[j]);
            }
            delta = prev;
        }
    }

    /// `Σ_h ∇_θ log π_θ(a_h|s_h)` over the trajectory's steps.
    pub fn trajectory_score(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim()];
        for step in &traj.steps {
            self.accumulate_grad_log_prob(&step.state, step.action, 1.0, &mut g)?;
        }
        Ok(g)
    }

    /// `Σ_h log π_θ(a_h|s_h)`.
    pub fn trajectory_log_prob(&self, traj: &Trajectory) -> Result<f64> {
        traj.steps
            .iter()
            .map(|s| self.log_prob(&s.state, s.action))
            .sum()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.theta.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8], spec: PolicySpec) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::config(
                "parameter file length is not a multiple of 8",
            ));
        }
        let theta = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        PolicyParams::new(theta, spec)
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json` (spec).
    pub fn save(&self, stem: &Path) -> Result<()> {
        std::fs::write(stem.with_extension("bin"), self.to_le_bytes())?;
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&self.spec)?,
        )?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let spec: PolicySpec =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        PolicyParams::from_le_bytes(&std::fs::read(stem.with_extension("bin"))?, spec)
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::Step;
    use crate::rng::seeded;

    fn central_diff(params: &PolicyParams, state: &[f64], action: usize, h: f64) -> Vec<f64> {
        (0..params.dim())
            .map(|i| {
                let mut plus = params.clone();
                plus.theta[i] += h;
                let mut minus = params.clone();
                minus.theta[i] -= h;
                (plus.log_prob(state, action).unwrap() - minus.log_prob(state, action).unwrap())
                    / (2.0 * h)
            })
            .collect()
    }

    fn random_params(spec: PolicySpec, rng: &mut SimRng, scale: f64) -> PolicyParams {
        let d = spec.param_count();
        PolicyParams::new(
            (0..d).map(|_| rng.random_range(-scale..scale)).collect(),
            spec,
        )
        .unwrap()
    }

    #[test]
    fn cartpole_preset_dimension() {
        // 4*16+16 + 16*16+16 + 16*2+2
        assert_eq!(PolicySpec::cartpole().param_count(), 80 + 272 + 34);
    }

    #[test]
    fn zero_tabular_is_uniform() {
        let p = PolicyParams::zeros(PolicySpec::tabular(3, 2)).unwrap();
        assert_eq!(p.probabilities(&[1.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_tabular_gradient_by_hand() {
        let p = PolicyParams::zeros(PolicySpec::tabular(3, 2)).unwrap();
        let g = p.grad_log_prob(&[1.0], 0).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.5, -0.5, 0.0, 0.0]);
        let fd = central_diff(&p, &[1.0], 0, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn act_log_prob_matches_forward_pass() {
        let mut rng = seeded(5);
        let p = random_params(PolicySpec::cartpole(), &mut rng, 0.5);
        for _ in 0..50 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, lp) = p.act(&s, &mut rng).unwrap();
            let probs = p.probabilities(&s).unwrap();
            assert!((lp.exp() - probs[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn act_is_deterministic_under_seed() {
        let p = PolicyParams::init(PolicySpec::cartpole(), &mut seeded(1)).unwrap();
        let run = |seed| {
            let mut rng = seeded(seed);
            (0..20)
                .map(|_| p.act(&[0.01, 0.0, -0.02, 0.03], &mut rng).unwrap().0)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = seeded(17);
        for activation in [Activation::Relu, Activation::Tanh] {
            for output_tanh in [false, true] {
                let spec = PolicySpec {
                    architecture: Architecture::Mlp {
                        input_dim: 4,
                        hidden: vec![8, 5],
                        n_actions: 3,
                        activation,
                        output_tanh,
                    },
                };
                let p = random_params(spec, &mut rng, 0.8);
                let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                for a in 0..3 {
                    let g = p.grad_log_prob(&s, a).unwrap();
                    let fd = central_diff(&p, &s, a, 1e-5);
                    let err = crate::linalg::relative_error(&g, &fd);
                    assert!(
                        err < 1e-6,
                        "{activation:?} tanh={output_tanh} a={a} err={err}"
                    );
                }
            }
        }
    }

    #[test]
    fn score_function_identity() {
        let mut rng = seeded(2);
        let p = random_params(PolicySpec::cartpole(), &mut rng, 1.0);
        let s = [0.1, -0.3, 0.05, 0.2];
        let probs = p.probabilities(&s).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut expected = vec![0.0; p.dim()];
        for (a, pa) in probs.iter().enumerate() {
            p.accumulate_grad_log_prob(&s, a, *pa, &mut expected)
                .unwrap();
        }
        assert!(expected.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn trajectory_score_is_sum_of_steps() {
        let mut rng = seeded(3);
        let p = random_params(PolicySpec::cartpole(), &mut rng, 0.5);
        let step = |x: f64, a| Step {
            state: vec![x, 0.1, -x, 0.0],
            action: a,
            reward: 1.0,
        };
        let a = Trajectory::new(vec![step(0.1, 0), step(0.2, 1)], 0);
        let b = Trajectory::new(vec![step(-0.3, 1)], 0);
        let joined = Trajectory::new(a.steps.iter().chain(&b.steps).cloned().collect(), 0);
        let lhs = p.trajectory_score(&joined).unwrap();
        let rhs: Vec<f64> = p
            .trajectory_score(&a)
            .unwrap()
            .iter()
            .zip(p.trajectory_score(&b).unwrap())
            .map(|(x, y)| x + y)
            .collect();
        assert!(crate::linalg::distance(&lhs, &rhs) < 1e-12);
        let single = p.trajectory_score(&b).unwrap();
        assert_eq!(single, p.grad_log_prob(&b.steps[0].state, 1).unwrap());
    }

    #[test]
    fn non_finite_logits_error() {
        let mut p = PolicyParams::zeros(PolicySpec::tabular(2, 2)).unwrap();
        p.theta[0] = f64::INFINITY;
        assert!(matches!(
            p.act(&[0.0], &mut seeded(0)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn rejects_wrong_state_dimension() {
        let p = PolicyParams::zeros(PolicySpec::cartpole()).unwrap();
        assert!(p.logits(&[0.0; 3]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = PolicyParams::init(PolicySpec::cartpole(), &mut seeded(4)).unwrap();
        let stem = dir.path().join("ckpt");
        p.save(&stem).unwrap();
        assert_eq!(
            std::fs::read(stem.with_extension("bin")).unwrap().len(),
            p.dim() * 8
        );
        assert_eq!(PolicyParams::load(&stem).unwrap(), p);
    }
}
