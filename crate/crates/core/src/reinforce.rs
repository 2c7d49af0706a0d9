//! Online REINFORCE with eligibility traces over a Gaussian MLP policy.
//!
//! Per decision, with `g = ∇_θ log π(A_t | S_t)`:
//!
//! ```text
//! z ← z + g
//! θ ← θ + α R_eff z
//! z ← γ^Δ z
//! ```
//!
//! where `R_eff = R Δ` for the discrete-time return and `R_eff = γ^Δ R Δ` for
//! the right-point return. The classic `γ^t` premultiplier is not applied and
//! there is no baseline.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::DiscountSpec;
use crate::servo_env::Observation;

pub const OBS_DIM: usize = 3;
const SNAPSHOT_MAGIC: &str = "policy-snapshot";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy diverged: {0}")]
    Diverged(&'static str),
    #[error("vector length {got} does not match parameter count {expected}")]
    Shape { expected: usize, got: usize },
    #[error("bad snapshot: {0}")]
    Snapshot(String),
    #[error("invalid update rule: {0}")]
    Rule(String),
}

/// How the trainable scalar `s` maps to the policy standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdParameterization {
    /// `σ = ln(1 + e^s)`.
    Softplus,
    /// `σ = s`; non-positive values count as divergence.
    Raw,
}

impl StdParameterization {
    fn initial_param(self) -> f64 {
        match self {
            // softplus(ln(e - 1)) = 1
            StdParameterization::Softplus => (std::f64::consts::E - 1.0).ln(),
            StdParameterization::Raw => 1.0,
        }
    }

    /// Returns `(σ, dσ/ds)`.
    fn eval(self, s: f64) -> (f64, f64) {
        match self {
            StdParameterization::Softplus => {
                let sigma = if s > 30.0 { s } else { s.exp().ln_1p() };
                (sigma, 1.0 / (1.0 + (-s).exp()))
            }
            StdParameterization::Raw => (s, 1.0),
        }
    }

    fn name(self) -> &'static str {
        match self {
            StdParameterization::Softplus => "softplus",
            StdParameterization::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Gaussian policy `N(mean(obs), σ²)` with a tanh MLP for the mean.
///
/// Parameters live in one flat vector: for each layer, the row-major weight
/// matrix (`outputs × inputs`) followed by its biases; the standard-deviation
/// scalar `s` is the last element.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    std_param: StdParameterization,
}

impl PolicyNetwork {
    /// All-zero weights with the standard deviation at its initial value 1.
    pub fn zeros(hidden: &[usize], std_param: StdParameterization) -> Self {
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers: Vec<LayerShape> = sizes
            .windows(2)
            .map(|w| LayerShape { inputs: w[0], outputs: w[1] })
            .collect();
        let count = layers.iter().map(LayerShape::len).sum::<usize>() + 1;
        let mut params = vec![0.0; count];
        params[count - 1] = std_param.initial_param();
        Self { layers, params, std_param }
    }

    /// Hidden layers drawn from `U(-1/√fan_in, 1/√fan_in)`; the output layer
    /// starts at zero so the initial policy is `N(0, 1)` for every input.
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], std_param: StdParameterization, rng: &mut R) -> Self {
        let mut net = Self::zeros(hidden, std_param);
        let hidden_layers = net.layers.len() - 1;
        let mut offset = 0;
        for shape in &net.layers[..hidden_layers] {
            let bound = 1.0 / (shape.inputs as f64).sqrt();
            for p in &mut net.params[offset..offset + shape.len()] {
                *p = rng.random_range(-bound..bound);
            }
            offset += shape.len();
        }
        net
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn std_parameterization(&self) -> StdParameterization {
        self.std_param
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn stddev_and_slope(&self) -> Result<(f64, f64), PolicyError> {
        let (sigma, slope) = self.std_param.eval(self.params[self.params.len() - 1]);
        if sigma > 0.0 && sigma.is_finite() {
            Ok((sigma, slope))
        } else {
            Err(PolicyError::Diverged("standard deviation is not positive and finite"))
        }
    }

    /// Runs the MLP, storing every layer's output in `acts` (input first).
    fn forward_cached(&self, obs: &[f64; OBS_DIM], acts: &mut Vec<Vec<f64>>) -> f64 {
        acts.resize_with(self.layers.len() + 1, Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(obs);
        let last = self.layers.len() - 1;
        let mut offset = 0;
        for (l, shape) in self.layers.iter().enumerate() {
            let (w, rest) = self.params[offset..].split_at(shape.inputs * shape.outputs);
            let b = &rest[..shape.outputs];
            let (head, tail) = acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            for o in 0..shape.outputs {
                let row = &w[o * shape.inputs..(o + 1) * shape.inputs];
                let pre = b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
                out.push(if l == last { pre } else { pre.tanh() });
            }
            offset += shape.len();
        }
        acts[last + 1][0]
    }

    /// Returns `(mean, stddev)` of the action distribution.
    pub fn forward(&self, obs: &[f64; OBS_DIM]) -> Result<(f64, f64), PolicyError> {
        let mut acts = Vec::new();
        let mean = self.forward_cached(obs, &mut acts);
        let (sigma, _) = self.stddev_and_slope()?;
        if !mean.is_finite() {
            return Err(PolicyError::Diverged("policy mean is not finite"));
        }
        Ok((mean, sigma))
    }

    pub fn log_prob(&self, obs: &[f64; OBS_DIM], action: f64) -> Result<f64, PolicyError> {
        let (mean, sigma) = self.forward(obs)?;
        let z = (action - mean) / sigma;
        Ok(-0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln())
    }

    /// `∇_θ log N(action; mean(obs), σ²)` by reverse-mode accumulation.
    pub fn grad_log_pi(&self, obs: &[f64; OBS_DIM], action: f64) -> Result<Vec<f64>, PolicyError> {
        let mut grad = vec![0.0; self.params.len()];
        let mut scratch = Scratch::default();
        self.grad_log_pi_into(obs, action, &mut grad, &mut scratch)?;
        Ok(grad)
    }

    fn grad_log_pi_into(
        &self,
        obs: &[f64; OBS_DIM],
        action: f64,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> Result<(), PolicyError> {
        let mean = self.forward_cached(obs, &mut scratch.acts);
        let (sigma, slope) = self.stddev_and_slope()?;
        if !mean.is_finite() {
            return Err(PolicyError::Diverged("policy mean is not finite"));
        }
        let diff = action - mean;
        let var = sigma * sigma;
        let n = grad.len();
        grad[n - 1] = (diff * diff - var) / (var * sigma) * slope;

        // Back-propagate d log π / d mean = (a - μ) / σ².
        let delta = &mut scratch.delta;
        delta.clear();
        delta.push(diff / var);
        let mut end = n - 1;
        for l in (0..self.layers.len()).rev() {
            let shape = self.layers[l];
            let start = end - shape.len();
            let (gw, gb) = grad[start..end].split_at_mut(shape.inputs * shape.outputs);
            let input = &scratch.acts[l];
            for o in 0..shape.outputs {
                gb[o] = delta[o];
                let row = &mut gw[o * shape.inputs..(o + 1) * shape.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g = delta[o] * x;
                }
            }
            if l > 0 {
                let w = &self.params[start..start + shape.inputs * shape.outputs];
                let next = &mut scratch.next_delta;
                next.clear();
                next.resize(shape.inputs, 0.0);
                for o in 0..shape.outputs {
                    let row = &w[o * shape.inputs..(o + 1) * shape.inputs];
                    for (acc, wv) in next.iter_mut().zip(row) {
                        *acc += wv * delta[o];
                    }
                }
                // Hidden activations are tanh outputs: d tanh = 1 - h².
                for (d, h) in next.iter_mut().zip(input) {
                    *d *= 1.0 - h * h;
                }
                std::mem::swap(delta, next);
            }
            end = start;
        }
        Ok(())
    }

    /// Draws an action from the current policy.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64; OBS_DIM],
        rng: &mut R,
    ) -> Result<f64, PolicyError> {
        let (mean, sigma) = self.forward(obs)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(mean + sigma * z)
    }

    /// Versioned plain-text snapshot: header lines, then one value per line.
    pub fn to_snapshot(&self) -> String {
        let mut out = format!("{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION}\nlayers");
        for l in &self.layers {
            let _ = write!(out, " {}x{}", l.inputs, l.outputs);
        }
        let _ = write!(out, "\nstd {}\nparams {}\n", self.std_param.name(), self.params.len());
        for p in &self.params {
            let _ = writeln!(out, "{p}");
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, PolicyError> {
        let bad = |m: &str| PolicyError::Snapshot(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(&format!("{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION}")) {
            return Err(bad("missing or unsupported header"));
        }
        let layers = lines
            .next()
            .and_then(|l| l.strip_prefix("layers"))
            .ok_or_else(|| bad("missing layers line"))?
            .split_whitespace()
            .map(|tok| {
                let (i, o) = tok.split_once('x').ok_or_else(|| bad("bad layer shape"))?;
                Ok(LayerShape {
                    inputs: i.parse().map_err(|_| bad("bad layer inputs"))?,
                    outputs: o.parse().map_err(|_| bad("bad layer outputs"))?,
                })
            })
            .collect::<Result<Vec<_>, PolicyError>>()?;
        let chained = layers.windows(2).all(|w| w[0].outputs == w[1].inputs);
        if layers.is_empty()
            || !chained
            || layers[0].inputs != OBS_DIM
            || layers[layers.len() - 1].outputs != 1
        {
            return Err(bad("layer shapes do not form a 3 → … → 1 network"));
        }
        let std_param = match lines.next().and_then(|l| l.strip_prefix("std ")) {
            Some("softplus") => StdParameterization::Softplus,
            Some("raw") => StdParameterization::Raw,
            _ => return Err(bad("bad std line")),
        };
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| bad("bad params line"))?;
        let params = lines
            .map(|l| f64::from_str(l.trim()).map_err(|_| bad("bad parameter value")))
            .collect::<Result<Vec<_>, _>>()?;
        let expected = layers.iter().map(LayerShape::len).sum::<usize>() + 1;
        if params.len() != count || count != expected {
            return Err(PolicyError::Shape { expected, got: params.len() });
        }
        Ok(Self { layers, params, std_param })
    }
}

#[derive(Debug, Default, Clone)]
struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

/// Eligibility trace, one entry per policy parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceVector(pub Vec<f64>);

impl TraceVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn reset(&mut self) {
        self.0.iter_mut().for_each(|z| *z = 0.0);
    }
}

/// Which return the update estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnVariant {
    /// Discrete-time return, `R_eff = R Δ`.
    Dtr,
    /// Right-point Riemann-sum return, `R_eff = γ^Δ R Δ`.
    Rp,
}

impl ReturnVariant {
    pub const ALL: [ReturnVariant; 2] = [ReturnVariant::Dtr, ReturnVariant::Rp];

    pub fn name(self) -> &'static str {
        match self {
            ReturnVariant::Dtr => "dtr",
            ReturnVariant::Rp => "rp",
        }
    }
}

impl FromStr for ReturnVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dtr" => Ok(ReturnVariant::Dtr),
            "rp" => Ok(ReturnVariant::Rp),
            _ => Err(format!("unknown return variant '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRule {
    pub variant: ReturnVariant,
    pub step_size: f64,
    pub discount: DiscountSpec,
}

impl UpdateRule {
    pub fn new(variant: ReturnVariant, step_size: f64, gamma: f64) -> Result<Self, PolicyError> {
        if !(step_size >= 0.0 && step_size.is_finite()) {
            return Err(PolicyError::Rule(format!("step size {step_size}")));
        }
        let discount =
            DiscountSpec::new(gamma).map_err(|e| PolicyError::Rule(e.to_string()))?;
        Ok(Self { variant, step_size, discount })
    }

    /// `R_eff` for a reward observed after `elapsed` seconds.
    pub fn effective_reward(&self, reward: f64, elapsed: f64) -> f64 {
        self.reward_discount(elapsed) * reward * elapsed
    }

    fn reward_discount(&self, elapsed: f64) -> f64 {
        match self.variant {
            ReturnVariant::Dtr => 1.0,
            ReturnVariant::Rp => self.discount.factor(elapsed),
        }
    }

    /// Multiplier applied to the trace in the parameter update, `α R_eff`.
    ///
    /// Evaluated as `(α · w) · (R · Δ)` with `w` the reward discount, so that
    /// the right-point rule at `α` and the discrete-time rule at `γ^Δ α`
    /// produce bit-identical products when `Δ` is constant.
    pub fn update_scale(&self, reward: f64, elapsed: f64) -> f64 {
        (self.step_size * self.reward_discount(elapsed)) * (reward * elapsed)
    }
}

/// Maps raw observations to network inputs: angles over the angle limit,
/// velocity over a fixed 10 rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationScaling {
    pub angle_scale: f64,
    pub velocity_scale: f64,
}

impl Default for ObservationScaling {
    fn default() -> Self {
        Self { angle_scale: 1.306, velocity_scale: 10.0 }
    }
}

impl ObservationScaling {
    pub fn apply(&self, obs: &Observation) -> [f64; OBS_DIM] {
        [obs[0] / self.angle_scale, obs[1] / self.velocity_scale, obs[2] / self.angle_scale]
    }
}

/// A policy, its trace, and the update rule.
#[derive(Debug, Clone)]
pub struct Agent {
    pub net: PolicyNetwork,
    pub trace: TraceVector,
    pub rule: UpdateRule,
    pub scaling: ObservationScaling,
    grad: Vec<f64>,
    scratch: Scratch,
}

impl Agent {
    pub fn new(net: PolicyNetwork, rule: UpdateRule, scaling: ObservationScaling) -> Self {
        let len = net.param_count();
        Self {
            net,
            trace: TraceVector::zeros(len),
            rule,
            scaling,
            grad: vec![0.0; len],
            scratch: Scratch::default(),
        }
    }

    /// Clears the trace at an episode boundary.
    pub fn start_episode(&mut self) {
        self.trace.reset();
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<f64, PolicyError> {
        self.net.sample_action(&self.scaling.apply(obs), rng)
    }

    /// One online update for the decision `(obs, action)` followed by reward
    /// `reward` after `elapsed` seconds.
    pub fn learn(
        &mut self,
        obs: &Observation,
        action: f64,
        reward: f64,
        elapsed: f64,
    ) -> Result<(), PolicyError> {
        let input = self.scaling.apply(obs);
        agent_step_with(
            &mut self.net,
            &mut self.trace,
            &self.rule,
            &input,
            action,
            reward,
            elapsed,
            &mut self.grad,
            &mut self.scratch,
        )
    }
}

/// Applies one trace/parameter update to `net` and `z`.
pub fn agent_step(
    net: &mut PolicyNetwork,
    z: &mut TraceVector,
    rule: &UpdateRule,
    obs: &[f64; OBS_DIM],
    action: f64,
    reward: f64,
    elapsed: f64,
) -> Result<(), PolicyError> {
    let mut grad = vec![0.0; net.param_count()];
    agent_step_with(net, z, rule, obs, action, reward, elapsed, &mut grad, &mut Scratch::default())
}

#[allow(clippy::too_many_arguments)]
fn agent_step_with(
    net: &mut PolicyNetwork,
    z: &mut TraceVector,
    rule: &UpdateRule,
    obs: &[f64; OBS_DIM],
    action: f64,
    reward: f64,
    elapsed: f64,
    grad: &mut [f64],
    scratch: &mut Scratch,
) -> Result<(), PolicyError> {
    if z.0.len() != net.param_count() {
        return Err(PolicyError::Shape { expected: net.param_count(), got: z.0.len() });
    }
    net.grad_log_pi_into(obs, action, grad, scratch)?;
    let scale = rule.update_scale(reward, elapsed);
    let decay = rule.discount.factor(elapsed);
    for ((p, zi), g) in net.params.iter_mut().zip(z.0.iter_mut()).zip(grad.iter()) {
        *zi += g;
        *p += scale * *zi;
        *zi *= decay;
    }
    if net.is_finite() {
        Ok(())
    } else {
        Err(PolicyError::Diverged("non-finite parameters after update"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_net(seed: u64, std_param: StdParameterization) -> PolicyNetwork {
        let mut r = rng::stream(seed, &[]);
        let mut net = PolicyNetwork::new(&[8, 6], std_param, &mut r);
        // Randomize the head as well so mean-path gradients are non-trivial.
        for p in net.params_mut() {
            *p += r.random_range(-0.5..0.5);
        }
        net
    }

    /// Straight-line forward pass written without the flat-buffer helpers.
    fn reference_forward(net: &PolicyNetwork, obs: &[f64; 3]) -> f64 {
        let mut x = obs.to_vec();
        let mut offset = 0;
        let count = net.layers().len();
        for (l, shape) in net.layers().iter().enumerate() {
            let mut y = vec![0.0; shape.outputs];
            for o in 0..shape.outputs {
                let mut acc = net.params()[offset + shape.inputs * shape.outputs + o];
                for i in 0..shape.inputs {
                    acc += net.params()[offset + o * shape.inputs + i] * x[i];
                }
                y[o] = if l + 1 == count { acc } else { acc.tanh() };
            }
            offset += shape.inputs * shape.outputs + shape.outputs;
            x = y;
        }
        x[0]
    }

    #[test]
    fn zero_network_is_standard_normal() {
        for sp in [StdParameterization::Softplus, StdParameterization::Raw] {
            let net = PolicyNetwork::zeros(&[64, 64], sp);
            let (mean, std) = net.forward(&[0.3, -1.0, 2.0]).unwrap();
            assert_eq!(mean, 0.0);
            assert!((std - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fresh_network_has_zero_mean_head() {
        let net = PolicyNetwork::new(&[64, 64], StdParameterization::Softplus, &mut rng::stream(1, &[]));
        assert_eq!(net.param_count(), 3 * 64 + 64 + 64 * 64 + 64 + 64 + 1 + 1);
        for obs in [[1.0, 0.0, -1.0], [0.2, 5.0, 0.9]] {
            assert_eq!(net.forward(&obs).unwrap().0, 0.0);
        }
    }

    #[test]
    fn forward_matches_reference() {
        let net = random_net(17, StdParameterization::Softplus);
        for obs in [[0.1, -0.2, 0.3], [1.0, 1.0, -1.0]] {
            let (mean, _) = net.forward(&obs).unwrap();
            assert!((mean - reference_forward(&net, &obs)).abs() < 1e-14);
        }
    }

    #[test]
    fn score_at_the_mode() {
        let net = random_net(3, StdParameterization::Raw);
        let obs = [0.4, -0.1, 0.8];
        let (mean, _) = net.forward(&obs).unwrap();
        let mut net1 = net.clone();
        *net1.params_mut().last_mut().unwrap() = 1.0;
        let g = net1.grad_log_pi(&obs, mean).unwrap();
        let n = g.len();
        assert!(g[..n - 1].iter().all(|v| *v == 0.0));
        assert!((g[n - 1] + 1.0).abs() < 1e-15);
    }

    fn finite_difference(net: &PolicyNetwork, obs: &[f64; 3], action: f64, h: f64) -> Vec<f64> {
        (0..net.param_count())
            .map(|k| {
                let mut plus = net.clone();
                plus.params_mut()[k] += h;
                let mut minus = net.clone();
                minus.params_mut()[k] -= h;
                (plus.log_prob(obs, action).unwrap() - minus.log_prob(obs, action).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, sp) in [(5, StdParameterization::Softplus), (6, StdParameterization::Raw)] {
            let net = random_net(seed, sp);
            let obs = [0.7, -0.3, 0.2];
            let g = net.grad_log_pi(&obs, 0.9).unwrap();
            let fd = finite_difference(&net, &obs, 0.9, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_reward_only_moves_the_trace() {
        let mut net = random_net(8, StdParameterization::Softplus);
        let before = net.clone();
        let rule = UpdateRule::new(ReturnVariant::Rp, 0.01, 0.25).unwrap();
        let mut z = TraceVector::zeros(net.param_count());
        let obs = [0.1, 0.2, 0.3];
        agent_step(&mut net, &mut z, &rule, &obs, 0.5, 0.0, 0.04).unwrap();
        assert_eq!(net, before);
        let g = before.grad_log_pi(&obs, 0.5).unwrap();
        let decay = 0.25f64.powf(0.04);
        for (zi, gi) in z.0.iter().zip(&g) {
            assert!((zi - gi * decay).abs() <= 1e-14 * gi.abs().max(1.0));
        }
    }

    #[test]
    fn single_step_hand_check() {
        let mut net = random_net(9, StdParameterization::Softplus);
        let before = net.clone();
        let obs = [-0.4, 0.0, 0.6];
        let (alpha, reward, delta, gamma) = (0.05, -0.7, 0.12, 0.25);
        let rule = UpdateRule::new(ReturnVariant::Rp, alpha, gamma).unwrap();
        let mut z = TraceVector::zeros(net.param_count());
        agent_step(&mut net, &mut z, &rule, &obs, 1.3, reward, delta).unwrap();
        let g = before.grad_log_pi(&obs, 1.3).unwrap();
        let r_eff = gamma.powf(delta) * reward * delta;
        for k in 0..g.len() {
            let expected = before.params()[k] + alpha * r_eff * g[k];
            assert!((net.params()[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn variants_coincide_without_discounting() {
        let obs = [0.2, -0.5, 0.1];
        let mut a = random_net(10, StdParameterization::Softplus);
        let mut b = a.clone();
        let ra = UpdateRule::new(ReturnVariant::Dtr, 0.01, 1.0).unwrap();
        let rb = UpdateRule::new(ReturnVariant::Rp, 0.01, 1.0).unwrap();
        let (mut za, mut zb) = (TraceVector::zeros(a.param_count()), TraceVector::zeros(b.param_count()));
        for k in 0..20 {
            let act = 0.1 * k as f64;
            agent_step(&mut a, &mut za, &ra, &obs, act, -0.3, 0.05 + 0.01 * k as f64).unwrap();
            agent_step(&mut b, &mut zb, &rb, &obs, act, -0.3, 0.05 + 0.01 * k as f64).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(za, zb);
    }

    #[test]
    fn trace_closed_form_after_zero_rewards() {
        let mut net = random_net(12, StdParameterization::Softplus);
        let rule = UpdateRule::new(ReturnVariant::Dtr, 0.1, 0.25).unwrap();
        let mut z = TraceVector::zeros(net.param_count());
        let delta = 0.08;
        let decay = rule.discount.factor(delta);
        let mut grads = Vec::new();
        let steps = 6;
        for j in 0..steps {
            let obs = [0.1 * j as f64, -0.2, 0.5];
            grads.push(net.grad_log_pi(&obs, 0.3).unwrap());
            agent_step(&mut net, &mut z, &rule, &obs, 0.3, 0.0, delta).unwrap();
        }
        for k in 0..net.param_count() {
            let expected: f64 =
                (0..steps).map(|j| decay.powi((steps - j) as i32) * grads[j][k]).sum();
            assert!((z.0[k] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut net = PolicyNetwork::zeros(&[4], StdParameterization::Softplus);
        let rule = UpdateRule::new(ReturnVariant::Dtr, 0.1, 0.5).unwrap();
        let mut z = TraceVector::zeros(3);
        assert!(matches!(
            agent_step(&mut net, &mut z, &rule, &[0.0; 3], 0.0, 1.0, 0.1),
            Err(PolicyError::Shape { .. })
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = PolicyNetwork::zeros(&[4], StdParameterization::Raw);
        *net.params_mut().last_mut().unwrap() = -1.0;
        assert!(matches!(net.forward(&[0.0; 3]), Err(PolicyError::Diverged(_))));
        let mut net = PolicyNetwork::zeros(&[4], StdParameterization::Softplus);
        let rule = UpdateRule::new(ReturnVariant::Dtr, 1e308, 1.0).unwrap();
        let mut z = TraceVector::zeros(net.param_count());
        let res = agent_step(&mut net, &mut z, &rule, &[0.1; 3], 50.0, 1e10, 1.0);
        assert!(matches!(res, Err(PolicyError::Diverged(_))));
    }

    #[test]
    fn sampling() {
        let mut net = random_net(14, StdParameterization::Raw);
        let obs = [0.3, 0.3, -0.3];
        *net.params_mut().last_mut().unwrap() = 1e-12;
        let (mean, _) = net.forward(&obs).unwrap();
        let a = net.sample_action(&obs, &mut rng::stream(1, &[])).unwrap();
        assert!((a - mean).abs() < 1e-10);

        let net = random_net(14, StdParameterization::Softplus);
        let seq = |seed| {
            let mut r = rng::stream(seed, &[]);
            (0..10).map(|_| net.sample_action(&obs, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(seq(4), seq(4));

        let (mean, std) = net.forward(&obs).unwrap();
        let mut r = rng::stream(15, &[]);
        let n = 100_000;
        let avg = (0..n).map(|_| net.sample_action(&obs, &mut r).unwrap()).sum::<f64>() / n as f64;
        assert!((avg - mean).abs() < 3.0 * std / (n as f64).sqrt());
    }

    #[test]
    fn snapshot_roundtrip_and_errors() {
        let net = random_net(20, StdParameterization::Softplus);
        let text = net.to_snapshot();
        assert!(text.starts_with("policy-snapshot v1\nlayers 3x8 8x6 6x1\nstd softplus\n"));
        assert_eq!(PolicyNetwork::from_snapshot(&text).unwrap(), net);
        assert!(PolicyNetwork::from_snapshot("policy-snapshot v2\n").is_err());
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(PolicyNetwork::from_snapshot(&truncated), Err(PolicyError::Shape { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn effective_step_size_is_exact(seed in any::<u64>(), delta in 0.001f64..1.5, alpha in 1e-6f64..1e-1) {
            let gamma = 0.25;
            let shift = DiscountSpec::new(gamma).unwrap().factor(delta);
            let rp = UpdateRule::new(ReturnVariant::Rp, alpha, gamma).unwrap();
            let dtr = UpdateRule::new(ReturnVariant::Dtr, shift * alpha, gamma).unwrap();
            let mut r = rng::stream(seed, &[]);
            let reward: f64 = r.random_range(-3.0..0.0);
            prop_assert_eq!(rp.update_scale(reward, delta).to_bits(), dtr.update_scale(reward, delta).to_bits());
        }
    }
}
