//! Servo Reacher: a geared DC motor driving an output shaft towards a target
//! angle.
//!
//! The motor is Euler-integrated at a fine granularity (`sim_step`, 0.1 ms by
//! default) while the agent acts at coarse, stochastic action-cycle times.
//! Voltage is held constant between decisions. Each step also accumulates the
//! discounted integral of the instantaneous reward at simulation resolution,
//! which is the quantity learning is ultimately judged on.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    EpisodeFinished,
    #[error("simulation diverged: non-finite state {0:?}")]
    Diverged(MotorState),
    #[error("invalid servo configuration: {0}")]
    Config(String),
}

/// Physical constants of the motor and gearbox.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotorParams {
    /// Armature inductance (H).
    pub inductance: f64,
    /// Armature resistance (Ohm).
    pub resistance: f64,
    /// Rotor inertia (kg·m²).
    pub inertia: f64,
    /// Rotor friction (N·m·s).
    pub friction: f64,
    /// Torque constant (N·m/A).
    pub torque_constant: f64,
    pub gear_ratio: f64,
    pub gear_efficiency: f64,
}

impl Default for MotorParams {
    /// Dynamixel MX-28AT data-sheet values.
    fn default() -> Self {
        Self {
            inductance: 2.05e-3,
            resistance: 8.29,
            inertia: 8.67e-8,
            friction: 8.87e-8,
            torque_constant: 0.0107,
            gear_ratio: 200.0,
            gear_efficiency: 0.836,
        }
    }
}

impl MotorParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let all = [
            self.inductance,
            self.resistance,
            self.inertia,
            self.friction,
            self.torque_constant,
            self.gear_ratio,
            self.gear_efficiency,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(EnvError::Config("motor parameters must be finite and positive".into()))
        }
    }
}

/// Full simulator state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotorState {
    /// Motor angular velocity (rad/s).
    pub motor_velocity: f64,
    /// Armature current (A).
    pub current: f64,
    /// Output shaft angle (rad).
    pub angle: f64,
    /// Output shaft angular velocity (rad/s).
    pub angular_velocity: f64,
    /// Target angle (rad).
    pub target: f64,
}

impl MotorState {
    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.motor_velocity, self.current, self.angle, self.angular_velocity, self.target]
    }

    pub fn observation(&self) -> Observation {
        [self.angle, self.angular_velocity, self.target]
    }

    /// `½ J ω² + ½ L i²`, the energy stored in the rotor and the winding.
    pub fn motor_energy(&self, params: &MotorParams) -> f64 {
        0.5 * params.inertia * self.motor_velocity * self.motor_velocity
            + 0.5 * params.inductance * self.current * self.current
    }
}

/// `(θ, θ̇, θ_target)`.
pub type Observation = [f64; 3];

/// Time derivative of [`MotorState`], component for component.
pub type MotorDerivative = MotorState;

/// Linear state-space dynamics `ẋ = A x + B v`.
pub fn dynamics_derivative(state: &MotorState, voltage: f64, p: &MotorParams) -> MotorDerivative {
    let torque = -p.friction * state.motor_velocity + p.torque_constant * state.current;
    MotorState {
        motor_velocity: torque / p.inertia,
        current: (-p.torque_constant * state.motor_velocity - p.resistance * state.current
            + voltage)
            / p.inductance,
        angle: state.angular_velocity,
        angular_velocity: torque / (p.inertia * p.gear_ratio * p.gear_efficiency),
        target: 0.0,
    }
}

/// Distribution of the time between agent decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntervalNoiseModel {
    pub target_mean: f64,
    pub jitter_std: f64,
    pub min_interval: f64,
    pub catastrophe_prob: f64,
    pub catastrophe_mean: f64,
    pub catastrophe_std: f64,
}

impl Default for IntervalNoiseModel {
    fn default() -> Self {
        Self::with_mean(0.040)
    }
}

impl IntervalNoiseModel {
    pub fn with_mean(target_mean: f64) -> Self {
        Self {
            target_mean,
            jitter_std: 0.010,
            min_interval: 0.001,
            catastrophe_prob: 0.01,
            catastrophe_mean: 1.0,
            catastrophe_std: 0.010,
        }
    }

    /// Constant intervals of exactly `target_mean`.
    pub fn deterministic(target_mean: f64) -> Self {
        Self { jitter_std: 0.0, catastrophe_prob: 0.0, ..Self::with_mean(target_mean) }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.target_mean > 0.0
            && self.min_interval > 0.0
            && self.jitter_std >= 0.0
            && self.catastrophe_std >= 0.0
            && (0.0..=1.0).contains(&self.catastrophe_prob)
            && self.catastrophe_mean.is_finite();
        if ok {
            Ok(())
        } else {
            Err(EnvError::Config(format!("invalid interval noise model {self:?}")))
        }
    }

    /// One action-cycle duration. Always consumes exactly one uniform and one
    /// normal draw.
    pub fn sample_interval<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let catastrophic = rng.random::<f64>() < self.catastrophe_prob;
        let z: f64 = rng.sample(StandardNormal);
        let raw = if catastrophic {
            self.catastrophe_mean + self.catastrophe_std * z
        } else {
            self.target_mean + self.jitter_std * z
        };
        raw.max(self.min_interval)
    }
}

/// Integration, limits, and episode rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub sim_step: f64,
    pub voltage_limit: f64,
    pub angle_limit: f64,
    pub position_tolerance: f64,
    pub velocity_tolerance: f64,
    pub time_limit: f64,
    /// Per-second discount for integral-return accounting.
    pub gamma: f64,
    /// Reward `+|θ - θ_target|` instead of the negated distance.
    pub literal_reward_sign: bool,
    /// Zero `θ̇` when the shaft hits an angle limit.
    pub zero_velocity_on_contact: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sim_step: 1e-4,
            voltage_limit: 12.0,
            angle_limit: 1.306,
            position_tolerance: 0.1,
            velocity_tolerance: 0.1,
            time_limit: 4.0,
            gamma: 0.25,
            literal_reward_sign: false,
            zero_velocity_on_contact: false,
        }
    }
}

impl SimConfig {
    #[inline]
    pub fn reward(&self, state: &MotorState) -> f64 {
        let distance = (state.angle - state.target).abs();
        if self.literal_reward_sign {
            distance
        } else {
            -distance
        }
    }

    pub fn saturate(&self, voltage: f64) -> f64 {
        voltage.clamp(-self.voltage_limit, self.voltage_limit)
    }
}

/// Everything needed to build a [`ServoEnv`]; loadable from TOML.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoConfig {
    pub sim: SimConfig,
    pub motor: MotorParams,
    pub noise: IntervalNoiseModel,
}

impl ServoConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.motor.validate()?;
        self.noise.validate()?;
        let s = &self.sim;
        let ok = s.sim_step > 0.0
            && s.sim_step <= self.noise.min_interval
            && s.voltage_limit > 0.0
            && s.angle_limit > 0.0
            && s.position_tolerance > 0.0
            && s.velocity_tolerance > 0.0
            && s.time_limit > 0.0
            && s.gamma > 0.0
            && s.gamma <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(EnvError::Config(format!("invalid simulation settings {s:?}")))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let cfg: Self = toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One explicit Euler step of width `sim_step` followed by the angle clamp.
pub fn substep(
    state: &MotorState,
    voltage: f64,
    sim: &SimConfig,
    params: &MotorParams,
) -> Result<MotorState, EnvError> {
    let d = dynamics_derivative(state, voltage, params);
    let h = sim.sim_step;
    let mut next = MotorState {
        motor_velocity: state.motor_velocity + d.motor_velocity * h,
        current: state.current + d.current * h,
        angle: state.angle + d.angle * h,
        angular_velocity: state.angular_velocity + d.angular_velocity * h,
        target: state.target + d.target * h,
    };
    if !next.is_finite() {
        return Err(EnvError::Diverged(next));
    }
    let clamped = next.angle.clamp(-sim.angle_limit, sim.angle_limit);
    if clamped != next.angle {
        next.angle = clamped;
        if sim.zero_velocity_on_contact {
            next.angular_velocity = 0.0;
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// Simulated time that actually elapsed during the step.
    pub elapsed: f64,
    /// The sampled action-cycle time before overshoot compensation.
    pub target_interval: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// Discounted reward integral over this step, at simulation resolution.
    pub integral_return_increment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EpisodeStatus {
    Idle,
    Running,
    Done,
}

pub struct ServoEnv {
    config: ServoConfig,
    state: MotorState,
    substeps: u64,
    limit_substeps: u64,
    debt: f64,
    step_discount: f64,
    discount: f64,
    integral_return: f64,
    status: EpisodeStatus,
}

impl ServoEnv {
    pub fn new(config: ServoConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let s = &config.sim;
        Ok(Self {
            config,
            state: MotorState::default(),
            substeps: 0,
            limit_substeps: (s.time_limit / s.sim_step).round() as u64,
            debt: 0.0,
            step_discount: s.gamma.powf(s.sim_step),
            discount: 1.0,
            integral_return: 0.0,
            status: EpisodeStatus::Idle,
        })
    }

    pub fn config(&self) -> &ServoConfig {
        &self.config
    }

    pub fn state(&self) -> &MotorState {
        &self.state
    }

    /// Simulated time since the episode started.
    pub fn episode_time(&self) -> f64 {
        self.substeps as f64 * self.config.sim.sim_step
    }

    pub fn substeps(&self) -> u64 {
        self.substeps
    }

    /// Overshoot carried into the next step's interval.
    pub fn overshoot_debt(&self) -> f64 {
        self.debt
    }

    /// Discounted integral return accumulated so far this episode.
    pub fn integral_return(&self) -> f64 {
        self.integral_return
    }

    pub fn is_done(&self) -> bool {
        self.status != EpisodeStatus::Running
    }

    /// Starts an episode at rest with angle and target uniform on the angle range.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let limit = self.config.sim.angle_limit;
        let angle = rng.random_range(-limit..=limit);
        let target = rng.random_range(-limit..=limit);
        self.reset_to(MotorState { angle, target, ..MotorState::default() })
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: MotorState) -> Observation {
        self.state = state;
        self.substeps = 0;
        self.debt = 0.0;
        self.discount = 1.0;
        self.integral_return = 0.0;
        self.status = EpisodeStatus::Running;
        state.observation()
    }

    /// Applies `voltage` (saturated) for one stochastic action cycle.
    pub fn step<R: Rng + ?Sized>(&mut self, voltage: f64, rng: &mut R) -> Result<StepResult, EnvError> {
        if self.status != EpisodeStatus::Running {
            return Err(EnvError::EpisodeFinished);
        }
        let sim = self.config.sim;
        let h = sim.sim_step;
        let voltage = sim.saturate(voltage);
        let target_interval = self.config.noise.sample_interval(rng);

        let wanted = target_interval - self.debt;
        let mut count = ((wanted / h) - 1e-9).ceil().max(1.0) as u64;
        count = count.min(self.limit_substeps - self.substeps);

        let mut increment = 0.0;
        for _ in 0..count {
            self.state = match substep(&self.state, voltage, &sim, &self.config.motor) {
                Ok(s) => s,
                Err(e) => {
                    self.status = EpisodeStatus::Done;
                    return Err(e);
                }
            };
            self.substeps += 1;
            self.discount *= self.step_discount;
            increment += self.discount * sim.reward(&self.state) * h;
        }
        self.integral_return += increment;

        let elapsed = count as f64 * h;
        self.debt = elapsed - wanted;

        let terminated = (self.state.angle - self.state.target).abs() < sim.position_tolerance
            && self.state.angular_velocity.abs() < sim.velocity_tolerance;
        let truncated = !terminated && self.substeps >= self.limit_substeps;
        if terminated || truncated {
            self.status = EpisodeStatus::Done;
        }
        Ok(StepResult {
            observation: self.state.observation(),
            reward: sim.reward(&self.state),
            elapsed,
            target_interval,
            terminated,
            truncated,
            integral_return_increment: increment,
        })
    }
}

/// One CSV row of an episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: u64,
    pub time: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub action: f64,
    pub reward: f64,
    pub delta: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn env() -> ServoEnv {
        ServoEnv::new(ServoConfig::default()).unwrap()
    }

    #[test]
    fn default_parameters() {
        let p = MotorParams::default();
        assert_eq!(
            [p.inductance, p.resistance, p.inertia, p.friction, p.torque_constant, p.gear_ratio, p.gear_efficiency],
            [2.05e-3, 8.29, 8.67e-8, 8.87e-8, 0.0107, 200.0, 0.836]
        );
        let n = IntervalNoiseModel::default();
        assert_eq!((n.jitter_std, n.min_interval, n.catastrophe_prob), (0.010, 0.001, 0.01));
        assert_eq!((n.catastrophe_mean, n.catastrophe_std), (1.0, 0.010));
        let s = SimConfig::default();
        assert_eq!((s.sim_step, s.voltage_limit, s.angle_limit, s.time_limit), (1e-4, 12.0, 1.306, 4.0));
    }

    #[test]
    fn derivative_examples() {
        let p = MotorParams::default();
        let zero = MotorState::default();
        assert_eq!(dynamics_derivative(&zero, 0.0, &p), MotorState::default());

        let d = dynamics_derivative(&zero, 12.0, &p);
        assert!((d.current - 12.0 / 2.05e-3).abs() < 1e-9);
        assert!((d.current - 5853.66).abs() < 0.01);
        assert_eq!([d.motor_velocity, d.angle, d.angular_velocity, d.target], [0.0; 4]);

        let spinning = MotorState { motor_velocity: 1.0, ..zero };
        let d = dynamics_derivative(&spinning, 0.0, &p);
        assert!((d.motor_velocity + 1.0231).abs() < 1e-4);
        assert!((d.angular_velocity + 0.006119).abs() < 1e-6);
        assert!((d.current + 0.0107 / 2.05e-3).abs() < 1e-9);
    }

    #[test]
    fn derivative_matches_state_matrix() {
        let p = MotorParams::default();
        let (j, l, n, eta) = (p.inertia, p.inductance, p.gear_ratio, p.gear_efficiency);
        let a = [
            [-p.friction / j, p.torque_constant / j, 0.0, 0.0, 0.0],
            [-p.torque_constant / l, -p.resistance / l, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [-p.friction / (j * n * eta), p.torque_constant / (j * n * eta), 0.0, 0.0, 0.0],
            [0.0; 5],
        ];
        let b = [0.0, 1.0 / l, 0.0, 0.0, 0.0];
        let x = MotorState {
            motor_velocity: 3.1,
            current: -0.4,
            angle: 0.2,
            angular_velocity: -0.7,
            target: 1.0,
        };
        let v = 5.5;
        let got = dynamics_derivative(&x, v, &p).as_array();
        let xs = x.as_array();
        for r in 0..5 {
            let expected: f64 = (0..5).map(|c| a[r][c] * xs[c]).sum::<f64>() + b[r] * v;
            assert!((got[r] - expected).abs() <= 1e-9 * expected.abs().max(1.0), "row {r}");
        }
    }

    #[test]
    fn substep_examples() {
        let sim = SimConfig::default();
        let p = MotorParams::default();
        let zero = MotorState::default();
        assert_eq!(substep(&zero, 0.0, &sim, &p).unwrap(), zero);

        let s = substep(&zero, 12.0, &sim, &p).unwrap();
        assert!((s.current - 0.585_366).abs() < 1e-6);
        assert_eq!((s.angle, s.angular_velocity, s.motor_velocity), (0.0, 0.0, 0.0));

        let at_limit = MotorState { angle: 1.306, angular_velocity: 2.0, ..zero };
        let s = substep(&at_limit, 0.0, &sim, &p).unwrap();
        assert_eq!(s.angle, 1.306);
        assert_eq!(s.angular_velocity, 2.0);

        let sticky = SimConfig { zero_velocity_on_contact: true, ..sim };
        let s = substep(&at_limit, 0.0, &sticky, &p).unwrap();
        assert_eq!((s.angle, s.angular_velocity), (1.306, 0.0));
    }

    #[test]
    fn substep_reports_divergence() {
        let sim = SimConfig::default();
        let bad = MotorState { motor_velocity: f64::MAX, current: f64::MAX, ..Default::default() };
        assert!(matches!(substep(&bad, 0.0, &sim, &MotorParams::default()), Err(EnvError::Diverged(_))));
    }

    #[test]
    fn interval_sampling() {
        let mut r = rng::stream(3, &[]);
        let exact = IntervalNoiseModel::deterministic(0.08);
        assert!((0..100).all(|_| exact.sample_interval(&mut r) == 0.08));

        let wild = IntervalNoiseModel { target_mean: -0.5, jitter_std: 0.0, ..Default::default() };
        let wild = IntervalNoiseModel { catastrophe_prob: 0.0, ..wild };
        assert_eq!(wild.sample_interval(&mut r), 0.001);
    }

    #[test]
    fn interval_mixture_mean() {
        let model = IntervalNoiseModel::with_mean(0.040);
        let mut r = rng::stream(77, &[]);
        let n = 1_000_000;
        let mean = (0..n).map(|_| model.sample_interval(&mut r)).sum::<f64>() / n as f64;
        // 0.01 · 1.0 + 0.99 · 0.040; the 1 ms floor moves this by < 1e-9.
        let expected = 0.0496;
        // Standard error ≈ sqrt(0.0099 · 0.96² + 1e-4) / 1000 ≈ 1e-4.
        assert!((mean - expected).abs() < 5e-4, "mean {mean}");
    }

    #[test]
    fn reset_ranges() {
        let mut e = env();
        let mut r = rng::stream(10, &[]);
        for _ in 0..1000 {
            let [theta, theta_dot, target] = e.reset(&mut r);
            assert!((-1.306..=1.306).contains(&theta));
            assert!((-1.306..=1.306).contains(&target));
            assert_eq!(theta_dot, 0.0);
            assert_eq!(e.episode_time(), 0.0);
            assert_eq!(e.overshoot_debt(), 0.0);
        }
        let a = env().reset(&mut rng::stream(5, &[]));
        let b = env().reset(&mut rng::stream(5, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn at_target_terminates_immediately() {
        let mut e = env();
        e.reset_to(MotorState { angle: 0.3, target: 0.3, ..Default::default() });
        let res = e.step(0.0, &mut rng::stream(1, &[])).unwrap();
        assert!(res.terminated && !res.truncated);
        assert!(res.reward.abs() < 1e-12);
        assert_eq!(e.step(0.0, &mut rng::stream(1, &[])), Err(EnvError::EpisodeFinished));
    }

    #[test]
    fn zero_voltage_leaves_shaft_alone() {
        let mut e = env();
        e.reset_to(MotorState { angle: -0.5, target: 0.7, ..Default::default() });
        let res = e.step(0.0, &mut rng::stream(2, &[])).unwrap();
        assert_eq!(res.observation, [-0.5, 0.0, 0.7]);
        assert!((res.reward + 1.2).abs() < 1e-15);
        assert!(!res.terminated && !res.truncated);
    }

    #[test]
    fn literal_reward_sign() {
        let cfg = ServoConfig {
            sim: SimConfig { literal_reward_sign: true, ..Default::default() },
            ..Default::default()
        };
        let mut e = ServoEnv::new(cfg).unwrap();
        e.reset_to(MotorState { angle: -0.5, target: 0.7, ..Default::default() });
        let res = e.step(0.0, &mut rng::stream(2, &[])).unwrap();
        assert!((res.reward - 1.2).abs() < 1e-15);
    }

    #[test]
    fn episodes_truncate_at_time_limit() {
        let mut e = env();
        let mut r = rng::stream(12, &[]);
        e.reset_to(MotorState { angle: -1.0, target: 1.0, ..Default::default() });
        let mut steps = 0;
        loop {
            let res = e.step(0.0, &mut r).unwrap();
            steps += 1;
            if res.truncated {
                assert!(!res.terminated);
                break;
            }
        }
        assert!(steps > 10);
        assert_eq!(e.substeps(), 40_000);
        assert!((e.episode_time() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_action_replay() {
        let run = || {
            let mut e = env();
            let mut r = rng::stream(99, &[]);
            e.reset(&mut r);
            let mut out = Vec::new();
            while !e.is_done() {
                let res = e.step(3.0, &mut r).unwrap();
                out.push((res.elapsed.to_bits(), res.reward.to_bits(), res.integral_return_increment.to_bits()));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn undiscounted_integral_matches_straight_loop() {
        let cfg = ServoConfig {
            sim: SimConfig { gamma: 1.0, position_tolerance: 1e-9, ..Default::default() },
            ..Default::default()
        };
        let mut e = ServoEnv::new(cfg).unwrap();
        let mut r = rng::stream(21, &[]);
        let start = MotorState { angle: -1.0, target: 0.8, ..Default::default() };
        e.reset_to(start);
        let mut actions = Vec::new();
        let mut counts = Vec::new();
        let mut i = 0u32;
        while !e.is_done() {
            let v = if i % 3 == 0 { 6.0 } else { -2.0 };
            let before = e.substeps();
            e.step(v, &mut r).unwrap();
            actions.push(v);
            counts.push(e.substeps() - before);
            i += 1;
        }
        assert_eq!(e.substeps(), 40_000);

        // Independent replay of the substep sequence.
        let p = MotorParams::default();
        let h = 1e-4;
        let mut x = start.as_array();
        let mut integral = 0.0;
        for (v, c) in actions.iter().zip(&counts) {
            for _ in 0..*c {
                let torque = -p.friction * x[0] + p.torque_constant * x[1];
                let dx = [
                    torque / p.inertia,
                    (-p.torque_constant * x[0] - p.resistance * x[1] + v) / p.inductance,
                    x[3],
                    torque / (p.inertia * p.gear_ratio * p.gear_efficiency),
                ];
                for k in 0..4 {
                    x[k] += dx[k] * h;
                }
                x[2] = x[2].clamp(-1.306, 1.306);
                integral -= (x[2] - x[4]).abs() * h;
            }
        }
        assert!((e.integral_return() - integral).abs() < 1e-9 * integral.abs());
    }

    #[test]
    fn config_from_toml() {
        let cfg = ServoConfig::from_toml(
            "[sim]\ngamma = 0.5\n[noise]\ntarget_mean = 0.12\n[motor]\ngear_ratio = 100.0\n",
        )
        .unwrap();
        assert_eq!(cfg.sim.gamma, 0.5);
        assert_eq!(cfg.sim.sim_step, 1e-4);
        assert_eq!(cfg.noise.target_mean, 0.12);
        assert_eq!(cfg.noise.catastrophe_prob, 0.01);
        assert_eq!(cfg.motor.gear_ratio, 100.0);
        assert!(ServoConfig::from_toml("[motor]\ninertia = -1.0\n").is_err());
        assert!(ServoConfig::from_toml("[sim]\nsim_step = 0.01\n").is_err());
    }

    /// Quadratic form `xᵀPx` with `MᵀPM - P = -I`, where `M` is the Euler
    /// map of the unforced (ω_m, i_a) subsystem. Built with Smith doubling.
    fn lyapunov_form(p: &MotorParams, h: f64) -> [[f64; 2]; 2] {
        type M2 = [[f64; 2]; 2];
        fn mul(a: &M2, b: &M2) -> M2 {
            let mut c = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                }
            }
            c
        }
        fn transpose(a: &M2) -> M2 {
            [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
        }
        let mut m: M2 = [
            [1.0 - h * p.friction / p.inertia, h * p.torque_constant / p.inertia],
            [-h * p.torque_constant / p.inductance, 1.0 - h * p.resistance / p.inductance],
        ];
        let mut acc: M2 = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..40 {
            let term = mul(&transpose(&m), &mul(&acc, &m));
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += term[i][j];
                }
            }
            m = mul(&m, &m);
        }
        acc
    }

    #[test]
    fn unit_current_spins_up_the_rotor() {
        // |ω_m| + |i_a| is not monotone: current converts into rotor speed.
        let sim = SimConfig::default();
        let p = MotorParams::default();
        let s = MotorState { current: 1.0, ..Default::default() };
        let next = substep(&s, 0.0, &sim, &p).unwrap();
        assert!(next.motor_velocity.abs() + next.current.abs() > 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn unforced_motor_dissipates(w in -500.0f64..500.0, i in -2.0f64..2.0) {
            let sim = SimConfig::default();
            let p = MotorParams::default();
            let lp = lyapunov_form(&p, sim.sim_step);
            let v = |s: &MotorState| {
                let x = [s.motor_velocity, s.current];
                x[0] * (lp[0][0] * x[0] + lp[0][1] * x[1]) + x[1] * (lp[1][0] * x[0] + lp[1][1] * x[1])
            };
            let mut s = MotorState { motor_velocity: w, current: i, ..Default::default() };
            let e0 = s.motor_energy(&p);
            for _ in 0..2000 {
                let next = substep(&s, 0.0, &sim, &p).unwrap();
                prop_assert!(v(&next) <= v(&s));
                s = next;
            }
            prop_assert!(s.motor_energy(&p) < e0 || e0 == 0.0);
        }

        #[test]
        fn time_accounting(seed in any::<u64>(), mean in 0.001f64..0.2) {
            let cfg = ServoConfig { noise: IntervalNoiseModel::with_mean(mean), ..Default::default() };
            let mut e = ServoEnv::new(cfg).unwrap();
            let mut r = rng::stream(seed, &[]);
            e.reset(&mut r);
            let (mut targets, mut elapsed) = (0.0, 0.0);
            while !e.is_done() {
                let res = e.step(r.random_range(-20.0..20.0), &mut r).unwrap();
                targets += res.target_interval;
                elapsed += res.elapsed;
                prop_assert!(res.elapsed > 0.0);
                let total = e.substeps() as f64 * 1e-4;
                prop_assert!((targets + e.overshoot_debt() - total).abs() < 1e-9);
                prop_assert!((elapsed - total).abs() < 1e-9);
            }
        }
    }
}
