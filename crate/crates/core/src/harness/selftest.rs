//! Fast invariant checks shared by the `selftest` subcommand and the
//! acceptance suite.

use std::fmt;

use rand::Rng;

use super::config::ControlExperimentConfig;
use super::control::train_run;
use crate::quadrature::{dtr_sum, rp_sum, DiscountSpec, Partition};
use crate::reinforce::{PolicyNetwork, ReturnVariant, StdParameterization};
use crate::rng;
use crate::servo_env::{MotorState, ServoConfig, ServoEnv};
use crate::signals::{Signal, SignalDomain, SignalFamily};

const SELFTEST_STREAM: u64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn random_case<R: Rng + ?Sized>(r: &mut R) -> (Signal, f64, usize) {
    let family = if r.random::<bool>() { SignalFamily::Periodic } else { SignalFamily::GaussianMixture };
    let signal = family.sample(r);
    let gamma = 1.0 - r.random::<f64>();
    let n = r.random_range(1..=200);
    (signal, gamma, n)
}

/// `Σ |γ^(τ_i) g(τ_{i+1})| Δ`, the scale against which rounding in either
/// sum is measured.
fn absolute_scale(d: &DiscountSpec, g: &Signal, p: &Partition) -> f64 {
    let e = p.endpoints();
    p.widths()
        .iter()
        .enumerate()
        .map(|(i, w)| (d.factor(e[i] - e[0]) * g.eval(e[i + 1])).abs() * w)
        .sum()
}

/// On uniform partitions the right-point sum is the mixed sum times `γ^Δ`.
pub fn proportionality(cases: usize, seed: u64) -> Check {
    let mut r = rng::stream(seed, &[SELFTEST_STREAM, 1]);
    let domain = SignalDomain::default();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (g, gamma, n) = random_case(&mut r);
        let d = DiscountSpec::new(gamma).expect("gamma in (0, 1]");
        let p = Partition::uniform(domain, n).expect("n >= 1");
        let rp = rp_sum(&d, &g, &p);
        let scaled = d.factor(p.widths()[0]) * dtr_sum(&d, &g, &p);
        let scale = absolute_scale(&d, &g, &p).max(f64::MIN_POSITIVE);
        worst = worst.max((rp - scaled).abs() / scale);
    }
    Check::new(
        "fixed-interval proportionality",
        worst <= 1e-12,
        format!("{cases} cases, max relative deviation {worst:.3e} (limit 1e-12)"),
    )
}

/// At `γ = 1` the two sums are the same floating-point value.
pub fn gamma_one_degeneracy(cases: usize, seed: u64) -> Check {
    let mut r = rng::stream(seed, &[SELFTEST_STREAM, 2]);
    let domain = SignalDomain::default();
    let d = DiscountSpec::new(1.0).expect("gamma = 1");
    let mut mismatches = 0;
    for k in 0..cases {
        let (g, _, n) = random_case(&mut r);
        let p = if k % 2 == 0 {
            Partition::uniform(domain, n)
        } else {
            Partition::stochastic(domain, n, &mut r)
        }
        .expect("n >= 1");
        if dtr_sum(&d, &g, &p).to_bits() != rp_sum(&d, &g, &p).to_bits() {
            mismatches += 1;
        }
    }
    Check::new(
        "gamma = 1 degeneracy",
        mismatches == 0,
        format!("{cases} cases, {mismatches} not bit-identical"),
    )
}

/// With `g ≡ 1` the right-point error is strictly below the mixed-sum error.
pub fn pure_discount_ordering() -> Check {
    let domain = SignalDomain::default();
    let one = Signal::Constant(1.0);
    let mut failures = Vec::new();
    let mut cases = 0;
    for gamma in [0.5, 0.75, 0.875] {
        let d = DiscountSpec::new(gamma).expect("gamma in (0, 1)");
        let exact = d.integral(domain);
        for n in [5, 10, 25, 50, 100] {
            let p = Partition::uniform(domain, n).expect("n >= 1");
            let rp = (rp_sum(&d, &one, &p) - exact).abs();
            let dtr = (dtr_sum(&d, &one, &p) - exact).abs();
            cases += 1;
            if rp >= dtr {
                failures.push(format!("(gamma {gamma}, n {n})"));
            }
        }
    }
    Check::new(
        "pure-discount ordering",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{cases} instances, right-point strictly better in all")
        } else {
            format!("violated at {}", failures.join(", "))
        },
    )
}

/// Random network with every parameter drawn uniformly from ±0.5.
fn random_network<R: Rng + ?Sized>(hidden: &[usize], r: &mut R) -> PolicyNetwork {
    let mut net = PolicyNetwork::zeros(hidden, StdParameterization::Softplus);
    for p in net.params_mut() {
        *p = r.random_range(-0.5..0.5);
    }
    net
}

/// Analytic `∇ log π` against central differences with step `1e-5`.
///
/// The per-entry relative error uses `max(|analytic|, |numeric|, 1e-3)` as
/// denominator so that entries at rounding level do not dominate.
pub fn gradient_oracle(cases: usize, hidden: &[usize], seed: u64) -> Check {
    let mut r = rng::stream(seed, &[SELFTEST_STREAM, 3]);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let net = random_network(hidden, &mut r);
        let obs = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let action = r.random_range(-3.0..3.0);
        let g = net.grad_log_pi(&obs, action).expect("finite network");
        let mut probe = net.clone();
        for (k, analytic) in g.iter().enumerate() {
            let base = net.params()[k];
            probe.params_mut()[k] = base + h;
            let up = probe.log_prob(&obs, action).expect("finite network");
            probe.params_mut()[k] = base - h;
            let down = probe.log_prob(&obs, action).expect("finite network");
            probe.params_mut()[k] = base;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Check::new(
        "gradient oracle",
        worst < 1e-4,
        format!("{cases} cases, max relative error {worst:.3e} (limit 1e-4)"),
    )
}

/// Constant-interval training where the right-point rule at `α` and the
/// discrete-time rule at `γ^Δ α` must follow the same parameter trajectory.
///
/// `delta` should divide the episode time limit so the final step of a
/// truncated episode has the same width as every other.
pub fn effective_alpha_equivalence(cfg: &ControlExperimentConfig, delta: f64, alpha: f64) -> Check {
    let cfg = ControlExperimentConfig { deterministic_intervals: true, ..cfg.clone() };
    let h = cfg.servo.sim.sim_step;
    let elapsed = ((delta / h) - 1e-9).ceil() * h;
    let shifted = alpha * DiscountSpec::new(cfg.gamma).expect("validated gamma").factor(elapsed);

    let mut rp_params = Vec::new();
    let rp = train_run(&cfg, delta, ReturnVariant::Rp, alpha, 0, None, &mut |a| {
        rp_params.push(a.net.params().to_vec())
    });
    let mut updates = 0;
    let mut first_mismatch = None;
    let dtr = train_run(&cfg, delta, ReturnVariant::Dtr, shifted, 0, None, &mut |a| {
        if first_mismatch.is_none() {
            let same = rp_params.get(updates).is_some_and(|p| {
                p.iter().zip(a.net.params()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
            if !same {
                first_mismatch = Some(updates);
            }
        }
        updates += 1;
    });
    let passed = first_mismatch.is_none()
        && updates == rp_params.len()
        && rp.diverged.is_none()
        && dtr.diverged.is_none()
        && updates > 0;
    let detail = match first_mismatch {
        None => format!("{updates} updates over {} s, bit-identical", cfg.run_seconds),
        Some(k) => format!("trajectories differ from update {k} of {}", rp_params.len()),
    };
    Check::new("effective step-size equivalence", passed, detail)
}

/// Randomized stepping of the servo under the default configuration.
///
/// Checks the rest-state fixed point, the angle clamp, voltage saturation,
/// and that elapsed time is a whole number of substeps consistent with the
/// requested interval and the carried overshoot.
pub fn servo_physics(steps: usize, seed: u64) -> Check {
    let mut r = rng::stream(seed, &[SELFTEST_STREAM, 6]);
    let config = ServoConfig::default();
    let sim = config.sim;
    let h = sim.sim_step;
    let mut problems: Vec<String> = Vec::new();
    let note = |problems: &mut Vec<String>, msg: String| {
        if problems.len() < 5 {
            problems.push(msg);
        }
    };

    let mut rest = ServoEnv::new(config).expect("default config");
    rest.reset_to(MotorState::default());
    match rest.step(0.0, &mut r) {
        Ok(res) if *rest.state() == MotorState::default() && res.reward == 0.0 => {}
        other => note(&mut problems, format!("rest state moved: {other:?}")),
    }

    let mut env = ServoEnv::new(config).expect("default config");
    let mut twin = ServoEnv::new(config).expect("default config");
    env.reset(&mut r);
    let mut clock = 0.0;
    for k in 0..steps {
        if env.is_done() {
            env.reset(&mut r);
            clock = 0.0;
        }
        let voltage = r.random_range(-40.0..40.0);
        let debt_before = env.overshoot_debt();
        let substeps_before = env.substeps();

        // A saturated voltage must act exactly like the raw one.
        let mut twin_rng = r.clone();
        twin.reset_to(*env.state());
        let res = match env.step(voltage, &mut r) {
            Ok(res) => res,
            Err(e) => {
                note(&mut problems, format!("step {k}: {e}"));
                env.reset(&mut r);
                continue;
            }
        };
        if debt_before == 0.0 && substeps_before == 0 {
            match twin.step(sim.saturate(voltage), &mut twin_rng) {
                Ok(t) if t.observation == res.observation && t.elapsed == res.elapsed => {}
                _ => note(&mut problems, format!("step {k}: saturation changed the outcome")),
            }
        }

        let s = env.state();
        if s.angle.abs() > sim.angle_limit {
            note(&mut problems, format!("step {k}: angle {} beyond limit", s.angle));
        }
        let taken = env.substeps() - substeps_before;
        if taken == 0 || res.elapsed != taken as f64 * h {
            note(&mut problems, format!("step {k}: elapsed {} for {taken} substeps", res.elapsed));
        }
        clock += res.elapsed;
        if (clock - env.episode_time()).abs() > 1e-9 {
            note(&mut problems, format!("step {k}: clock {clock} vs {}", env.episode_time()));
        }
        if env.episode_time() > sim.time_limit + 1e-9 {
            note(&mut problems, format!("step {k}: episode ran past the limit"));
        }
        if !res.truncated {
            let wanted = res.target_interval - debt_before;
            let debt = env.overshoot_debt();
            if !(-1e-12..h).contains(&debt) || (debt - (res.elapsed - wanted)).abs() > 1e-12 {
                note(&mut problems, format!("step {k}: overshoot {debt} for wanted {wanted}"));
            }
        }
        if res.terminated && res.truncated {
            note(&mut problems, format!("step {k}: both terminated and truncated"));
        }
    }
    Check::new(
        "servo physics",
        problems.is_empty(),
        if problems.is_empty() {
            format!("{steps} randomized steps")
        } else {
            problems.join("; ")
        },
    )
}

/// The quick suite behind `dreturns selftest`.
pub fn run_all(seed: u64) -> Vec<Check> {
    let control = ControlExperimentConfig { run_seconds: 20.0, hidden: vec![16, 16], ..Default::default() };
    vec![
        proportionality(200, seed),
        gamma_one_degeneracy(200, seed),
        pure_discount_ordering(),
        gradient_oracle(3, &[16, 16], seed),
        effective_alpha_equivalence(&control, 0.08, 2f64.powi(-8)),
        servo_physics(5_000, seed),
    ]
}
