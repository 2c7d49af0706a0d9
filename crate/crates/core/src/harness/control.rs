//! Servo Reacher training sweeps and learning curves.

use super::config::ControlExperimentConfig;
use super::{par_indexed, MeanSe, ResultRow};
use crate::quadrature::DiscountSpec;
use crate::reinforce::{Agent, PolicyNetwork, ReturnVariant, UpdateRule};
use crate::rng;
use crate::servo_env::{IntervalNoiseModel, ServoConfig, ServoEnv, TraceRow};

pub const SERVO_SWEEP: &str = "servo_sweep";
pub const SERVO_CURVES: &str = "servo_curves";

const RUN_STREAM: u64 = 10;
const DISCOUNT_STREAM: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    /// Training time (s) at which the episode ended.
    pub end_time: f64,
    pub integral_return: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub episodes: Vec<EpisodeRecord>,
    /// Reason the run stopped early, if it diverged.
    pub diverged: Option<String>,
    pub decisions: usize,
}

impl RunOutcome {
    /// Mean integral return of episodes ending in the last `fraction` of
    /// `run_seconds`; `None` for diverged or empty runs.
    pub fn final_performance(&self, run_seconds: f64, fraction: f64) -> Option<f64> {
        if self.diverged.is_some() {
            return None;
        }
        let cutoff = (1.0 - fraction) * run_seconds;
        let tail: Vec<f64> = self
            .episodes
            .iter()
            .filter(|e| e.end_time > cutoff)
            .map(|e| e.integral_return)
            .collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Mean episodic return per simulated minute of training.
    pub fn minute_bins(&self, run_seconds: f64) -> Vec<Option<f64>> {
        let bins = (run_seconds / 60.0).ceil() as usize;
        let mut sums = vec![(0.0, 0usize); bins];
        for e in &self.episodes {
            let b = ((e.end_time / 60.0).ceil() as usize).saturating_sub(1).min(bins.saturating_sub(1));
            if bins > 0 {
                sums[b].0 += e.integral_return;
                sums[b].1 += 1;
            }
        }
        sums.into_iter().map(|(s, c)| (c > 0).then(|| s / c as f64)).collect()
    }
}

/// Environment settings for one run at mean interval `delta_mean`.
pub fn servo_config_for(cfg: &ControlExperimentConfig, delta_mean: f64) -> ServoConfig {
    let mut servo = cfg.servo;
    servo.sim.gamma = cfg.gamma;
    servo.noise.target_mean = delta_mean;
    if cfg.deterministic_intervals {
        servo.noise.jitter_std = 0.0;
        servo.noise.catastrophe_prob = 0.0;
    }
    servo
}

/// Trains one agent for `cfg.run_seconds` of simulated time.
///
/// The run's stream depends only on `(seed, delta_mean, run)`, so every step
/// size and variant starts from the same network and the same first episode.
/// `observer` sees the agent after every update.
pub fn train_run(
    cfg: &ControlExperimentConfig,
    delta_mean: f64,
    variant: ReturnVariant,
    alpha: f64,
    run: usize,
    mut trace: Option<&mut Vec<TraceRow>>,
    observer: &mut dyn FnMut(&Agent),
) -> RunOutcome {
    let mut r = rng::stream(cfg.seed, &[RUN_STREAM, delta_mean.to_bits(), run as u64]);
    let mut env = ServoEnv::new(servo_config_for(cfg, delta_mean)).expect("validated servo config");
    let net = PolicyNetwork::new(&cfg.hidden, cfg.std_parameterization, &mut r);
    let rule = UpdateRule::new(variant, alpha, cfg.gamma).expect("validated update rule");
    let mut agent = Agent::new(net, rule, cfg.scaling);

    let mut outcome = RunOutcome { episodes: Vec::new(), diverged: None, decisions: 0 };
    let mut clock = 0.0;
    while clock < cfg.run_seconds {
        let mut obs = env.reset(&mut r);
        agent.start_episode();
        let episode = outcome.episodes.len() as u64;
        let mut steps = 0;
        while !env.is_done() {
            let action = match agent.act(&obs, &mut r) {
                Ok(a) => a,
                Err(e) => {
                    outcome.diverged = Some(e.to_string());
                    return outcome;
                }
            };
            let res = match env.step(action, &mut r) {
                Ok(res) => res,
                Err(e) => {
                    outcome.diverged = Some(e.to_string());
                    return outcome;
                }
            };
            if let Err(e) = agent.learn(&obs, action, res.reward, res.elapsed) {
                outcome.diverged = Some(e.to_string());
                return outcome;
            }
            observer(&agent);
            if let Some(rows) = trace.as_deref_mut() {
                rows.push(TraceRow {
                    episode,
                    time: clock + env.episode_time(),
                    theta: res.observation[0],
                    theta_dot: res.observation[1],
                    action,
                    reward: res.reward,
                    delta: res.elapsed,
                });
            }
            obs = res.observation;
            steps += 1;
            outcome.decisions += 1;
        }
        clock += env.episode_time();
        outcome.episodes.push(EpisodeRecord {
            end_time: clock,
            integral_return: env.integral_return(),
            steps,
        });
    }
    outcome
}

/// Final performance of every run in one (Δ_μ, α, variant) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub delta_mean: f64,
    pub alpha: f64,
    pub variant: ReturnVariant,
    /// `None` marks a diverged run.
    pub finals: Vec<Option<f64>>,
}

impl SweepCell {
    /// Mean ± standard error over runs that did not diverge.
    pub fn summary(&self) -> MeanSe {
        let ok: Vec<f64> = self.finals.iter().flatten().copied().collect();
        MeanSe::from_values(&ok)
    }

    pub fn diverged(&self) -> usize {
        self.finals.iter().filter(|f| f.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub seed: u64,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, delta_mean: f64, alpha: f64, variant: ReturnVariant) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.delta_mean == delta_mean && c.alpha == alpha && c.variant == variant)
    }

    /// Step size with the best cell mean; ties go to the smaller step size.
    pub fn best_alpha(&self, delta_mean: f64, variant: ReturnVariant) -> Option<f64> {
        best_alpha(
            self.cells
                .iter()
                .filter(|c| c.delta_mean == delta_mean && c.variant == variant)
                .map(|c| (c.alpha, c.summary().mean)),
        )
    }

    pub fn to_rows(&self) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            let base = ResultRow {
                gamma: None,
                delta_mu: Some(cell.delta_mean),
                alpha: Some(cell.alpha),
                variant: cell.variant.name().into(),
                ..ResultRow::new(SERVO_SWEEP, self.seed, "", 0.0)
            };
            for (run, value) in cell.finals.iter().enumerate() {
                rows.push(ResultRow {
                    index: Some(run as u64),
                    metric: "final_return".into(),
                    value: *value,
                    diverged: value.is_none(),
                    ..base.clone()
                });
            }
            let s = cell.summary();
            for (metric, value) in [
                ("mean_final_return", s.mean),
                ("se_final_return", s.se),
                ("runs_ok", s.count as f64),
                ("runs_diverged", cell.diverged() as f64),
            ] {
                rows.push(ResultRow { metric: metric.into(), value: Some(value), ..base.clone() });
            }
        }
        rows
    }
}

pub fn best_alpha(candidates: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let mut sorted: Vec<(f64, f64)> = candidates.filter(|(_, m)| m.is_finite()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    for (alpha, mean) in sorted {
        if best.is_none_or(|(_, m)| mean > m) {
            best = Some((alpha, mean));
        }
    }
    best.map(|(a, _)| a)
}

/// Best step size per variant from `servo_sweep` CSV rows.
pub fn best_alpha_from_rows(rows: &[ResultRow], delta_mean: f64, variant: ReturnVariant) -> Option<f64> {
    best_alpha(rows.iter().filter_map(|r| {
        let matches = r.experiment == SERVO_SWEEP
            && r.metric == "mean_final_return"
            && r.variant == variant.name()
            && r.delta_mu == Some(delta_mean);
        if matches {
            Some((r.alpha?, r.value?))
        } else {
            None
        }
    }))
}

pub fn run_servo_sweep(cfg: &ControlExperimentConfig) -> SweepTable {
    let alphas = cfg.alphas();
    let mut keys = Vec::new();
    for &delta_mean in &cfg.delta_means {
        for &alpha in &alphas {
            for &variant in &cfg.variants {
                keys.push((delta_mean, alpha, variant));
            }
        }
    }
    let runs = cfg.runs;
    let finals = par_indexed(keys.len() * runs, |task| {
        let (delta_mean, alpha, variant) = keys[task / runs];
        train_run(cfg, delta_mean, variant, alpha, task % runs, None, &mut |_| {})
            .final_performance(cfg.run_seconds, cfg.final_fraction)
    });
    let cells = keys
        .iter()
        .enumerate()
        .map(|(k, &(delta_mean, alpha, variant))| SweepCell {
            delta_mean,
            alpha,
            variant,
            finals: finals[k * runs..(k + 1) * runs].to_vec(),
        })
        .collect();
    SweepTable { seed: cfg.seed, cells }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub variant: ReturnVariant,
    pub alpha: f64,
    /// `per_run[run][minute]`.
    pub per_run: Vec<Vec<Option<f64>>>,
    pub diverged: usize,
}

impl CurveSeries {
    /// Mean ± standard error across runs for every minute.
    pub fn summary(&self) -> Vec<MeanSe> {
        let minutes = self.per_run.first().map_or(0, Vec::len);
        (0..minutes)
            .map(|m| {
                let vals: Vec<f64> = self.per_run.iter().filter_map(|r| r[m]).collect();
                MeanSe::from_values(&vals)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub seed: u64,
    pub delta_mean: f64,
    pub series: Vec<CurveSeries>,
}

impl CurveTable {
    pub fn to_rows(&self) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for s in &self.series {
            let base = ResultRow {
                delta_mu: Some(self.delta_mean),
                alpha: Some(s.alpha),
                variant: s.variant.name().into(),
                ..ResultRow::new(SERVO_CURVES, self.seed, "", 0.0)
            };
            for (minute, stat) in s.summary().iter().enumerate() {
                for (metric, value) in [("mean_return", stat.mean), ("se_return", stat.se), ("runs", stat.count as f64)] {
                    rows.push(ResultRow {
                        index: Some(minute as u64),
                        metric: metric.into(),
                        value: value.is_finite().then_some(value),
                        ..base.clone()
                    });
                }
            }
            rows.push(ResultRow { metric: "runs_diverged".into(), value: Some(s.diverged as f64), ..base });
        }
        rows
    }
}

/// Learning curves at `cfg.curve_delta_mean` for each `(variant, α)`.
/// When `trace` is given, every decision of run 0 is appended to it.
pub fn run_servo_curves(
    cfg: &ControlExperimentConfig,
    settings: &[(ReturnVariant, f64)],
    mut trace: Option<&mut Vec<TraceRow>>,
) -> CurveTable {
    let runs = cfg.runs;
    let delta_mean = cfg.curve_delta_mean;
    let outcomes = par_indexed(settings.len() * runs, |task| {
        let (variant, alpha) = settings[task / runs];
        train_run(cfg, delta_mean, variant, alpha, task % runs, None, &mut |_| {})
    });
    if let Some(rows) = trace.as_deref_mut() {
        for &(variant, alpha) in settings {
            let mut local = Vec::new();
            train_run(cfg, delta_mean, variant, alpha, 0, Some(&mut local), &mut |_| {});
            rows.extend(local);
        }
    }
    let series = settings
        .iter()
        .enumerate()
        .map(|(k, &(variant, alpha))| {
            let chunk = &outcomes[k * runs..(k + 1) * runs];
            CurveSeries {
                variant,
                alpha,
                per_run: chunk.iter().map(|o| o.minute_bins(cfg.run_seconds)).collect(),
                diverged: chunk.iter().filter(|o| o.diverged.is_some()).count(),
            }
        })
        .collect();
    CurveTable { seed: cfg.seed, delta_mean, series }
}

/// Monte Carlo estimate of `E[γ^Δ]` under the interval noise model.
pub fn mean_step_discount(noise: &IntervalNoiseModel, gamma: f64, samples: usize, seed: u64) -> f64 {
    let d = DiscountSpec::new(gamma).expect("gamma in (0, 1]");
    let mut r = rng::stream(seed, &[DISCOUNT_STREAM]);
    (0..samples).map(|_| d.factor(noise.sample_interval(&mut r))).sum::<f64>() / samples as f64
}

/// RP at step size α next to DTR interpolated at the effective step size
/// `shift · α` (linear in log₂ α).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedPoint {
    pub alpha: f64,
    pub rp: MeanSe,
    pub dtr_mean: f64,
    pub dtr_se: f64,
}

impl ShiftedPoint {
    /// `rp - dtr` in units of the combined standard error.
    pub fn gap_in_se(&self) -> f64 {
        let combined = (self.rp.se * self.rp.se + self.dtr_se * self.dtr_se).sqrt();
        (self.rp.mean - self.dtr_mean) / combined
    }
}

pub fn shifted_comparison(table: &SweepTable, delta_mean: f64, shift: f64) -> Vec<ShiftedPoint> {
    let mut dtr: Vec<(f64, MeanSe)> = table
        .cells
        .iter()
        .filter(|c| c.delta_mean == delta_mean && c.variant == ReturnVariant::Dtr)
        .map(|c| (c.alpha.log2(), c.summary()))
        .collect();
    dtr.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rp: Vec<&SweepCell> = table
        .cells
        .iter()
        .filter(|c| c.delta_mean == delta_mean && c.variant == ReturnVariant::Rp)
        .collect();
    rp.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));

    let mut out = Vec::new();
    for cell in rp {
        let x = (cell.alpha * shift).log2();
        let Some(i) = dtr.windows(2).position(|w| w[0].0 <= x && x <= w[1].0) else {
            continue;
        };
        let ((x0, a), (x1, b)) = (dtr[i], dtr[i + 1]);
        let t = (x - x0) / (x1 - x0);
        out.push(ShiftedPoint {
            alpha: cell.alpha,
            rp: cell.summary(),
            dtr_mean: a.mean + t * (b.mean - a.mean),
            dtr_se: a.se + t * (b.se - a.se),
        });
    }
    out
}
