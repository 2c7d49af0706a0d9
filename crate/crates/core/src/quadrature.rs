//! Riemann-sum approximations of `∫_t^T f(τ) g(τ) dτ`.
//!
//! `f` is either exponential discounting `γ^(τ-t)` or an arbitrary signal,
//! `g` is the reward signal. Three schemes are implemented:
//!
//! * the mixed sum a discrete-time return computes when rewards arrive with
//!   the next observation: `Σ f(τ_i) g(τ_{i+1}) Δ_{i+1}` (left-point weight,
//!   right-point reward),
//! * the right-point sum `Σ f(τ_{i+1}) g(τ_{i+1}) Δ_{i+1}`,
//! * a 10⁴-interval mid-point sum used as ground truth.

use rand::Rng;
use thiserror::Error;

use crate::signals::{Signal, SignalDomain};

/// Interval count of the mid-point reference.
pub const REFERENCE_INTERVALS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("interval count must be at least 1")]
    ZeroIntervals,
    #[error("partition needs at least two endpoints")]
    TooFewEndpoints,
    #[error("partition endpoints must be finite and strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("discount factor must lie in (0, 1], got {0}")]
    Discount(f64),
}

/// Per-second exponential discounting `γ^(τ - t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountSpec {
    gamma: f64,
    ln_gamma: f64,
}

impl DiscountSpec {
    pub fn new(gamma: f64) -> Result<Self, QuadratureError> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(QuadratureError::Discount(gamma));
        }
        Ok(Self { gamma, ln_gamma: gamma.ln() })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `γ^elapsed`, evaluated as `exp(elapsed · ln γ)`; exactly 1 when γ = 1.
    #[inline]
    pub fn factor(&self, elapsed: f64) -> f64 {
        if self.gamma == 1.0 {
            1.0
        } else {
            (elapsed * self.ln_gamma).exp()
        }
    }

    /// Closed-form `∫_t^T γ^(τ-t) dτ = (1 - γ^(T-t)) / (-ln γ)`.
    pub fn integral(&self, domain: SignalDomain) -> f64 {
        let len = domain.length();
        if self.gamma == 1.0 {
            len
        } else {
            (len * self.ln_gamma).exp_m1() / self.ln_gamma
        }
    }
}

/// The `f` factor of the integrand.
pub trait Weighting {
    fn weight(&self, tau: f64, origin: f64) -> f64;
}

impl Weighting for DiscountSpec {
    #[inline]
    fn weight(&self, tau: f64, origin: f64) -> f64 {
        self.factor(tau - origin)
    }
}

impl Weighting for Signal {
    #[inline]
    fn weight(&self, tau: f64, _origin: f64) -> f64 {
        self.eval(tau)
    }
}

/// Ordered interval endpoints `τ_0 < τ_1 < … < τ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    endpoints: Vec<f64>,
    widths: Vec<f64>,
}

impl Partition {
    pub fn new(endpoints: Vec<f64>) -> Result<Self, QuadratureError> {
        if endpoints.len() < 2 {
            return Err(QuadratureError::TooFewEndpoints);
        }
        for (i, w) in endpoints.windows(2).enumerate() {
            if !(w[0].is_finite() && w[1].is_finite() && w[1] > w[0]) {
                return Err(QuadratureError::NotIncreasing(i + 1));
            }
        }
        let widths = endpoints.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { endpoints, widths })
    }

    /// `n` equal intervals of width `(T - t) / n`.
    pub fn uniform(domain: SignalDomain, n: usize) -> Result<Self, QuadratureError> {
        if n == 0 {
            return Err(QuadratureError::ZeroIntervals);
        }
        let width = domain.length() / n as f64;
        let mut endpoints: Vec<f64> =
            (0..=n).map(|i| domain.start + i as f64 * width).collect();
        endpoints[n] = domain.end;
        // Widths are stored exactly rather than as endpoint differences.
        Ok(Self { endpoints, widths: vec![width; n] })
    }

    /// Draws `n + 1` uniform points, sorts them and rescales the extremes onto
    /// the domain ends. Draws containing duplicates are discarded whole.
    pub fn stochastic<R: Rng + ?Sized>(
        domain: SignalDomain,
        n: usize,
        rng: &mut R,
    ) -> Result<Self, QuadratureError> {
        if n == 0 {
            return Err(QuadratureError::ZeroIntervals);
        }
        let mut points = vec![0.0f64; n + 1];
        loop {
            points.iter_mut().for_each(|p| *p = rng.random::<f64>());
            points.sort_by(f64::total_cmp);
            let (lo, hi) = (points[0], points[n]);
            if hi <= lo {
                continue;
            }
            let scale = domain.length() / (hi - lo);
            let mut endpoints: Vec<f64> =
                points.iter().map(|p| domain.start + (p - lo) * scale).collect();
            endpoints[0] = domain.start;
            endpoints[n] = domain.end;
            if let Ok(p) = Self::new(endpoints) {
                return Ok(p);
            }
        }
    }

    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn intervals(&self) -> usize {
        self.widths.len()
    }

    pub fn start(&self) -> f64 {
        self.endpoints[0]
    }

    pub fn end(&self) -> f64 {
        self.endpoints[self.endpoints.len() - 1]
    }

    pub fn mean_width(&self) -> f64 {
        (self.end() - self.start()) / self.intervals() as f64
    }
}

/// `Σ f(τ_i) g(τ_{i+1}) Δ_{i+1}`: left-point weight, right-point reward.
pub fn mixed_sum<W: Weighting + ?Sized>(f: &W, g: &Signal, p: &Partition) -> f64 {
    let origin = p.start();
    let e = p.endpoints();
    p.widths()
        .iter()
        .enumerate()
        .map(|(i, &w)| f.weight(e[i], origin) * g.eval(e[i + 1]) * w)
        .sum()
}

/// `Σ f(τ_{i+1}) g(τ_{i+1}) Δ_{i+1}`.
pub fn right_point_sum<W: Weighting + ?Sized>(f: &W, g: &Signal, p: &Partition) -> f64 {
    let origin = p.start();
    let e = p.endpoints();
    p.widths()
        .iter()
        .enumerate()
        .map(|(i, &w)| f.weight(e[i + 1], origin) * g.eval(e[i + 1]) * w)
        .sum()
}

/// Discounted return as a naive discrete-time agent computes it on a
/// discretized task (Δ-scaled rewards, Δ-exponentiated discount).
pub fn dtr_sum(discount: &DiscountSpec, g: &Signal, p: &Partition) -> f64 {
    mixed_sum(discount, g, p)
}

/// Right-point Riemann-sum return: discounting starts at the first reward.
pub fn rp_sum(discount: &DiscountSpec, g: &Signal, p: &Partition) -> f64 {
    right_point_sum(discount, g, p)
}

pub fn generalized_dtr_sum(f: &Signal, g: &Signal, p: &Partition) -> f64 {
    mixed_sum(f, g, p)
}

pub fn generalized_rp_sum(f: &Signal, g: &Signal, p: &Partition) -> f64 {
    right_point_sum(f, g, p)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Mid-point sum with [`REFERENCE_INTERVALS`] intervals.
pub fn midpoint_reference<W: Weighting + ?Sized>(f: &W, g: &Signal, domain: SignalDomain) -> f64 {
    midpoint_sum(f, g, domain, REFERENCE_INTERVALS)
}

pub fn midpoint_sum<W: Weighting + ?Sized>(
    f: &W,
    g: &Signal,
    domain: SignalDomain,
    intervals: usize,
) -> f64 {
    let grid = MidpointGrid::new(domain, intervals);
    let mut acc = CompensatedSum::default();
    for &m in grid.points() {
        acc.add(f.weight(m, domain.start) * g.eval(m) * grid.width());
    }
    acc.value()
}

/// Tabulated mid-points of a uniform grid, for evaluating many references
/// over the same domain. Products are formed in the same order as
/// [`midpoint_sum`], so results agree bit for bit.
#[derive(Debug, Clone)]
pub struct MidpointGrid {
    origin: f64,
    points: Vec<f64>,
    width: f64,
}

impl MidpointGrid {
    pub fn new(domain: SignalDomain, intervals: usize) -> Self {
        let width = domain.length() / intervals as f64;
        let points = (0..intervals).map(|i| domain.start + (i as f64 + 0.5) * width).collect();
        Self { origin: domain.start, points, width }
    }

    pub fn reference(domain: SignalDomain) -> Self {
        Self::new(domain, REFERENCE_INTERVALS)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// `f` evaluated at every mid-point.
    pub fn tabulate<W: Weighting + ?Sized>(&self, f: &W) -> Vec<f64> {
        self.points.iter().map(|&m| f.weight(m, self.origin)).collect()
    }

    /// `Σ f(m_i) g(m_i) Δ` from tabulated factors.
    pub fn integrate(&self, f: &[f64], g: &[f64]) -> f64 {
        let mut acc = CompensatedSum::default();
        for (a, b) in f.iter().zip(g) {
            acc.add(a * b * self.width);
        }
        acc.value()
    }
}

/// Unscaled discrete-time return `Σ_k γ^k R_{k+1}` over unit-length steps.
pub fn discrete_return(gamma: f64, rewards: &[f64]) -> f64 {
    rewards
        .iter()
        .scan(1.0, |weight, r| {
            let term = *weight * r;
            *weight *= gamma;
            Some(term)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationResult {
    pub value: f64,
    pub reference: f64,
    pub abs_error: f64,
}

impl ApproximationResult {
    pub fn new(value: f64, reference: f64) -> Self {
        Self { value, reference, abs_error: (value - reference).abs() }
    }
}
