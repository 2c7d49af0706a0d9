//! Random continuous-time reward signals.
//!
//! Two generator families are provided, sums of six sinusoids with fixed
//! angular frequencies and sums of six Gaussian densities, plus pointwise
//! products of any two signals. Signals are immutable once built and
//! evaluation is a pure function of `τ`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of sinusoids in a periodic signal and densities in a mixture.
pub const TERMS: usize = 6;

/// Angular frequencies (rad/s) of the periodic family, in term order.
pub const ANGULAR_FREQUENCIES: [f64; TERMS] =
    [TAU / 4.0, TAU / 2.0, TAU, 2.0 * TAU, 4.0 * TAU, 8.0 * TAU];

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("phase {0} outside [0, 2π)")]
    Phase(f64),
    #[error("gaussian component needs finite mean and stddev > 0, got mean {mean}, stddev {std}")]
    Component { mean: f64, std: f64 },
    #[error("gaussian mixture needs at least one component")]
    EmptyMixture,
    #[error("bad signal record: {0}")]
    Record(String),
}

/// Time interval a signal is defined over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalDomain {
    pub start: f64,
    pub end: f64,
}

impl SignalDomain {
    pub fn new(start: f64, end: f64) -> Option<Self> {
        (start.is_finite() && end.is_finite() && end > start).then_some(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

impl Default for SignalDomain {
    /// The three-second window used by every quadrature experiment.
    fn default() -> Self {
        Self { start: 0.0, end: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineTerm {
    pub amplitude: f64,
    pub angular_frequency: f64,
    pub phase: f64,
}

impl SineTerm {
    #[inline]
    pub fn eval(&self, tau: f64) -> f64 {
        self.amplitude * (self.angular_frequency * tau + self.phase).sin()
    }
}

/// `Σ A_i sin(ω_i τ + φ_i)` over the six fixed frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSignal {
    terms: [SineTerm; TERMS],
}

impl PeriodicSignal {
    /// Builds a signal from per-term amplitudes and phases; frequencies are
    /// always [`ANGULAR_FREQUENCIES`].
    pub fn new(amplitudes: [f64; TERMS], phases: [f64; TERMS]) -> Result<Self, SignalError> {
        if let Some(&p) = phases.iter().find(|p| !(0.0..TAU).contains(*p)) {
            return Err(SignalError::Phase(p));
        }
        let terms = std::array::from_fn(|i| SineTerm {
            amplitude: amplitudes[i],
            angular_frequency: ANGULAR_FREQUENCIES[i],
            phase: phases[i],
        });
        Ok(Self { terms })
    }

    /// Amplitudes ~ N(0, 1), phases ~ U[0, 2π).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut amplitudes = [0.0; TERMS];
        let mut phases = [0.0; TERMS];
        for i in 0..TERMS {
            amplitudes[i] = rng.sample(StandardNormal);
            phases[i] = rng.random_range(0.0..TAU);
        }
        Self::new(amplitudes, phases).expect("sampled phases lie in [0, 2π)")
    }

    pub fn terms(&self) -> &[SineTerm; TERMS] {
        &self.terms
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(tau)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub mean: f64,
    pub std: f64,
}

impl GaussianComponent {
    #[inline]
    fn eval(&self, tau: f64, normalized: bool) -> f64 {
        let z = (tau - self.mean) / self.std;
        let bump = (-0.5 * z * z).exp();
        if normalized {
            bump / (self.std * (2.0 * PI).sqrt())
        } else {
            bump
        }
    }
}

/// Sum of Gaussian densities `Σ N(τ; μ_i, σ_i)`.
///
/// Sampled mixtures always hold six normalized densities. [`Self::custom`]
/// allows other component counts and unit-height bumps so both readings of
/// "sum of Gaussians" can be exercised.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSignal {
    components: Vec<GaussianComponent>,
    normalized: bool,
}

impl GaussianMixtureSignal {
    pub fn new(components: [GaussianComponent; TERMS]) -> Result<Self, SignalError> {
        Self::custom(components.to_vec(), true)
    }

    pub fn custom(
        components: Vec<GaussianComponent>,
        normalized: bool,
    ) -> Result<Self, SignalError> {
        if components.is_empty() {
            return Err(SignalError::EmptyMixture);
        }
        for c in &components {
            if !c.mean.is_finite() || !(c.std > 0.0 && c.std.is_finite()) {
                return Err(SignalError::Component { mean: c.mean, std: c.std });
            }
        }
        Ok(Self { components, normalized })
    }

    /// Means ~ U[0, 3], stddevs ~ U(0, 3/2]; a zero stddev is redrawn.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let components = std::array::from_fn(|_| {
            let mean = rng.random_range(0.0..=3.0);
            let std = loop {
                let s = rng.random_range(0.0..=1.5);
                if s > 0.0 {
                    break s;
                }
            };
            GaussianComponent { mean, std }
        });
        Self::new(components).expect("sampled components are valid")
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.components.iter().map(|c| c.eval(tau, self.normalized)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductSignal {
    pub left: Box<Signal>,
    pub right: Box<Signal>,
}

/// A continuous-time real-valued function.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Constant(f64),
    Periodic(PeriodicSignal),
    GaussianMixture(GaussianMixtureSignal),
    Product(ProductSignal),
}

impl Signal {
    pub fn product(left: Signal, right: Signal) -> Self {
        Signal::Product(ProductSignal { left: Box::new(left), right: Box::new(right) })
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            Signal::Constant(c) => *c,
            Signal::Periodic(s) => s.eval(tau),
            Signal::GaussianMixture(s) => s.eval(tau),
            Signal::Product(p) => p.left.eval(tau) * p.right.eval(tau),
        }
    }

    /// One-line text record: a type tag followed by its coefficients.
    pub fn to_record(&self) -> String {
        self.to_string()
    }
}

impl From<PeriodicSignal> for Signal {
    fn from(s: PeriodicSignal) -> Self {
        Signal::Periodic(s)
    }
}

impl From<GaussianMixtureSignal> for Signal {
    fn from(s: GaussianMixtureSignal) -> Self {
        Signal::GaussianMixture(s)
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Constant(c) => write!(f, "constant {c}"),
            Signal::Periodic(s) => {
                write!(f, "periodic")?;
                for t in &s.terms {
                    write!(f, " {} {}", t.amplitude, t.phase)?;
                }
                Ok(())
            }
            Signal::GaussianMixture(s) => {
                let kind = if s.normalized { "normalized" } else { "bump" };
                write!(f, "gaussian {kind} {}", s.components.len())?;
                for c in &s.components {
                    write!(f, " {} {}", c.mean, c.std)?;
                }
                Ok(())
            }
            Signal::Product(p) => write!(f, "product {} {}", p.left, p.right),
        }
    }
}

fn parse_tokens<'a, I: Iterator<Item = &'a str>>(tokens: &mut I) -> Result<Signal, SignalError> {
    fn num<'a, I: Iterator<Item = &'a str>>(tokens: &mut I) -> Result<f64, SignalError> {
        let tok = tokens.next().ok_or_else(|| SignalError::Record("truncated".into()))?;
        tok.parse().map_err(|_| SignalError::Record(format!("not a number: {tok}")))
    }

    let tag = tokens.next().ok_or_else(|| SignalError::Record("empty".into()))?;
    match tag {
        "constant" => Ok(Signal::Constant(num(tokens)?)),
        "periodic" => {
            let mut amplitudes = [0.0; TERMS];
            let mut phases = [0.0; TERMS];
            for i in 0..TERMS {
                amplitudes[i] = num(tokens)?;
                phases[i] = num(tokens)?;
            }
            Ok(PeriodicSignal::new(amplitudes, phases)?.into())
        }
        "gaussian" => {
            let normalized = match tokens.next() {
                Some("normalized") => true,
                Some("bump") => false,
                other => return Err(SignalError::Record(format!("bad gaussian kind {other:?}"))),
            };
            let count = num(tokens)?;
            if count.fract() != 0.0 || count < 1.0 {
                return Err(SignalError::Record(format!("bad component count {count}")));
            }
            let components = (0..count as usize)
                .map(|_| Ok(GaussianComponent { mean: num(tokens)?, std: num(tokens)? }))
                .collect::<Result<Vec<_>, SignalError>>()?;
            Ok(GaussianMixtureSignal::custom(components, normalized)?.into())
        }
        "product" => {
            let left = parse_tokens(tokens)?;
            let right = parse_tokens(tokens)?;
            Ok(Signal::product(left, right))
        }
        other => Err(SignalError::Record(format!("unknown tag {other}"))),
    }
}

impl FromStr for Signal {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = s.split_whitespace();
        let signal = parse_tokens(&mut tokens)?;
        match tokens.next() {
            None => Ok(signal),
            Some(extra) => Err(SignalError::Record(format!("trailing token {extra}"))),
        }
    }
}

/// The two random generator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalFamily {
    Periodic,
    GaussianMixture,
}

impl SignalFamily {
    pub const ALL: [SignalFamily; 2] = [SignalFamily::Periodic, SignalFamily::GaussianMixture];

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> Signal {
        match self {
            SignalFamily::Periodic => PeriodicSignal::sample(rng).into(),
            SignalFamily::GaussianMixture => GaussianMixtureSignal::sample(rng).into(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalFamily::Periodic => "periodic",
            SignalFamily::GaussianMixture => "gaussian_mixture",
        }
    }
}

impl FromStr for SignalFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "periodic" => Ok(SignalFamily::Periodic),
            "gaussian_mixture" | "mixture" => Ok(SignalFamily::GaussianMixture),
            _ => Err(format!("unknown signal family '{s}'")),
        }
    }
}
