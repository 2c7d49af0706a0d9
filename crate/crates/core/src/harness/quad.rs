//! Quadrature-error sweeps: discounted signals on fixed and stochastic
//! partitions, and undiscounted products of signal pairs.

use super::config::{FactorSource, ProductExperimentConfig, QuadExperimentConfig};
use super::{par_indexed, MeanSe, ResultRow};
use crate::quadrature::{
    generalized_dtr_sum, generalized_rp_sum, DiscountSpec, MidpointGrid, Partition,
};
use crate::rng::{self, Stream};
use crate::signals::{Signal, SignalFamily};

pub const QUAD_FIXED: &str = "quad_fixed";
pub const QUAD_STOCHASTIC: &str = "quad_stochastic";
pub const QUAD_PRODUCTS: &str = "quad_products";

const SIGNAL_STREAM: u64 = 1;
const PARTITION_STREAM: u64 = 2;
const PRODUCT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Uniform,
    Stochastic,
}

/// Per-trial absolute errors for one (family, γ, n) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadCell {
    pub family: String,
    pub gamma: Option<f64>,
    pub n: usize,
    pub dtr_errors: Vec<f64>,
    pub rp_errors: Vec<f64>,
    /// Realized mean interval width per trial.
    pub mean_deltas: Vec<f64>,
}

impl QuadCell {
    fn new(family: String, gamma: Option<f64>, n: usize, trials: usize) -> Self {
        Self {
            family,
            gamma,
            n,
            dtr_errors: Vec::with_capacity(trials),
            rp_errors: Vec::with_capacity(trials),
            mean_deltas: Vec::with_capacity(trials),
        }
    }

    pub fn dtr(&self) -> MeanSe {
        MeanSe::from_values(&self.dtr_errors)
    }

    pub fn rp(&self) -> MeanSe {
        MeanSe::from_values(&self.rp_errors)
    }

    pub fn mean_delta(&self) -> f64 {
        MeanSe::from_values(&self.mean_deltas).mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadTable {
    pub experiment: &'static str,
    pub seed: u64,
    pub cells: Vec<QuadCell>,
}

impl QuadTable {
    pub fn cell(&self, family: &str, gamma: Option<f64>, n: usize) -> Option<&QuadCell> {
        self.cells.iter().find(|c| c.family == family && c.gamma == gamma && c.n == n)
    }

    /// Per-cell summary rows, optionally followed by one row per trial.
    pub fn to_rows(&self, per_trial: bool) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            let base = ResultRow {
                family: cell.family.clone(),
                gamma: cell.gamma,
                n: Some(cell.n),
                ..ResultRow::new(self.experiment, self.seed, "", 0.0)
            };
            let (dtr, rp) = (cell.dtr(), cell.rp());
            let metrics = [
                ("dtr_mean_abs_error", dtr.mean),
                ("dtr_se", dtr.se),
                ("rp_mean_abs_error", rp.mean),
                ("rp_se", rp.se),
                ("mean_delta", cell.mean_delta()),
                ("trials", dtr.count as f64),
            ];
            for (metric, value) in metrics {
                rows.push(ResultRow { metric: metric.into(), value: Some(value), ..base.clone() });
            }
            if per_trial {
                for (t, (d, r)) in cell.dtr_errors.iter().zip(&cell.rp_errors).enumerate() {
                    for (metric, value) in [("dtr_abs_error", *d), ("rp_abs_error", *r), ("delta", cell.mean_deltas[t])] {
                        rows.push(ResultRow {
                            metric: metric.into(),
                            value: Some(value),
                            index: Some(t as u64),
                            ..base.clone()
                        });
                    }
                }
            }
        }
        rows
    }
}

fn family_index(family: SignalFamily) -> u64 {
    match family {
        SignalFamily::Periodic => 0,
        SignalFamily::GaussianMixture => 1,
    }
}

/// The signal used by trial `trial` of `family`, shared by the fixed and
/// stochastic sweeps.
pub fn trial_signal(seed: u64, family: SignalFamily, trial: usize) -> Signal {
    family.sample(&mut rng::stream(seed, &[SIGNAL_STREAM, family_index(family), trial as u64]))
}

fn partition_stream(seed: u64, family: SignalFamily, n: usize, trial: usize) -> Stream {
    rng::stream(seed, &[PARTITION_STREAM, family_index(family), n as u64, trial as u64])
}

/// Text records of every signal a quadrature sweep evaluates.
pub fn signal_records(config: &QuadExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    for &family in &config.families {
        for t in 0..config.trials {
            out.push(format!("{} {} {}", family.name(), t, trial_signal(config.seed, family, t)));
        }
    }
    out
}

pub fn run_quad(config: &QuadExperimentConfig, mode: PartitionMode) -> QuadTable {
    let experiment = match mode {
        PartitionMode::Uniform => QUAD_FIXED,
        PartitionMode::Stochastic => QUAD_STOCHASTIC,
    };
    let grid = MidpointGrid::reference(config.domain);
    let discounts: Vec<DiscountSpec> = config
        .gammas
        .iter()
        .map(|&g| DiscountSpec::new(g).expect("validated gamma"))
        .collect();
    let weights: Vec<Vec<f64>> = discounts.iter().map(|d| grid.tabulate(d)).collect();
    let uniform: Vec<Partition> = config
        .interval_counts
        .iter()
        .map(|&n| Partition::uniform(config.domain, n).expect("validated n"))
        .collect();

    let mut cells = Vec::new();
    for &family in &config.families {
        // Per trial: (dtr, rp) errors in (γ, n) order plus mean widths per n.
        let trials = par_indexed(config.trials, |t| {
            let signal = trial_signal(config.seed, family, t);
            let values = grid.tabulate(&signal);
            let partitions: Vec<Partition> = match mode {
                PartitionMode::Uniform => uniform.clone(),
                PartitionMode::Stochastic => config
                    .interval_counts
                    .iter()
                    .map(|&n| {
                        Partition::stochastic(config.domain, n, &mut partition_stream(config.seed, family, n, t))
                            .expect("validated n")
                    })
                    .collect(),
            };
            let mut errors = Vec::with_capacity(discounts.len() * partitions.len());
            for (d, w) in discounts.iter().zip(&weights) {
                let reference = grid.integrate(w, &values);
                for p in &partitions {
                    let dtr = crate::quadrature::dtr_sum(d, &signal, p);
                    let rp = crate::quadrature::rp_sum(d, &signal, p);
                    errors.push(((dtr - reference).abs(), (rp - reference).abs()));
                }
            }
            let mean_widths: Vec<f64> = partitions.iter().map(mean_width).collect();
            (errors, mean_widths)
        });
        for (gi, &gamma) in config.gammas.iter().enumerate() {
            for (ni, &n) in config.interval_counts.iter().enumerate() {
                let mut cell = QuadCell::new(family.name().into(), Some(gamma), n, config.trials);
                let k = gi * config.interval_counts.len() + ni;
                for (errors, widths) in &trials {
                    cell.dtr_errors.push(errors[k].0);
                    cell.rp_errors.push(errors[k].1);
                    cell.mean_deltas.push(widths[ni]);
                }
                cells.push(cell);
            }
        }
    }
    QuadTable { experiment, seed: config.seed, cells }
}

/// Mean of the realized interval widths.
fn mean_width(p: &Partition) -> f64 {
    p.widths().iter().sum::<f64>() / p.intervals() as f64
}

pub fn run_quad_fixed(config: &QuadExperimentConfig) -> QuadTable {
    run_quad(config, PartitionMode::Uniform)
}

pub fn run_quad_stochastic(config: &QuadExperimentConfig) -> QuadTable {
    run_quad(config, PartitionMode::Stochastic)
}

fn factor(source: FactorSource, seed: u64, pair: usize, trial: usize, side: u64) -> Signal {
    match source {
        FactorSource::Constant(c) => Signal::Constant(c),
        FactorSource::Family(f) => {
            f.sample(&mut rng::stream(seed, &[PRODUCT_STREAM, pair as u64, trial as u64, side]))
        }
    }
}

/// Undiscounted `∫ f g` for each configured pair of factors.
pub fn run_quad_products(config: &ProductExperimentConfig) -> QuadTable {
    let grid = MidpointGrid::reference(config.domain);
    let partitions: Vec<Partition> = config
        .interval_counts
        .iter()
        .map(|&n| Partition::uniform(config.domain, n).expect("validated n"))
        .collect();
    let mut cells = Vec::new();
    for (pi, &(left, right)) in config.pairs.iter().enumerate() {
        let trials = par_indexed(config.trials, |t| {
            let f = factor(left, config.seed, pi, t, 0);
            let g = factor(right, config.seed, pi, t, 1);
            let reference = grid.integrate(&grid.tabulate(&f), &grid.tabulate(&g));
            partitions
                .iter()
                .map(|p| {
                    let dtr = generalized_dtr_sum(&f, &g, p);
                    let rp = generalized_rp_sum(&f, &g, p);
                    ((dtr - reference).abs(), (rp - reference).abs())
                })
                .collect::<Vec<_>>()
        });
        let family = format!("{}*{}", left.name(), right.name());
        for (ni, &n) in config.interval_counts.iter().enumerate() {
            let mut cell = QuadCell::new(family.clone(), None, n, config.trials);
            for errors in &trials {
                cell.dtr_errors.push(errors[ni].0);
                cell.rp_errors.push(errors[ni].1);
                cell.mean_deltas.push(partitions[ni].mean_width());
            }
            cells.push(cell);
        }
    }
    QuadTable { experiment: QUAD_PRODUCTS, seed: config.seed, cells }
}
