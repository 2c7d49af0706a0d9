//! Experiment sweeps that regenerate the quadrature-error and servo-control
//! results as CSV tables.
//!
//! Every trial and run draws from its own stream derived from the base seed
//! and its coordinates, and results are merged by index. Output is therefore
//! independent of the thread count.

pub mod cli;
pub mod config;
pub mod control;
pub mod quad;
pub mod selftest;

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ControlExperimentConfig, HarnessConfig, ProductExperimentConfig, QuadExperimentConfig};

/// Bumped whenever the CSV columns change.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("CSV error on {path}: {message}")]
    Csv { path: String, message: String },
}

impl HarnessError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}

/// One measurement. Cell coordinates that do not apply are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub family: String,
    pub gamma: Option<f64>,
    pub n: Option<usize>,
    pub delta_mu: Option<f64>,
    pub alpha: Option<f64>,
    pub variant: String,
    pub seed: u64,
    pub index: Option<u64>,
    pub metric: String,
    /// Empty when the run diverged.
    pub value: Option<f64>,
    pub diverged: bool,
}

impl ResultRow {
    pub fn new(experiment: &str, seed: u64, metric: &str, value: f64) -> Self {
        Self {
            experiment: experiment.to_string(),
            family: String::new(),
            gamma: None,
            n: None,
            delta_mu: None,
            alpha: None,
            variant: String::new(),
            seed,
            index: None,
            metric: metric.to_string(),
            value: Some(value),
            diverged: false,
        }
    }
}

/// Sample mean with standard error `s / √count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, count };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let se = if count > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (count - 1) as f64).sqrt() / (count as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, count }
    }
}

/// Runs `f(0..count)` on the current rayon pool and returns results in index order.
pub(crate) fn par_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<(), csv::Error> {
    let mut out = out;
    writeln!(out, "# discretized-returns results schema v{CSV_SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>, csv::Error> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input)
        .deserialize()
        .collect()
}

pub fn write_rows_to(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_rows(io::BufWriter::new(file), rows).map_err(|e| HarnessError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_rows_from(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_rows(io::BufReader::new(file)).map_err(|e| HarnessError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_and_standard_error() {
        let s = MeanSe::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/3)/2
        assert!((s.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(MeanSe::from_values(&[7.0]).se, 0.0);
        assert!(MeanSe::from_values(&[]).mean.is_nan());
    }

    #[test]
    fn header_is_versioned() {
        let mut buf = Vec::new();
        write_rows(&mut buf, &[ResultRow::new("x", 1, "m", 0.5)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# discretized-returns results schema v1"));
        assert_eq!(
            lines.next(),
            Some("experiment,family,gamma,n,delta_mu,alpha,variant,seed,index,metric,value,diverged")
        );
    }

    fn arb_row() -> impl Strategy<Value = ResultRow> {
        (
            "[a-z_]{1,12}",
            proptest::option::of(-1e6f64..1e6),
            proptest::option::of(0usize..1000),
            any::<u64>(),
            proptest::option::of(any::<f64>().prop_filter("finite", |v| v.is_finite())),
            any::<bool>(),
        )
            .prop_map(|(name, gamma, n, seed, value, diverged)| ResultRow {
                experiment: name.clone(),
                family: name,
                gamma,
                n,
                delta_mu: gamma.map(|g| g * 0.5),
                alpha: None,
                variant: "rp".into(),
                seed,
                index: n.map(|v| v as u64),
                metric: "m".into(),
                value,
                diverged,
            })
    }

    proptest! {
        #[test]
        fn rows_roundtrip_through_csv(rows in proptest::collection::vec(arb_row(), 0..20)) {
            let mut buf = Vec::new();
            write_rows(&mut buf, &rows).unwrap();
            prop_assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
        }
    }
}
