//! `dreturns` command line.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::HarnessConfig;
use super::control::{best_alpha_from_rows, run_servo_curves, run_servo_sweep};
use super::quad::{run_quad_fixed, run_quad_products, run_quad_stochastic, signal_records};
use super::{read_rows_from, selftest, write_rows, write_rows_to, HarnessError, ResultRow};
use crate::reinforce::ReturnVariant;
use crate::servo_env::TraceRow;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SELFTEST: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dreturns", version, about = "Discretized-return quadrature and servo control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discounted random signals on uniform partitions.
    QuadFixed(QuadArgs),
    /// Discounted random signals on stochastic partitions.
    QuadStochastic(QuadArgs),
    /// Undiscounted products of random signals.
    QuadProducts(Common),
    /// Final performance over the (interval, step size, variant) grid.
    ServoSweep(ServoArgs),
    /// Learning curves at the selected step sizes.
    ServoCurves(CurveArgs),
    /// Quick invariant checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file overriding any default.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct QuadArgs {
    #[command(flatten)]
    common: Common,
    /// Also emit one row per trial.
    #[arg(long)]
    per_trial: bool,
    /// Write the sampled signals, one record per line.
    #[arg(long)]
    dump_signals: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServoArgs {
    #[command(flatten)]
    common: Common,
    /// Simulated minutes per run.
    #[arg(long)]
    minutes: Option<f64>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[command(flatten)]
    servo: ServoArgs,
    /// Sweep CSV from which the best step size per variant is taken.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long)]
    alpha_dtr: Option<f64>,
    #[arg(long)]
    alpha_rp: Option<f64>,
    /// Episode trace of run 0 for each variant, as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Harness(HarnessError),
    SelftestFailed(usize),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Harness(e)
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Diagnostics go to standard error.
pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(args) {
        Ok(p) => p,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(parsed.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::SelftestFailed(n)) => {
            eprintln!("dreturns: {n} self-test check(s) failed");
            EXIT_SELFTEST
        }
        Err(CliError::Harness(e)) => {
            eprintln!("dreturns: {e}");
            match e {
                HarnessError::Config(_) => EXIT_CONFIG,
                HarnessError::Io { .. } | HarnessError::Csv { .. } => EXIT_IO,
            }
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Selftest { seed } => {
            let checks = selftest::run_all(seed);
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} passed, {failed} failed", checks.len() - failed);
            if failed > 0 {
                return Err(CliError::SelftestFailed(failed));
            }
            Ok(())
        }
        Command::QuadFixed(args) => quad(args, false),
        Command::QuadStochastic(args) => quad(args, true),
        Command::QuadProducts(common) => {
            let cfg = load(&common)?;
            let mut c = cfg.quad_products;
            override_seed_trials(&common, &mut c.seed, &mut c.trials);
            c.validate()?;
            check_out_dir(&common.out)?;
            let rows = in_pool(common.jobs, || run_quad_products(&c).to_rows(false))?;
            emit(&common.out, &rows)
        }
        Command::ServoSweep(args) => {
            let c = control_config(&args)?;
            check_out_dir(&args.common.out)?;
            let rows = in_pool(args.common.jobs, || run_servo_sweep(&c).to_rows())?;
            emit(&args.common.out, &rows)
        }
        Command::ServoCurves(args) => curves(args),
    }
}

fn load(common: &Common) -> Result<HarnessConfig, HarnessError> {
    match &common.config {
        Some(path) => HarnessConfig::load(path),
        None => Ok(HarnessConfig::standard()),
    }
}

fn override_seed_trials(common: &Common, seed: &mut u64, trials: &mut usize) {
    if let Some(s) = common.seed {
        *seed = s;
    }
    if let Some(t) = common.trials {
        *trials = t;
    }
}

fn quad(args: QuadArgs, stochastic: bool) -> Result<(), CliError> {
    let cfg = load(&args.common)?;
    let mut c = if stochastic { cfg.quad_stochastic } else { cfg.quad_fixed };
    override_seed_trials(&args.common, &mut c.seed, &mut c.trials);
    c.validate()?;
    check_out_dir(&args.common.out)?;
    if let Some(path) = &args.dump_signals {
        check_out_dir(&Some(path.clone()))?;
        let mut text = signal_records(&c).join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
    }
    let rows = in_pool(args.common.jobs, || {
        let table = if stochastic { run_quad_stochastic(&c) } else { run_quad_fixed(&c) };
        table.to_rows(args.per_trial)
    })?;
    emit(&args.common.out, &rows)
}

fn control_config(args: &ServoArgs) -> Result<super::ControlExperimentConfig, HarnessError> {
    let mut c = load(&args.common)?.control;
    if let Some(s) = args.common.seed {
        c.seed = s;
    }
    if let Some(r) = args.common.runs {
        c.runs = r;
    }
    if let Some(m) = args.minutes {
        c.run_seconds = m * 60.0;
    }
    c.validate()?;
    Ok(c)
}

fn curves(args: CurveArgs) -> Result<(), CliError> {
    let mut c = control_config(&args.servo)?;
    let common = &args.servo.common;
    if let Some(a) = args.alpha_dtr {
        c.curve_alpha_dtr = Some(a);
    }
    if let Some(a) = args.alpha_rp {
        c.curve_alpha_rp = Some(a);
    }
    let sweep = match &args.sweep {
        Some(path) => read_rows_from(path)?,
        None => Vec::new(),
    };
    let mut settings = Vec::new();
    for (variant, fixed) in [(ReturnVariant::Dtr, c.curve_alpha_dtr), (ReturnVariant::Rp, c.curve_alpha_rp)] {
        if !c.variants.contains(&variant) {
            continue;
        }
        let alpha = fixed.or_else(|| best_alpha_from_rows(&sweep, c.curve_delta_mean, variant));
        match alpha {
            Some(a) if a >= 0.0 && a.is_finite() => settings.push((variant, a)),
            _ => {
                return Err(HarnessError::Config(format!(
                    "no step size for {} curves at delta_mu {}: pass --sweep or --alpha-{}",
                    variant.name(),
                    c.curve_delta_mean,
                    variant.name()
                ))
                .into())
            }
        }
    }
    check_out_dir(&common.out)?;
    if args.trace.is_some() {
        check_out_dir(&args.trace)?;
    }
    let mut trace = Vec::new();
    let want_trace = args.trace.is_some();
    let rows = in_pool(common.jobs, || {
        run_servo_curves(&c, &settings, want_trace.then_some(&mut trace)).to_rows()
    })?;
    if let Some(path) = &args.trace {
        write_trace(path, &trace)?;
    }
    emit(&common.out, &rows)
}

fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Csv { path: path.display().to_string(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Fails early, before any computation, when the output's directory is missing.
fn check_out_dir(out: &Option<PathBuf>) -> Result<(), HarnessError> {
    let Some(path) = out else { return Ok(()) };
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => return Ok(()),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(HarnessError::io(
            path,
            io::Error::new(io::ErrorKind::NotFound, format!("directory {} does not exist", parent.display())),
        ))
    }
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(HarnessError::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}"))),
    }
}

fn emit(out: &Option<PathBuf>, rows: &[ResultRow]) -> Result<(), CliError> {
    match out {
        Some(path) => write_rows_to(path, rows)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_rows(&mut lock, rows).map_err(|e| HarnessError::Csv {
                path: "<stdout>".into(),
                message: e.to_string(),
            })?;
            lock.flush().map_err(|e| HarnessError::io(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}
