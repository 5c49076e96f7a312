mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dichotomia::Error;

/// Dichotomy spectra, dichotomy certificates and linearizing conjugacies
/// for nonautonomous difference equations x_{n+1} = A_n x_n + f_n(x_n).
#[derive(Parser, Debug)]
#[command(name = "dichotomia", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// System description (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Half-width N of the index window.
    #[arg(long, global = true)]
    pub window: Option<i64>,
    /// Command tolerance: spectrum endpoint tolerance, or the conjugacy
    /// residual tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Scale grid "a:b:steps" for spectrum probes.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// Run the conjugacy even if the gap conditions fail.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads.
    #[arg(long, global = true, env = "DICHOTOMIA_THREADS")]
    pub threads: Option<usize>,
    /// Seed for sampled checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dichotomy spectrum: spectrum.json and spectrum.csv.
    Spectrum,
    /// Spectral-gap conditions: gap.json.
    GapCheck {
        /// Read intervals from a spectrum report instead of computing them.
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Dichotomy certificate at one scale: certificate.json, projections.csv.
    Certify {
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Truncated aI - 𝔸: operator.txt (sparse triplets) and operator.json.
    Operator {
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// zero or periodic.
        #[arg(long, default_value = "zero")]
        boundary: String,
    },
    /// Conjugacy tables: conjugacy.csv, residuals.csv, residuals.json.
    Conjugate {
        /// Series truncation T.
        #[arg(long, default_value_t = 60)]
        horizon: usize,
        /// Points per axis of the sample grid on [-1, 1]^d.
        #[arg(long, default_value_t = 21)]
        points: usize,
        #[arg(long, default_value_t = -5, allow_hyphen_values = true)]
        m_min: i64,
        #[arg(long, default_value_t = 5, allow_hyphen_values = true)]
        m_max: i64,
    },
    /// Stable-foliation solve at one point: foliation.json, foliation.csv.
    Foliation {
        /// Base point, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// Leaf parameter in the stable subspace, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        #[arg(long, default_value_t = 60)]
        horizon: usize,
    },
    /// Invariant suite: verify.json.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_COVERAGE: u8 = 2;
pub const EXIT_GAP_FAIL: u8 = 3;
pub const EXIT_ONE_SIDED: u8 = 4;
pub const EXIT_CONTRACTION: u8 = 5;
pub const EXIT_CONFIG: u8 = 64;

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Coverage { .. } => EXIT_COVERAGE,
        Error::NonContraction { .. } | Error::BackwardSolve { .. } => EXIT_CONTRACTION,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(k) = cli.common.threads {
        if k == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let c = &cli.common;
    let result = match &cli.command {
        Command::Spectrum => commands::spectrum(c),
        Command::GapCheck { spectrum } => commands::gap_check(c, spectrum.as_deref()),
        Command::Certify { scale } => commands::certify(c, *scale),
        Command::Operator { scale, boundary } => commands::operator(c, *scale, boundary),
        Command::Conjugate {
            horizon,
            points,
            m_min,
            m_max,
        } => commands::conjugate(c, *horizon, *points, *m_min, *m_max),
        Command::Foliation { x, y, horizon } => commands::foliation(c, x, y, *horizon),
        Command::Verify { inject_fault } => commands::verify(c, *inject_fault),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
