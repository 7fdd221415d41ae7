//! Command-line orchestration of the aridity pipeline.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod render;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

/// Bad arguments, configuration or references; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Unreadable, malformed or inconsistent input data; exits with status 2.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataError {}

/// Exit status for an error, judged by the first recognised cause.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use aridprob_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Usage(_) | E::Domain(_) => EXIT_USAGE,
                E::Schema(_)
                | E::Parse { .. }
                | E::Coverage(_)
                | E::Shape(_)
                | E::Version { .. }
                | E::Integrity(_)
                | E::Io { .. } => EXIT_DATA,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}

/// Inclusive year range written `1971-1989` or as a single year.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearRange(pub i32, pub i32);

impl std::str::FromStr for YearRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| v.trim().parse::<i32>().map_err(|_| format!("invalid year '{v}'"));
        let (a, b) = match s.split_once(['-', ':']) {
            Some((a, b)) if !a.is_empty() => (parse(a)?, parse(b)?),
            _ => {
                let y = parse(s)?;
                (y, y)
            }
        };
        if b < a {
            return Err(format!("year range {a}-{b} is reversed"));
        }
        Ok(YearRange(a, b))
    }
}

#[derive(Debug, Parser)]
#[command(name = "aridprob", version, about = "Probabilistic dry-climate classification of gridded climate data")]
pub struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed (overrides config and ARIDPROB_SEED)
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory (overrides config and ARIDPROB_OUT)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic latitude-gradient climate grid
    Synth(SynthArgs),
    /// Label every pixel-year as arid, semi-arid or non-arid
    Label(LabelArgs),
    /// Encode training years and fit the classifier
    Train(TrainArgs),
    /// Predict class probabilities for a range of years
    Predict(PredictArgs),
    /// Score predicted classes against labels
    Evaluate(EvaluateArgs),
    /// Temporal fluctuation maps, level shares and regional averages
    Fluct(FluctArgs),
    /// Draw a raster layer as an image
    Render(RenderArgs),
    /// Run every stage from one configuration
    Run,
    /// Print the resolved configuration as TOML
    Config,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Grid file format: binary or csv
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Climate grid (default: <out>/grid.*)
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Years to label (default: every grid year)
    #[arg(long)]
    pub years: Option<YearRange>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Training years (default: config years.train)
    #[arg(long)]
    pub years: Option<YearRange>,
    /// Continue from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Years to predict (default: config years.test)
    #[arg(long)]
    pub years: Option<YearRange>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Label file used as ground truth
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Years to score (default: every predicted year)
    #[arg(long)]
    pub years: Option<YearRange>,
}

#[derive(Debug, Args)]
pub struct FluctArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub years: Option<YearRange>,
    /// Comma-separated preset regions (replaces the configured list)
    #[arg(long, value_delimiter = ',')]
    pub regions: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// class, label, prob_arid, prob_semiarid, prob_nonarid, pr_winsorized, cv or level
    #[arg(long)]
    pub variable: String,
    /// Layer file (default chosen by variable)
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub year: Option<i32>,
    /// Integer upscaling factor
    #[arg(long)]
    pub scale: Option<u32>,
    /// png or ppm
    #[arg(long)]
    pub format: Option<String>,
    /// Image path (default: <out>/render/<variable>_<year>.<ext>)
    #[arg(long)]
    pub image: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli, |k| std::env::var(k).ok()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_ranges_parse() {
        assert_eq!("1971-1989".parse::<YearRange>().unwrap(), YearRange(1971, 1989));
        assert_eq!("1975".parse::<YearRange>().unwrap(), YearRange(1975, 1975));
        assert!("1989-1971".parse::<YearRange>().is_err());
        assert!("x".parse::<YearRange>().is_err());
    }

    #[test]
    fn errors_map_to_exit_codes() {
        let usage = anyhow::Error::new(UsageError("x".into()));
        assert_eq!(exit_code(&usage), EXIT_USAGE);
        let data = anyhow::Error::new(aridprob_core::Error::Integrity("x".into())).context("loading");
        assert_eq!(exit_code(&data), EXIT_DATA);
        assert_eq!(exit_code(&anyhow::anyhow!("bug")), EXIT_INTERNAL);
    }
}
