//! The `photostat` command line.
//!
//! Exit status is 0 on success, 2 on usage errors (including invalid
//! parameter values) and 1 when a computation fails.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self as stdio, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::conditioner::{build_conditional, cond_count_dist_with, Conditioned, SelectionRule, Verification};
use crate::counting::{joint_table, marginal_distribution, DEFAULT_TOL};
use crate::error::Error;
use crate::figures::{reproduce, sweep_meta, Figure, FigureOptions};
use crate::inference::{estimate_params, fidelity, EstimateOptions, ModeEstimator};
use crate::io::{self, ConditionalStateDoc, CsvKind, Meta};
use crate::nongauss::{nongauss_report, sweep, Energy, SweepAxis, SweepSpec};
use crate::params::ExperimentParams;
use crate::sampler::{sample_run, TwinBeamSource};

/// Environment variable naming the default `reproduce` output directory.
pub const OUT_DIR_ENV: &str = "PHOTOSTAT_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "photostat", version, about = "Photon-counting statistics of multimode twin beams")]
struct Cli {
    /// Truncation tolerance on omitted probability mass.
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format; inferred from the --out extension, else csv.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads; all cores when absent. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone, Copy)]
struct ParamArgs {
    /// Number of modes.
    #[arg(long)]
    mu: f64,
    /// Detection efficiency.
    #[arg(long)]
    eta: f64,
    /// Mean photoelectrons per beam.
    #[arg(long)]
    mean: f64,
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("rule").required(true).args(["t", "above", "below", "at_least", "at_most", "set"])))]
struct RuleArgs {
    /// Exactly N idler counts.
    #[arg(long)]
    t: Option<u64>,
    /// More than T idler counts.
    #[arg(long)]
    above: Option<u64>,
    /// Fewer than T idler counts.
    #[arg(long)]
    below: Option<u64>,
    /// T or more idler counts.
    #[arg(long)]
    at_least: Option<u64>,
    /// T or fewer idler counts.
    #[arg(long)]
    at_most: Option<u64>,
    /// Comma-separated list of accepted idler counts.
    #[arg(long, value_delimiter = ',')]
    set: Option<Vec<u64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Joint photoelectron distribution p(s, t).
    Joint {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Multithermal marginal of either arm.
    Marginal {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Signal count distribution conditioned on the idler outcome.
    Conditional {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        rule: RuleArgs,
        /// Skip the cross-check of the two evaluation routes.
        #[arg(long)]
        no_verify: bool,
    },
    /// Entropies and nonGaussianity of the state conditioned on t counts (JSON).
    Nongauss {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        t: u64,
        /// Logarithm base of the entropies.
        #[arg(long, default_value_t = std::f64::consts::E)]
        log_base: f64,
    },
    /// nonGaussianity along one parameter axis.
    #[command(group(ArgGroup::new("energy").required(true).args(["mt", "mean"])))]
    Sweep {
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated grid of axis values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        t: Option<u64>,
        /// Hold the conditional mean M_t fixed.
        #[arg(long)]
        mt: Option<f64>,
        /// Hold the unconditioned mean M fixed.
        #[arg(long)]
        mean: Option<f64>,
    },
    /// Synthetic shot record from an integer-mode source.
    Sample {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        shots: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate (mu, eta, M) from a shot record.
    Estimate {
        /// Shot record, CSV (`s,t`) or JSON.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fit the mode count by maximum likelihood instead of moments.
        #[arg(long)]
        ml: bool,
    },
    /// Bhattacharyya fidelity of two tables or shot records.
    Fidelity {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Write the plot data of one figure.
    Reproduce {
        #[arg(long, value_parser = parse_figure)]
        figure: Figure,
        #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Shots in each synthetic overlay.
        #[arg(long, default_value_t = 50_000)]
        shots: u64,
    },
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_figure(s: &str) -> Result<Figure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<stdio::Error> for Failure {
    fn from(e: stdio::Error) -> Self {
        Failure::Compute(e.into())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl ParamArgs {
    fn validate(&self) -> CliResult<ExperimentParams> {
        if !(self.mu.is_finite() && self.mu >= 1.0) {
            return Err(usage(format!("--mu must be a number >= 1, got {}", self.mu)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(usage(format!("--eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.mean.is_finite() && self.mean >= 0.0) {
            return Err(usage(format!("--mean must be a number >= 0, got {}", self.mean)));
        }
        ExperimentParams::new(self.mu, self.eta, self.mean).map_err(|e| usage(e.to_string()))
    }
}

impl RuleArgs {
    fn rule(&self) -> CliResult<SelectionRule> {
        Ok(match self {
            RuleArgs { t: Some(t), .. } => SelectionRule::Exact(*t),
            RuleArgs { above: Some(x), .. } => SelectionRule::Above(*x),
            RuleArgs { below: Some(x), .. } => SelectionRule::Below(*x),
            RuleArgs { at_least: Some(x), .. } => SelectionRule::AtLeast(*x),
            RuleArgs { at_most: Some(x), .. } => SelectionRule::AtMost(*x),
            RuleArgs { set: Some(v), .. } => SelectionRule::set(v.clone()).map_err(|e| usage(format!("--set: {e}")))?,
            _ => return Err(usage("one of --t, --above, --below, --at-least, --at-most, --set is required")),
        })
    }
}

struct Output {
    path: Option<PathBuf>,
    format: Format,
}

impl Output {
    fn sink(&self) -> CliResult<Box<dyn Write>> {
        Ok(match &self.path {
            Some(p) => Box::new(BufWriter::new(
                File::create(p)
                    .map_err(|e| Failure::Compute(Error::Format { path: Some(p.clone()), reason: e.to_string() }))?,
            )),
            None => Box::new(BufWriter::new(stdio::stdout().lock())),
        })
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Compute(Error::Format { path: Some(path.to_path_buf()), reason: e.to_string() }))
}

fn with_path<T>(path: &Path, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Format { path: None, reason } => Failure::Compute(Error::Format { path: Some(path.into()), reason }),
        other => Failure::Compute(other),
    })
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(usage("--threads must be >= 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Failure::Compute(Error::InvalidParameter(e.to_string()))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    let tol = cli.tol;
    if !(tol > 0.0 && tol < 1.0) {
        return Err(usage(format!("--tol must lie in (0, 1), got {tol}")));
    }
    let format = cli.format.unwrap_or(match &cli.out {
        Some(p) if is_json(p) => Format::Json,
        _ => Format::Csv,
    });
    let out = Output { path: cli.out.clone(), format };

    match &cli.command {
        Command::Joint { params } => {
            let joint = joint_table(&params.validate()?, tol)?;
            let sink = out.sink()?;
            match out.format {
                Format::Csv => io::write_joint_csv(sink, &joint)?,
                Format::Json => io::write_joint_json(sink, &joint)?,
            }
        }
        Command::Marginal { params } => {
            let params = params.validate()?;
            let dist = marginal_distribution(&params, tol)?;
            let mut meta = Meta::new();
            meta.insert("params".into(), json!(params));
            meta.insert("tol".into(), json!(tol));
            let mut sink = out.sink()?;
            match out.format {
                Format::Csv => io::write_counts_csv(sink, &dist, &meta)?,
                Format::Json => {
                    let doc =
                        json!({"params": params, "tol": tol, "probs": dist.probs(), "tail_bound": dist.tail_bound()});
                    serde_json::to_writer_pretty(&mut sink, &doc).map_err(Error::from)?;
                    writeln!(sink)?;
                }
            }
        }
        Command::Conditional { params, rule, no_verify } => {
            let params = params.validate()?;
            let rule = rule.rule()?;
            let verify = if *no_verify { Verification::Off } else { Verification::On };
            let dist = cond_count_dist_with(&params, &rule, tol, verify)?;
            let state = build_conditional(&params, &rule, tol)?;
            let mut meta = Meta::new();
            meta.insert("params".into(), json!(params));
            meta.insert("rule".into(), json!(rule));
            meta.insert("tol".into(), json!(tol));
            meta.insert("acceptance".into(), json!(state.acceptance()));
            meta.insert("M_t".into(), json!(state.conditional_mean()));
            let mut sink = out.sink()?;
            match out.format {
                Format::Csv => io::write_counts_csv(sink, &dist, &meta)?,
                Format::Json => {
                    let doc = json!({
                        "params": params,
                        "rule": rule,
                        "tol": tol,
                        "acceptance": state.acceptance(),
                        "M_t": state.conditional_mean(),
                        "probs": dist.probs(),
                        "tail_bound": dist.tail_bound(),
                        "state": match &state {
                            Conditioned::Exact(s) => Some(ConditionalStateDoc::from(s)),
                            Conditioned::Mixture(_) => None,
                        },
                    });
                    serde_json::to_writer_pretty(&mut sink, &doc).map_err(Error::from)?;
                    writeln!(sink)?;
                }
            }
        }
        Command::Nongauss { params, t, log_base } => {
            if !(*log_base > 0.0 && *log_base != 1.0) {
                return Err(usage(format!("--log-base must be positive and not 1, got {log_base}")));
            }
            let report = nongauss_report(&params.validate()?, *t, tol)?.in_base(*log_base);
            let mut sink = out.sink()?;
            serde_json::to_writer_pretty(&mut sink, &report).map_err(Error::from)?;
            writeln!(sink)?;
        }
        Command::Sweep { axis, values, mu, eta, t, mt, mean } => {
            let first = values[0];
            let fixed = |value: Option<f64>, this: SweepAxis, flag: &str| -> CliResult<f64> {
                match value {
                    Some(v) => Ok(v),
                    None if *axis == this => Ok(first),
                    None => Err(usage(format!("{flag} is required unless it is the sweep axis"))),
                }
            };
            let spec = SweepSpec {
                axis: *axis,
                values: values.clone(),
                mu: fixed(*mu, SweepAxis::Mu, "--mu")?,
                eta: fixed(*eta, SweepAxis::Eta, "--eta")?,
                t: fixed(t.map(|t| t as f64), SweepAxis::T, "--t")? as u64,
                energy: match (mt, mean) {
                    (Some(x), _) => Energy::ConditionalMean(*x),
                    (None, Some(m)) => Energy::Mean(*m),
                    (None, None) => return Err(usage("one of --mt, --mean is required")),
                },
                tol,
            };
            let rows = sweep(&spec)?;
            let meta = sweep_meta(&spec);
            let sink = out.sink()?;
            match out.format {
                Format::Csv => io::write_sweep_csv(sink, &rows, &meta)?,
                Format::Json => io::write_sweep_json(sink, &rows, &meta)?,
            }
        }
        Command::Sample { params, shots, seed } => {
            let params = params.validate()?;
            if *shots == 0 {
                return Err(usage("--shots must be >= 1"));
            }
            let source = TwinBeamSource::from_params(&params).map_err(|e| usage(format!("--mu: {e}")))?;
            let record = sample_run(&source, *shots, *seed)?;
            let sink = out.sink()?;
            match out.format {
                Format::Csv => io::write_shots_csv(sink, &record)?,
                Format::Json => io::write_shots_json(sink, &record)?,
            }
        }
        Command::Estimate { input, bootstrap, seed, ml } => {
            let reader = open(input)?;
            let record = with_path(
                input,
                if is_json(input) { io::read_shots_json(reader) } else { io::read_shots_csv(reader) },
            )?;
            let options = EstimateOptions {
                bootstrap: *bootstrap,
                seed: *seed,
                modes: if *ml { ModeEstimator::MaxLikelihood } else { ModeEstimator::Moments },
                tol: tol.max(1e-10),
            };
            let report = estimate_params(&record, &options)?;
            match (&out.path, out.format) {
                (None, Format::Json) => {}
                _ => print!("{report}"),
            }
            if out.path.is_some() || out.format == Format::Json {
                let mut sink = out.sink()?;
                serde_json::to_writer_pretty(&mut sink, &report).map_err(Error::from)?;
                writeln!(sink)?;
            }
        }
        Command::Fidelity { a, b } => {
            let p = read_table(a)?;
            let q = read_table(b)?;
            println!("{:?}", fidelity(&p, &q));
        }
        Command::Reproduce { figure, out_dir, seed, shots } => {
            if *shots == 0 {
                return Err(usage("--shots must be >= 1"));
            }
            let opts = FigureOptions { out_dir: out_dir.clone(), seed: *seed, shots: *shots, tol };
            let manifest = reproduce(*figure, &opts)?;
            for entry in &manifest.files {
                println!("{}", out_dir.join(&entry.file).display());
            }
        }
    }
    Ok(())
}

fn read_table(path: &Path) -> CliResult<crate::distribution::ProbTable> {
    if is_json(path) {
        return Ok(with_path(path, io::read_joint_json(open(path)?))?.probs);
    }
    let kind = with_path(path, io::csv_kind(open(path)?))?;
    if matches!(kind, CsvKind::Sweep | CsvKind::Means) {
        return Err(Failure::Compute(Error::Format {
            path: Some(path.into()),
            reason: "expected a joint table, count distribution or shot record".into(),
        }));
    }
    with_path(path, io::read_table_csv(open(path)?))
}
