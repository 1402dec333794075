//! `mfom` command-line interface.
//!
//! ```text
//! mfom metrics --scores trials.csv [--priors 0.1,0.05,0.01] [--c-miss 1] [--c-fa 1] [--format json|csv]
//! mfom det --scores trials.csv [--out det.csv]
//! mfom experiment --out DIR [--seed 0] [--num-seeds 10] [--priors ...] [--c-miss 1] [--c-fa 1]
//! ```
//!
//! Exit codes: 0 success, 1 usage error, 2 parse or domain error, 3 i/o error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfom_core::experiment::{self, ExperimentConfig, ExperimentReport, MethodRun, SynthSpec};
use mfom_core::scoring::{self, DcfParams, ScoreSet};
use mfom_core::{scorefile, Error};
use rayon::prelude::*;
use serde::Serialize;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_IO: u8 = 3;

pub const METRICS_FORMAT: &str = "mfom-metrics/1";
pub const DET_HEADER: &str = "threshold,p_miss,p_fa,probit_p_fa,probit_p_miss";
pub const METRICS_CSV_HEADER: &str = "metric,p_tar,value,display,threshold";

#[derive(Debug, Parser)]
#[command(
    name = "mfom",
    version,
    about = "Detection metrics and MFoM fine-tuning experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// EER and minDCF of a trial score file.
    Metrics(MetricsArgs),
    /// DET curve points of a trial score file, as CSV.
    Det(DetArgs),
    /// Baseline plus MFoM fine-tuning on synthetic data.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Comma-separated target priors, each in (0, 1).
    #[arg(long, value_parser = parse_priors, default_value = "0.1,0.05,0.01")]
    pub priors: Priors,
    #[arg(long, value_parser = parse_cost, default_value = "1")]
    pub c_miss: f64,
    #[arg(long, value_parser = parse_cost, default_value = "1")]
    pub c_fa: f64,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[command(flatten)]
    pub costs: CostArgs,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Output directory for report.json and scores/.
    #[arg(long)]
    pub out: PathBuf,
    /// First seed; seeds run from here upward.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub num_seeds: u64,
    #[command(flatten)]
    pub costs: CostArgs,
}

/// Newtype so clap treats the whole list as one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors(pub Vec<f64>);

fn parse_priors(s: &str) -> Result<Priors, String> {
    let priors = s
        .split(',')
        .map(|p| {
            let v: f64 = p
                .trim()
                .parse()
                .map_err(|_| format!("'{p}' is not a number"))?;
            if v > 0.0 && v < 1.0 {
                Ok(v)
            } else {
                Err(format!("prior {v} is outside (0, 1)"))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Priors(priors))
}

fn parse_cost(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("cost must be a positive number, got '{s}'")),
    }
}

#[derive(Debug)]
enum Failure {
    Data(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Data(other),
        }
    }
}

/// Parses `args` (program name first) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::Det(a) => cmd_det(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "mfom: {e}");
            EXIT_DATA
        }
        Err(Failure::Io(msg)) => {
            let _ = writeln!(err, "mfom: i/o error: {msg}");
            EXIT_IO
        }
    }
}

fn load_scores(path: &Path) -> Result<ScoreSet, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let set = scorefile::parse_scores_str(&text)?;
    set.ensure_both_classes()?;
    Ok(set)
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Io(e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EerReport {
    pub percent: f64,
    pub display: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct DcfReport {
    pub p_tar: f64,
    pub raw: f64,
    pub normalized: f64,
    pub display: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub c_miss: f64,
    pub c_fa: f64,
    pub eer: EerReport,
    pub min_dcf: Vec<DcfReport>,
}

pub fn metrics_report(
    set: &ScoreSet,
    priors: &[f64],
    c_miss: f64,
    c_fa: f64,
) -> mfom_core::Result<MetricsReport> {
    let eer = scoring::eer(set)?;
    let min_dcf = priors
        .iter()
        .map(|&p| {
            let r = scoring::min_dcf(set, &DcfParams::new(c_miss, c_fa, p)?)?;
            Ok(DcfReport {
                p_tar: p,
                raw: r.raw,
                normalized: r.normalized,
                display: format!("{:.2}", r.normalized),
                threshold: r.threshold,
            })
        })
        .collect::<mfom_core::Result<Vec<_>>>()?;
    Ok(MetricsReport {
        format: METRICS_FORMAT.to_string(),
        n_target: set.n_target(),
        n_nontarget: set.n_nontarget(),
        c_miss,
        c_fa,
        eer: EerReport {
            percent: 100.0 * eer.eer,
            display: format!("{:.2}", 100.0 * eer.eer),
            threshold: eer.threshold,
        },
        min_dcf,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    /// Same numbers as the JSON form, one metric per row. Values use the
    /// shortest representation that parses back to the identical f64.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{METRICS_CSV_HEADER}");
        let e = &self.eer;
        let _ = writeln!(
            s,
            "eer_percent,,{},{},{}",
            e.percent, e.display, e.threshold
        );
        for d in &self.min_dcf {
            let _ = writeln!(
                s,
                "min_dcf_raw,{},{},{:.2},{}",
                d.p_tar, d.raw, d.raw, d.threshold
            );
            let _ = writeln!(
                s,
                "min_dcf_normalized,{},{},{},{}",
                d.p_tar, d.normalized, d.display, d.threshold
            );
        }
        s
    }
}

fn cmd_metrics(args: &MetricsArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let set = load_scores(&args.scores)?;
    let report = metrics_report(
        &set,
        &args.costs.priors.0,
        args.costs.c_miss,
        args.costs.c_fa,
    )?;
    let text = match args.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    emit(&text, args.out.as_deref(), out)
}

/// Formats like C's `%.{digits}g`.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn det_csv(set: &ScoreSet) -> mfom_core::Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "{DET_HEADER}");
    for d in scoring::det_points(set)? {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_sig(d.threshold, 9),
            fmt_sig(d.p_miss, 9),
            fmt_sig(d.p_fa, 9),
            fmt_sig(d.x, 9),
            fmt_sig(d.y, 9)
        );
    }
    Ok(s)
}

fn cmd_det(args: &DetArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let set = load_scores(&args.scores)?;
    emit(&det_csv(&set)?, args.out.as_deref(), out)
}

pub fn score_file_name(seed: u64, method: &str) -> String {
    format!("seed{seed}_{method}.csv")
}

/// Runs seeds in parallel; results are merged in seed order so the report
/// does not depend on scheduling.
pub fn run_seeds(
    spec: &SynthSpec,
    cfg: &ExperimentConfig,
    seeds: &[u64],
) -> mfom_core::Result<(ExperimentReport, Vec<MethodRun>)> {
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let (spec, cfg) = experiment::seeded(spec, cfg, seed);
            experiment::run_seed(&spec, &cfg)
        })
        .collect::<mfom_core::Result<Vec<_>>>()?;
    let runs: Vec<MethodRun> = per_seed.into_iter().flatten().collect();
    let records = runs.iter().map(|r| r.record.clone()).collect();
    Ok((ExperimentReport::new(spec, cfg, records)?, runs))
}

pub fn experiment_setup(
    args: &ExperimentArgs,
) -> mfom_core::Result<(SynthSpec, ExperimentConfig, Vec<u64>)> {
    let spec = SynthSpec::default_with_seed(args.seed);
    let mut cfg = ExperimentConfig::default_with_seed(args.seed);
    cfg.eval_priors = args.costs.priors.0.clone();
    cfg.c_miss = args.costs.c_miss;
    cfg.c_fa = args.costs.c_fa;
    cfg.validate()?;
    let seeds = (0..args.num_seeds)
        .map(|i| {
            args.seed
                .checked_add(i)
                .ok_or_else(|| Error::Domain("seed range overflows u64".into()))
        })
        .collect::<mfom_core::Result<Vec<_>>>()?;
    Ok((spec, cfg, seeds))
}

fn cmd_experiment(args: &ExperimentArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (spec, cfg, seeds) = experiment_setup(args)?;
    let (report, runs) = run_seeds(&spec, &cfg, &seeds)?;

    let io = |p: &Path, e: std::io::Error| Failure::Io(format!("{}: {e}", p.display()));
    let score_dir = args.out.join("scores");
    fs::create_dir_all(&score_dir).map_err(|e| io(&score_dir, e))?;
    for run in &runs {
        let path = score_dir.join(score_file_name(run.record.seed, &run.record.method));
        fs::write(&path, scorefile::format_scores(&run.scores)?).map_err(|e| io(&path, e))?;
    }
    let report_path = args.out.join("report.json");
    fs::write(&report_path, report.to_json() + "\n").map_err(|e| io(&report_path, e))?;

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "method      median EER%  median minDCF@{}",
        cfg.eval_priors[0]
    );
    for m in &report.comparison.medians {
        let _ = writeln!(
            summary,
            "{:<11} {:>11.2}  {:>8.2}",
            m.method,
            100.0 * m.eer,
            m.min_dcf[0]
        );
    }
    if let Some(t) = &report.comparison.trend {
        let _ = writeln!(
            summary,
            "{} not worse than baseline in {}/{} seeds, median improvement {:.4}",
            t.method, t.not_worse, t.seeds, t.median_improvement
        );
    }
    let _ = writeln!(summary, "wrote {}", report_path.display());
    out.write_all(summary.as_bytes())
        .map_err(|e| Failure::Io(e.to_string()))
}
