//! The `datalaw` command line tool.
//!
//! Exit codes: 0 on success, 2 on usage or validation errors, 3 when a fit
//! (or every Monte Carlo replicate) fails to converge. Reports are still
//! written before exiting with 3.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analyze::{data_equivalence_factor, mc_uncertainty, Law, McConfig};
use crate::corpus::{
    self, CorruptionKind, CorruptionSpec, Side, NOISE_ALPHABET,
};
use crate::error::{Error, Result};
use crate::fit::{fit_joint, fit_linear, fit_shared, fit_single, fit_tail, FitConfig, LossSpace};
use crate::law::{CapacityParams, JointLawParams, PowerLaw};
use crate::report::{Analysis, FitReport, Provenance};
use crate::table::{load_observations, simulate, ObservationTable, SimulateSpec};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "datalaw", version, about = "Fit and analyze data scaling laws L(D) = alpha (1/D + C)^p")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit alpha, C and p to a single learning curve.
    Fit(FitCmd),
    /// Fit one shared exponent with per-condition alpha and C.
    FitShared(FitSharedCmd),
    /// Fit alpha and p of the joint data/parameter law.
    FitJoint(FitJointCmd),
    /// Fit the variance-limited tail gamma * D^-q + B above a cutoff.
    FitTail(FitTailCmd),
    /// Ordinary least squares line between two CSV columns (e.g. BLEU vs loss).
    FitLinear(FitLinearCmd),
    /// Asymptote, transition point, marginal value and data-equivalence factor.
    Analyze(AnalyzeCmd),
    /// Monte Carlo spread of the fitted exponent under multiplicative noise.
    Mc(McCmd),
    /// Generate synthetic observations from a law.
    Simulate(SimulateCmd),
    /// Parallel-corpus operations on TAB-separated files.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Render a fit report as a plot-ready CSV table.
    Report(ReportCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpaceArg {
    Log,
    Linear,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Observation CSV: condition,d_millions,loss[,n_enc,n_dec][,metric][,replicate]
    input: PathBuf,
    /// Read sizes from a `d` column holding raw sentence-pair counts.
    #[arg(long)]
    raw_counts: bool,
    #[arg(long, value_enum, default_value = "log")]
    loss_space: SpaceArg,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    rel_tol: f64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Seed for the restart perturbations.
    #[arg(long)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            loss_space: match self.loss_space {
                SpaceArg::Log => LossSpace::Log,
                SpaceArg::Linear => LossSpace::Linear,
            },
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            n_restarts: self.restarts,
            seed: self.seed,
        }
    }

    fn load(&self) -> Result<ObservationTable> {
        load_observations(&self.input, self.raw_counts)
    }

    fn provenance(&self) -> Provenance {
        Provenance::new(self.input.display().to_string(), self.raw_counts, self.config())
    }
}

#[derive(Debug, Args)]
struct FitCmd {
    #[command(flatten)]
    fit: FitArgs,
    /// Condition to fit when the file holds several.
    #[arg(long)]
    condition: Option<String>,
}

#[derive(Debug, Args)]
struct FitSharedCmd {
    #[command(flatten)]
    fit: FitArgs,
    /// Restrict to these conditions (comma separated).
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<String>,
}

#[derive(Debug, Args)]
struct CapacityArgs {
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    p_e: f64,
    #[arg(long)]
    p_d: f64,
    #[arg(long)]
    l_inf: f64,
}

impl CapacityArgs {
    fn params(&self) -> CapacityParams {
        CapacityParams { beta: self.beta, p_e: self.p_e, p_d: self.p_d, l_inf: self.l_inf }
    }
}

#[derive(Debug, Args)]
struct FitJointCmd {
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    capacity: CapacityArgs,
    /// Model shape N_ENC,N_DEC (or N_ENCxN_DEC) to exclude from fitting.
    #[arg(long, value_parser = parse_shape)]
    hold_out: Option<(u64, u64)>,
}

#[derive(Debug, Args)]
struct FitTailCmd {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    d_min: f64,
    #[arg(long)]
    condition: Option<String>,
}

#[derive(Debug, Args)]
struct FitLinearCmd {
    input: PathBuf,
    #[arg(long, default_value = "x")]
    x: String,
    #[arg(long, default_value = "y")]
    y: String,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeCmd {
    /// Fit report to analyze, as PATH or PATH#CONDITION.
    #[arg(long, conflicts_with = "law")]
    report: Option<String>,
    /// Law given directly as ALPHA,C,P.
    #[arg(long, value_parser = parse_law)]
    law: Option<PowerLaw>,
    /// Dataset sizes (millions of pairs) at which to report the marginal value.
    #[arg(long, value_delimiter = ',')]
    at: Vec<f64>,
    /// Data-equivalence factor between two reports (PATH or PATH#CONDITION each).
    #[arg(long, num_args = 2, value_names = ["REPORT1", "REPORT2"])]
    equivalence: Option<Vec<String>>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct McCmd {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, default_value_t = 0.02)]
    noise_frac: f64,
    #[arg(long, default_value_t = 1000)]
    n_reps: usize,
}

#[derive(Debug, Args)]
struct SimulateCmd {
    /// Simple law ALPHA,C,P.
    #[arg(long, value_parser = parse_law, required_unless_present = "alpha")]
    law: Option<PowerLaw>,
    /// Joint law: alpha (requires --p, the capacity flags and --shape).
    #[arg(long, requires_all = ["p", "beta", "shape"], conflicts_with = "law")]
    alpha: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    p_e: Option<f64>,
    #[arg(long)]
    p_d: Option<f64>,
    #[arg(long)]
    l_inf: Option<f64>,
    /// Model shape N_ENC,N_DEC for joint simulations.
    #[arg(long, value_parser = parse_shape)]
    shape: Option<(u64, u64)>,
    /// Dataset sizes in millions of pairs (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    noise_frac: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "sim")]
    condition: String,
    #[arg(long, default_value_t = 1)]
    reps: u32,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    CharNoise,
    WordDelete,
    PairShuffle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SideArg {
    Source,
    Target,
}

#[derive(Debug, Args)]
struct CorpusIo {
    /// Input corpus (stdin when omitted).
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Output corpus (stdout when omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum CorpusCmd {
    /// Inject noise. Character noise draws replacements from the 94 printable
    /// ASCII symbols [a-zA-Z0-9] and !"#$%&'()*+,-./:;<=>?@[\]^_`{|}~ .
    Corrupt {
        #[command(flatten)]
        io: CorpusIo,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, value_enum, default_value = "target")]
        side: SideArg,
        /// Noise rate; defaults to 0.1 (char-noise), 0.15 (word-delete), 0.1 (pair-shuffle).
        #[arg(long)]
        prob: Option<f64>,
        #[arg(long)]
        seed: u64,
    },
    /// Keep the top fraction of pairs by score, or those above a threshold.
    Filter {
        #[command(flatten)]
        io: CorpusIo,
        #[arg(long, conflicts_with = "threshold", required_unless_present = "threshold")]
        fraction: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Uniform sample without replacement, in corpus order.
    Sample {
        #[command(flatten)]
        io: CorpusIo,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct ReportCmd {
    report: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_law(s: &str) -> std::result::Result<PowerLaw, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    let [alpha, c, p] = parts[..] else {
        return Err("expected ALPHA,C,P".into());
    };
    PowerLaw::new(alpha, c, p).map_err(|e| e.to_string())
}

fn parse_shape(s: &str) -> std::result::Result<(u64, u64), String> {
    let (a, b) = s
        .split_once(',')
        .or_else(|| s.split_once('x'))
        .ok_or_else(|| "expected N_ENC,N_DEC".to_string())?;
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|_| format!("'{v}' is not a parameter count"));
    Ok((parse(a)?, parse(b)?))
}

fn split_ref(spec: &str) -> (&str, Option<&str>) {
    match spec.split_once('#') {
        Some((path, cond)) => (path, Some(cond)),
        None => (spec, None),
    }
}

fn report_law(spec: &str) -> Result<PowerLaw> {
    let (path, cond) = split_ref(spec);
    FitReport::load(path)?.law(cond)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(out: &Option<PathBuf>, text: &str) -> Result<()> {
    let mut w = sink(out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn json_text(value: &serde_json::Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read_corpus(io_args: &CorpusIo) -> Result<Vec<corpus::SentencePair>> {
    match &io_args.input {
        Some(p) => corpus::read_corpus(BufReader::new(File::open(p)?), &p.display().to_string()),
        None => {
            let mut text = String::new();
            io::stdin().read_to_string(&mut text)?;
            corpus::read_corpus(text.as_bytes(), "<stdin>")
        }
    }
}

enum Outcome {
    Done,
    NotConverged,
}

fn converged(flag: bool) -> Outcome {
    if flag { Outcome::Done } else { Outcome::NotConverged }
}

fn emit_report(report: &FitReport, out: &Option<PathBuf>) -> Result<Outcome> {
    write_text(out, &report.to_json()?)?;
    Ok(converged(report.diagnostics.converged))
}

fn execute(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Fit(c) => {
            let table = c.fit.load()?;
            let obs = table.curve(c.condition.as_deref())?;
            let fit = fit_single(&obs, &c.fit.config())?;
            emit_report(&FitReport::single(&obs, &fit, c.fit.provenance())?, &c.fit.out)
        }
        Command::FitShared(c) => {
            let table = c.fit.load()?;
            let mut groups = table.groups();
            if !c.conditions.is_empty() {
                for name in &c.conditions {
                    if !groups.contains_key(name) {
                        return Err(Error::Schema(format!("no rows for condition '{name}'")));
                    }
                }
                groups.retain(|k, _| c.conditions.contains(k));
            }
            let fit = fit_shared(&groups, &c.fit.config())?;
            emit_report(&FitReport::shared(&groups, &fit, c.fit.provenance())?, &c.fit.out)
        }
        Command::FitJoint(c) => {
            let table = c.fit.load()?;
            let hold: Vec<(u64, u64)> = c.hold_out.into_iter().collect();
            let fit = fit_joint(&table.rows, &c.capacity.params(), &hold, &c.fit.config())?;
            emit_report(&FitReport::joint(&table.rows, &fit, c.hold_out, c.fit.provenance())?, &c.fit.out)
        }
        Command::FitTail(c) => {
            let table = c.fit.load()?;
            let obs = table.curve(c.condition.as_deref())?;
            let fit = fit_tail(&obs, c.d_min, &c.fit.config())?;
            emit_report(&FitReport::tail(&obs, c.d_min, &fit, c.fit.provenance())?, &c.fit.out)
        }
        Command::FitLinear(c) => {
            let origin = c.input.display().to_string();
            let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&c.input).map_err(|e| {
                Error::Parse { path: origin.clone(), line: 1, msg: e.to_string() }
            })?;
            let headers = rdr.headers().map_err(|e| Error::Parse { path: origin.clone(), line: 1, msg: e.to_string() })?.clone();
            let col = |name: &str| {
                headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                    path: origin.clone(),
                    line: 1,
                    msg: format!("missing column '{name}'"),
                })
            };
            let (xc, yc) = (col(&c.x)?, col(&c.y)?);
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (i, rec) in rdr.records().enumerate() {
                let line = i + 2;
                let rec = rec.map_err(|e| Error::Parse { path: origin.clone(), line, msg: e.to_string() })?;
                let num = |k: usize| {
                    let v = rec.get(k).unwrap_or("");
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        path: origin.clone(),
                        line,
                        msg: format!("'{v}' is not a number"),
                    })
                };
                xs.push(num(xc)?);
                ys.push(num(yc)?);
            }
            let fit = fit_linear(&xs, &ys)?;
            let value = json!({
                "schema": 1,
                "command": "fit-linear",
                "input": origin,
                "x": c.x,
                "y": c.y,
                "n": xs.len(),
                "slope": fit.slope,
                "intercept": fit.intercept,
                "r2": fit.r2,
            });
            write_text(&c.out, &json_text(&value)?)?;
            Ok(Outcome::Done)
        }
        Command::Analyze(c) => {
            let mut value = serde_json::Map::new();
            value.insert("schema".into(), json!(1));
            value.insert("command".into(), json!("analyze"));
            let law = match (&c.report, c.law) {
                (Some(spec), _) => Some(report_law(spec)?),
                (None, law) => law,
            };
            if let Some(law) = law {
                value.insert("law".into(), serde_json::to_value(law)?);
                value.insert("analysis".into(), serde_json::to_value(Analysis::of(&law, &c.at)?)?);
            } else if !c.at.is_empty() {
                return Err(Error::Schema("--at needs --report or --law".into()));
            }
            if let Some(pair) = &c.equivalence {
                let law1 = report_law(&pair[0])?;
                let law2 = report_law(&pair[1])?;
                value.insert("equivalence_factor".into(), json!(data_equivalence_factor(&law1, &law2)?));
            }
            if value.len() == 2 {
                return Err(Error::Schema("nothing to analyze: give --report, --law or --equivalence".into()));
            }
            write_text(&c.out, &json_text(&serde_json::Value::Object(value))?)?;
            Ok(Outcome::Done)
        }
        Command::Mc(c) => {
            let table = c.fit.load()?;
            let obs = table.curve(c.condition.as_deref())?;
            let cfg_mc = McConfig { noise_frac: c.noise_frac, n_reps: c.n_reps, seed: c.fit.seed };
            let summary = match mc_uncertainty(&obs, &c.fit.config(), &cfg_mc) {
                Err(Error::McFailure(n)) => {
                    eprintln!("datalaw: none of {n} replicates converged");
                    return Ok(Outcome::NotConverged);
                }
                other => other?,
            };
            let value = json!({
                "schema": 1,
                "command": "mc",
                "provenance": c.fit.provenance(),
                "mc_config": cfg_mc,
                "summary": summary,
            });
            write_text(&c.fit.out, &json_text(&value)?)?;
            Ok(Outcome::Done)
        }
        Command::Simulate(c) => {
            let law = match (c.law, c.alpha) {
                (Some(law), _) => Law::Simple(law),
                (None, Some(alpha)) => {
                    let need = |v: Option<f64>, name: &str| {
                        v.ok_or_else(|| Error::Schema(format!("joint simulation needs --{name}")))
                    };
                    Law::Joint(JointLawParams {
                        alpha,
                        p: need(c.p, "p")?,
                        beta: need(c.beta, "beta")?,
                        p_e: need(c.p_e, "p-e")?,
                        p_d: need(c.p_d, "p-d")?,
                        l_inf: need(c.l_inf, "l-inf")?,
                    })
                }
                (None, None) => return Err(Error::Schema("give --law or a joint law".into())),
            };
            let table = simulate(&SimulateSpec {
                law,
                shape: c.shape,
                grid: c.d,
                noise_frac: c.noise_frac,
                seed: c.seed,
                condition: c.condition,
                reps: c.reps,
            })?;
            let mut w = sink(&c.out)?;
            table.write_csv(&mut w)?;
            Ok(Outcome::Done)
        }
        Command::Corpus(cmd) => {
            let (pairs, out) = match cmd {
                CorpusCmd::Corrupt { io, kind, side, prob, seed } => {
                    let kind = match kind {
                        KindArg::CharNoise => CorruptionKind::CharNoise,
                        KindArg::WordDelete => CorruptionKind::WordDelete,
                        KindArg::PairShuffle => CorruptionKind::PairShuffle,
                    };
                    let side = match side {
                        SideArg::Source => Side::Source,
                        SideArg::Target => Side::Target,
                    };
                    let mut spec = CorruptionSpec::new(kind, side, seed);
                    if let Some(p) = prob {
                        spec = spec.with_prob(p);
                    }
                    debug_assert_eq!(NOISE_ALPHABET.len(), 94);
                    (corpus::corrupt(read_corpus(&io)?, &spec)?, io.out)
                }
                CorpusCmd::Filter { io, fraction, threshold } => {
                    let pairs = read_corpus(&io)?;
                    let kept = match (fraction, threshold) {
                        (Some(f), _) => corpus::filter_top_fraction(pairs, f)?,
                        (None, Some(t)) => corpus::filter_threshold(pairs, t)?,
                        (None, None) => return Err(Error::Schema("give --fraction or --threshold".into())),
                    };
                    (kept, io.out)
                }
                CorpusCmd::Sample { io, size, seed } => {
                    (corpus::sample_subset(read_corpus(&io)?, size, seed)?, io.out)
                }
            };
            corpus::write_corpus(sink(&out)?, &pairs)?;
            Ok(Outcome::Done)
        }
        Command::Report(c) => {
            let report = FitReport::load(&c.report)?;
            report.write_table(sink(&c.out)?)?;
            Ok(Outcome::Done)
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("datalaw: fit did not converge");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("datalaw: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
