//! `onebit`: synthesize signals, draw one-bit records, estimate sinusoids and
//! run Monte Carlo scenarios.
//!
//! Exit codes: 0 success, 2 usage, 3 input data, 4 numerical failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use onebit_core::bench::{self, McScenario};
use onebit_core::mmcore::MmConfig;
use onebit_core::relax::{estimate, Method, OrderPolicy, RelaxConfig};
use onebit_core::sigmodel::{
    components_from_json, sample_one_bit, snr_to_sigma, synth, Dim, RngState, Shape, SignedRecord, SinusoidSet,
    ThresholdSpec, Truth,
};
use onebit_core::Error;

#[derive(Parser, Debug)]
#[command(name = "onebit", version, about = "Sinusoid estimation from one-bit measurements with time-varying thresholds")]
struct Cli {
    /// JSON object of flag values, keyed by long flag name without the
    /// leading `--`. Command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a sinusoid model on the sample grid and print the samples.
    Synth(SynthArgs),
    /// Draw a one-bit record of a noisy signal.
    Sample(SampleArgs),
    /// Estimate sinusoid parameters from a record.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo scenario and write the summary CSV.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SignalArgs {
    /// Preset signal: example1 or example2.
    #[arg(long, conflicts_with = "components")]
    preset: Option<String>,
    /// Components as JSON: `[{"A":..,"phi":..,"omega":..}]`; 2-D omega is `[w1, w2]`.
    #[arg(long)]
    components: Option<String>,
    /// Data type: r1 (real), c1 (complex), c2 (complex 2-D).
    #[arg(long, default_value = "r1")]
    dim: Dim,
    /// Samples (first axis for 2-D).
    #[arg(long, value_parser = positive)]
    n: usize,
    /// Second axis length for 2-D data.
    #[arg(long, value_parser = positive)]
    n2: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    signal: SignalArgs,
    /// Output file (default: stdout).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    signal: SignalArgs,
    /// fixed:H, fixed:RE:IM or discrete:LEVELS:LO:HI.
    #[arg(long, default_value = "discrete:8:-1:1")]
    threshold: ThresholdSpec,
    /// SNR in dB relative to the largest amplitude.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "sigma", required_unless_present = "sigma")]
    snr: Option<f64>,
    /// Noise standard deviation (needed for noise-only records).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Record JSON file.
    #[arg(required_unless_present = "record")]
    record_path: Option<PathBuf>,
    /// Record JSON file (alternative to the positional argument).
    #[arg(long = "record", value_name = "FILE")]
    record: Option<PathBuf>,
    /// clean, relax or mmrelax.
    #[arg(long, default_value = "mmrelax")]
    method: Method,
    /// Fixed model order.
    #[arg(long, conflicts_with = "bic", required_unless_present = "bic")]
    order: Option<usize>,
    /// Select the order by BIC over 0..=KMAX.
    #[arg(long, value_name = "KMAX")]
    bic: Option<usize>,
    #[arg(long)]
    max_relax_iters: Option<usize>,
    #[arg(long)]
    max_mm_iters: Option<usize>,
    /// Skip the joint amplitude/λ refit after each 1bMMRELAX order.
    #[arg(long)]
    no_amplitude_refit: bool,
    /// Report measured run time (otherwise `elapsed_ms` is 0 so repeated
    /// runs give identical files).
    #[arg(long)]
    timing: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// example1, example1-snr, example2, fixed-threshold or order-selection.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_parser = positive)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated sweep values replacing the scenario's.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    sweep: Option<Vec<f64>>,
    /// Comma-separated estimators replacing the scenario's.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Method>>,
    /// Report measured run times (otherwise the runtime column is 0).
    #[arg(long)]
    timing: bool,
    /// Also write per-trial frequency estimates as JSON.
    #[arg(long, value_name = "FILE")]
    scatter: Option<PathBuf>,
    /// Print a line per trial on stderr.
    #[arg(long)]
    progress: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("'{s}' is not a positive integer")),
    }
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

/// Merge `--config` values into the raw argument list. Keys already given
/// on the command line are skipped.
fn apply_config(args: Vec<String>) -> Outcome<Vec<String>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| Failure::Usage("--config needs a file".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("cannot read config {path}: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {path}: {e}")))?;
    let obj = value.as_object().ok_or_else(|| Failure::Usage(format!("config {path} must be a JSON object")))?;
    let given = |flag: &str| rest.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")));
    let mut extra = Vec::new();
    for (key, v) in obj {
        let text = match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Bool(_) | serde_json::Value::Number(_) => v.to_string(),
            serde_json::Value::Array(a) if key != "components" => {
                a.iter().map(|x| x.as_str().map_or_else(|| x.to_string(), String::from)).collect::<Vec<_>>().join(",")
            }
            _ => v.to_string(),
        };
        let flag = format!("--{key}");
        if given(&flag) {
            continue;
        }
        match v {
            serde_json::Value::Bool(true) => extra.push(flag),
            serde_json::Value::Bool(false) => {}
            _ => extra.push(format!("{flag}={text}")),
        }
    }
    rest.extend(extra);
    Ok(rest)
}

fn signal_from(args: &SignalArgs) -> Outcome<(SinusoidSet, Shape)> {
    let shape = match (args.dim.is_2d(), args.n2) {
        (true, Some(n2)) => Shape::two(args.n, n2),
        (false, None) => Shape::one(args.n),
        (true, None) => return Err(Failure::Usage("--n2 is required for c2 data".into())),
        (false, Some(_)) => return Err(Failure::Usage("--n2 is only valid for c2 data".into())),
    };
    let set = match (&args.preset, &args.components) {
        (Some(p), _) => {
            if args.dim != Dim::Real1 {
                return Err(Failure::Usage("presets are real 1-D signals".into()));
            }
            match p.as_str() {
                "example1" => bench::example1_signal(args.n),
                "example2" => bench::example2_signal(args.n),
                other => return Err(Failure::Usage(format!("unknown preset '{other}'"))),
            }
        }
        (None, Some(c)) => {
            let v: serde_json::Value =
                serde_json::from_str(c).map_err(|e| Failure::Usage(format!("--components: {e}")))?;
            components_from_json(args.dim, &v).map_err(|e| Failure::Usage(e.to_string()))?
        }
        (None, None) => return Err(Failure::Usage("give --preset or --components".into())),
    };
    Ok((set, shape))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Outcome<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", p.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Data(e.to_string())),
    }
}

fn cmd_synth(a: &SynthArgs) -> Outcome<()> {
    let (set, shape) = signal_from(&a.signal)?;
    let sig = synth(&set, shape)?;
    emit(&a.out, &format!("{}\n", sig.to_json()))
}

fn cmd_sample(a: &SampleArgs) -> Outcome<()> {
    let (set, shape) = signal_from(&a.signal)?;
    let sigma = match (a.snr, a.sigma) {
        (_, Some(s)) => s,
        (Some(snr), None) => snr_to_sigma(&set, snr).map_err(|e| Failure::Usage(e.to_string()))?,
        (None, None) => return Err(Failure::Usage("give --snr or --sigma".into())),
    };
    let sig = synth(&set, shape)?;
    let mut rng = RngState::new(a.seed);
    let mut rec = sample_one_bit(&sig, sigma, &a.threshold, &mut rng)?;
    rec.truth = Some(Truth { components: set, sigma });
    emit(&a.out, &format!("{}\n", rec.to_json()))
}

fn read_record(path: &Path) -> Outcome<SignedRecord> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let rec = SignedRecord::from_json(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    rec.validate().map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(rec)
}

fn cmd_estimate(a: &EstimateArgs) -> Outcome<()> {
    let policy = match (a.order, a.bic) {
        (Some(k), None) => OrderPolicy::Fixed(k),
        (None, Some(k)) => OrderPolicy::Bic(k),
        _ => return Err(Failure::Usage("give exactly one of --order and --bic".into())),
    };
    let mut relax = RelaxConfig::default();
    if let Some(i) = a.max_relax_iters {
        relax.max_relax_iters = i;
    }
    let mut mm = MmConfig::default();
    if let Some(i) = a.max_mm_iters {
        mm.max_mm_iters = i;
    }
    mm.amplitude_refit = !a.no_amplitude_refit;
    let path = a.record_path.as_ref().or(a.record.as_ref()).ok_or_else(|| Failure::Usage("no record given".into()))?;
    let rec = read_record(path)?;
    let mut report = estimate(&rec, a.method, policy, &relax, &mm)?;
    if !a.timing {
        report.elapsed_ms = 0.0;
    }
    emit(&a.out, &format!("{}\n", report.to_json()))
}

fn load_scenario(a: &BenchArgs) -> Outcome<McScenario> {
    let mut sc = match (&a.preset, &a.scenario) {
        (Some(name), None) => bench::preset(name).ok_or_else(|| Failure::Usage(format!("unknown preset '{name}'")))?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        _ => return Err(Failure::Usage("give exactly one of --preset and --scenario".into())),
    };
    if let Some(t) = a.trials {
        sc.trials = t;
    }
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    if let Some(v) = &a.sweep {
        sc.sweep = v.clone();
    }
    if let Some(e) = &a.estimators {
        sc.estimators = e.clone();
    }
    sc.validate()?;
    Ok(sc)
}

fn cmd_bench(a: &BenchArgs) -> Outcome<()> {
    let sc = load_scenario(a)?;
    let mut result = bench::run_scenario_with(&sc, |v, t| {
        if a.progress {
            eprintln!("{} {}={v} trial {}/{}", sc.name, sc.sweep_var.tag(), t + 1, sc.trials);
        }
    })?;
    if !a.timing {
        for r in &mut result.rows {
            r.mean_runtime_ms = 0.0;
        }
    }
    let mut buf = Vec::new();
    bench::write_csv(&result.rows, &mut buf)?;
    emit(&a.out, &String::from_utf8(buf).map_err(|e| Failure::Data(e.to_string()))?)?;
    if let Some(p) = &a.scatter {
        let v = bench::scatter_json(&sc, &result)?;
        let text = serde_json::to_string_pretty(&v).map_err(|e| Failure::Data(e.to_string()))?;
        emit(&Some(p.clone()), &format!("{text}\n"))?;
    }
    Ok(())
}

fn run() -> Outcome<()> {
    let args = apply_config(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Err(Failure::Usage(String::new())) } else { Ok(()) };
        }
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message().is_empty() {
                eprintln!("onebit: {}", f.message());
            }
            ExitCode::from(f.code())
        }
    }
}
