mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use bytesize::ByteSize;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dedisp::analysis::Roofline;
use dedisp::{KernelConfig, KernelLimits};

#[derive(Parser, Debug)]
#[command(
    name = "dedisp-tune",
    version,
    about = "Dedispersion kernel tuning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dispersed pulse filterbank.
    Gen(GenArgs),
    /// Check the tiled kernel against the reference on small instances.
    Verify(VerifyArgs),
    /// Exhaustively tune the kernel for one or more instances.
    Tune(TuneArgs),
    /// Time a single kernel configuration.
    Bench(BenchArgs),
    /// Summarise saved tuning results.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Builtin setup name or key=value setup file.
    #[arg(long)]
    setup: String,
    #[arg(long, default_value_t = 0.0)]
    dm: f64,
    /// Arrival time at the highest frequency, seconds.
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    /// Pulse width, seconds.
    #[arg(long, default_value_t = 0.001)]
    width: f64,
    #[arg(long, default_value_t = 1.0)]
    amp: f32,
    #[arg(long, default_value_t = 0.0)]
    sigma: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per channel; defaults to whole seconds covering the pulse.
    #[arg(long)]
    samples: Option<usize>,
    /// Output file; `.fil` writes SIGPROC, anything else raw f32.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    setup: String,
    /// Comma-separated DM counts; default powers of two from 2 to 4096.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    dms: Vec<usize>,
    #[arg(long, default_value_t = dedisp::tuner::DEFAULT_REPEATS, value_parser = positive)]
    repeats: usize,
    /// Block limits as items=I,acc=A.
    #[arg(long, default_value_t = KernelLimits::default())]
    limits: KernelLimits,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Peak GFLOP/s and GB/s, used to classify the optimum.
    #[arg(long)]
    roofline: Option<Roofline>,
    /// Skip instances whose buffers exceed this size (default 80% of available memory).
    #[arg(long)]
    mem_cap: Option<ByteSize>,
    /// Also tune with every shift set to zero.
    #[arg(long)]
    zero_dm: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    setup: String,
    #[arg(long, value_parser = positive)]
    dms: usize,
    /// Configuration as items_time,items_dm,work_time,work_dm.
    #[arg(long)]
    config: KernelConfig,
    #[arg(long, default_value_t = dedisp::tuner::DEFAULT_REPEATS, value_parser = positive)]
    repeats: usize,
    #[arg(long, default_value_t = KernelLimits::default())]
    limits: KernelLimits,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    zero_dm: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Tuning result JSON files.
    files: Vec<PathBuf>,
    #[arg(long)]
    roofline: Option<Roofline>,
    /// Deployment question as beams=N,dms=N[,time=SECONDS].
    #[arg(long)]
    deploy: Option<DeployArg>,
    /// Setup for the deployment question; defaults to the results' setup.
    #[arg(long)]
    setup: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        self != Format::Csv
    }

    fn csv(self) -> bool {
        self != Format::Json
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct DeployArg {
    beams: usize,
    dms: usize,
    time: Option<f64>,
}

impl FromStr for DeployArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (mut beams, mut dms, mut time) = (None, None, None);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("'{part}' is not key=value"))?;
            let bad = |_| format!("bad value in '{part}'");
            match k.trim() {
                "beams" => beams = Some(v.trim().parse::<usize>().map_err(bad)?),
                "dms" => dms = Some(v.trim().parse::<usize>().map_err(bad)?),
                "time" => {
                    time = Some(
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| format!("bad value in '{part}'"))?,
                    )
                }
                other => return Err(format!("unknown key '{other}'")),
            }
        }
        Ok(DeployArg {
            beams: beams.ok_or("missing beams=")?,
            dms: dms.ok_or("missing dms=")?,
            time,
        })
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be >= 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Bad command-line input discovered after parsing (e.g. an unknown setup).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Verification ran but found failures.
#[derive(Debug)]
struct VerifyFailed;

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("verification failed")
    }
}

impl std::error::Error for VerifyFailed {}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let argv: Vec<String> = std::env::args().collect();
    let outcome = match cli.command {
        Command::Gen(a) => commands::gen(&a, argv),
        Command::Verify(a) => verify::run(&a),
        Command::Tune(a) => commands::tune(&a, argv),
        Command::Bench(a) => commands::bench(&a),
        Command::Analyze(a) => commands::analyze(&a, argv),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if err.is::<VerifyFailed>() => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
        Err(err) if err.is::<UsageError>() => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
