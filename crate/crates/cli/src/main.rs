use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use rbb_cli::presets::{preset, preset_names};
use rbb_cli::{parse_config_with_defaults, run, run_verify, Parsed, RunError, RunReport};
use std::path::PathBuf;
use std::process::ExitCode;

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "RBB_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "rbb-out";

#[derive(Parser)]
#[command(name = "rbb", version, about = "Optimal liquidation timing under a randomized Brownian bridge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate log-price paths
    Simulate(JobArgs),
    /// Solve the optimal selling problem on a grid
    Solve(JobArgs),
    /// Tabulate drift and drive functions
    Drive(JobArgs),
    /// Solve once per value of one parameter
    Sweep(JobArgs),
    /// Run the oracle suite; exits 2 if any check misses its tolerance
    Verify(JobArgs),
}

#[derive(Args)]
struct JobArgs {
    /// TOML run configuration
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in figure preset
    #[arg(long, value_parser = PossibleValuesParser::new(preset_names()))]
    preset: Option<String>,
    /// Output directory [default: the config's job.output_dir, then $RBB_OUT_DIR, then ./rbb-out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the simulation seed
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Run(RunError),
}

fn load(args: &JobArgs, verb: &str) -> Result<Option<Parsed>, Failure> {
    let (source, text) = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            (path.display().to_string(), text)
        }
        (None, Some(name)) => (format!("preset {name}"), preset(name).expect("validated by clap").to_string()),
        (None, None) if verb == "verify" => return Ok(None),
        (None, None) => return Err(Failure::Usage(format!("`rbb {verb}` needs --config <path> or --preset <name>"))),
    };
    let mut parsed = parse_config_with_defaults(&text).map_err(|e| Failure::Usage(format!("{source}: {e}")))?;
    let kind = parsed.config.job.kind();
    if kind != verb {
        return Err(Failure::Usage(format!("{source} describes a {kind} job; run `rbb {kind}`")));
    }
    if let Some(seed) = args.seed {
        parsed.config.sim.seed = seed;
    }
    Ok(Some(parsed))
}

fn out_dir(args: &JobArgs, parsed: Option<&Parsed>) -> PathBuf {
    args.out
        .clone()
        .or_else(|| parsed.and_then(|p| p.config.output_dir.clone()))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

fn execute(verb: &str, args: &JobArgs) -> Result<RunReport, Failure> {
    let parsed = load(args, verb)?;
    let dir = out_dir(args, parsed.as_ref());
    match parsed {
        Some(p) => run(&p.config, &p.defaults, &dir),
        None => run_verify(args.seed.unwrap_or(0), &dir),
    }
    .inspect(|report| {
        for a in &report.artifacts {
            println!("wrote {} ({} rows)", dir.join(&a.file).display(), a.rows);
        }
        println!("wrote {}", dir.join(rbb_cli::output::MANIFEST).display());
    })
    .map_err(Failure::Run)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (verb, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Solve(a) => ("solve", a),
        Command::Drive(a) => ("drive", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Verify(a) => ("verify", a),
    };
    match execute(verb, args) {
        Ok(report) if report.failed_checks.is_empty() => ExitCode::SUCCESS,
        Ok(report) => {
            eprintln!("error: checks failed: {}", report.failed_checks.join(", "));
            ExitCode::from(2)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
