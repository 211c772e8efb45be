use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use osr_bench::diagnostics::attenuation;
use osr_bench::eval::{run_eval, RunConfig, SUMMARY_FILE};
use osr_bench::metrics::default_grid;
use osr_bench::pack::{read_pack, write_pack, UNKNOWN_LABEL};
use osr_bench::scoring::{MaxLogitSource, ScoreMethod};
use osr_bench::split::SplitSpec;
use osr_bench::synth::{generate, SynthSpec};
use osr_bench::OsrError;

const THREADS_ENV: &str = "OSR_BENCH_THREADS";

#[derive(Parser)]
#[command(name = "osr-bench", version, about = "Open-set recognition scoring and evaluation over feature packs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic known/unknown feature pack
    Synth(SynthArgs),
    /// Score a pack with each method and write OOSA / OSCR reports
    Eval(EvalArgs),
    /// Emit sorted head weights with reordered features and Hadamard products
    DiagnoseAttenuation(DiagnoseArgs),
    /// Check a pack directory against the format and its invariants
    ValidatePack(ValidateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    k_known: usize,
    #[arg(long)]
    k_unknown: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    sep: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'o', long = "output-dir")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Feature pack directory
    #[arg(long, required_unless_present = "config")]
    pack: Option<PathBuf>,
    /// Replay a config echo written by a previous run; other run flags are ignored
    #[arg(long, conflicts_with = "pack")]
    config: Option<PathBuf>,
    /// Comma list of costarr, msp, maxlogit, energy, energy:<T>
    #[arg(long, value_delimiter = ',', default_value = "costarr,msp,maxlogit,energy")]
    methods: Vec<String>,
    /// Temperature for `energy` entries without an explicit `:<T>`
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply a random known/unknown class split to the pack's classes first
    #[arg(long)]
    class_split: bool,
    #[arg(long, default_value_t = 0.75)]
    known_fraction: f64,
    #[arg(long, default_value_t = 0.10)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.10)]
    val_fraction: f64,
    /// Reserve the test fraction per label
    #[arg(long)]
    stratified: bool,
    /// Comma list of OOSA thresholds in [0, 1]; defaults to 0.0, 0.1, ..., 1.0
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value = "head", value_parser = ["head", "penultimate-max"])]
    maxlogit_source: String,
    /// Include validation logits in the COSTARR logit normalization range
    #[arg(long)]
    gnl_include_val: bool,
    #[arg(short = 'o', long = "output-dir")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    pack: PathBuf,
    #[arg(long = "class")]
    class_id: usize,
    /// Comma list of sample indices
    #[arg(long, value_delimiter = ',', required = true)]
    samples: Vec<usize>,
    #[arg(short = 'o', long = "output-dir")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    pack: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
        Err(_) => ExitCode::from(4),
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn dispatch(cli: Cli) -> osr_bench::Result<u8> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::DiagnoseAttenuation(args) => cmd_diagnose(args),
        Command::ValidatePack(args) => cmd_validate(args),
    }
}

fn cmd_synth(args: SynthArgs) -> osr_bench::Result<u8> {
    let spec = SynthSpec {
        known_classes: args.k_known,
        unknown_classes: args.k_unknown,
        dim: args.dim,
        samples_per_class: args.per_class,
        class_sep: args.sep,
        noise_sigma: args.sigma,
        seed: args.seed,
    };
    let pack = generate(&spec)?;
    write_pack(&pack, &args.output_dir)?;
    let echo = serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n";
    fs::write(args.output_dir.join("synth_config.json"), echo)
        .map_err(|e| OsrError::Io { path: args.output_dir.clone(), source: e })?;
    println!("wrote {} samples to {}", pack.len(), args.output_dir.display());
    Ok(0)
}

fn parse_methods(names: &[String], temperature: f64) -> osr_bench::Result<Vec<ScoreMethod>> {
    names
        .iter()
        .map(|name| {
            let method: ScoreMethod = name.parse()?;
            Ok(match method {
                ScoreMethod::Energy { .. } if name.trim().eq_ignore_ascii_case("energy") => {
                    let m = ScoreMethod::Energy { temperature };
                    m.validate()?;
                    m
                }
                m => m,
            })
        })
        .collect()
}

fn cmd_eval(args: EvalArgs) -> osr_bench::Result<u8> {
    let config = match (&args.config, &args.pack) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(pack)) => RunConfig {
            pack: pack.clone(),
            methods: parse_methods(&args.methods, args.temperature)?,
            split: SplitSpec {
                known_fraction: args.known_fraction,
                test_fraction: args.test_fraction,
                val_fraction: args.val_fraction,
                seed: args.seed,
                stratified: args.stratified,
            },
            class_split: args.class_split,
            grid: args.grid.clone().unwrap_or_else(default_grid),
            maxlogit_source: args.maxlogit_source.parse::<MaxLogitSource>()?,
            gnl_include_val: args.gnl_include_val,
        },
        (None, None) => unreachable!("clap requires --pack or --config"),
    };
    let summary = run_eval(&config, &args.output_dir)?;
    print!("{}", summary.to_csv());
    eprintln!("reports written to {}", args.output_dir.join(SUMMARY_FILE).display());
    Ok(if summary.all_succeeded() { 0 } else { 3 })
}

fn cmd_diagnose(args: DiagnoseArgs) -> osr_bench::Result<u8> {
    let pack = read_pack(&args.pack)?;
    let matrix = attenuation(&pack, args.class_id, &args.samples)?;
    fs::create_dir_all(&args.output_dir)
        .map_err(|e| OsrError::Io { path: args.output_dir.clone(), source: e })?;
    let path = args.output_dir.join(format!("attenuation_class{}.csv", args.class_id));
    fs::write(&path, matrix.to_csv()).map_err(|e| OsrError::Io { path: path.clone(), source: e })?;
    println!("{}", path.display());
    Ok(0)
}

fn cmd_validate(args: ValidateArgs) -> osr_bench::Result<u8> {
    let pack = read_pack(&args.pack)?;
    let mut histogram = vec![0usize; pack.classes];
    let mut unknown = 0usize;
    for &l in &pack.labels {
        if l == UNKNOWN_LABEL {
            unknown += 1;
        } else {
            histogram[l as usize] += 1;
        }
    }
    let report = json!({
        "valid": true,
        "n": pack.len(),
        "d": pack.dim,
        "K": pack.classes,
        "has_logits": pack.logits.is_some(),
        "unknown_samples": unknown,
        "class_histogram": histogram,
        "max_logit_discrepancy": pack.logit_discrepancy(),
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(0)
}
