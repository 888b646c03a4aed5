//! `bunchlab`: runs scenario files through the bunching pipeline, one stage
//! at a time or all at once, and processes external time-tag data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bunchlab::acceptance::{format_table, measure_throughput, run_selected_with};
use bunchlab::config::ScenarioConfig;
use bunchlab::correlator::{cross_correlate, CorrelatorMode};
use bunchlab::inference::{fit_bunching, FitOptions, FitResult};
use bunchlab::photostream::load_pbt1;
use bunchlab::pipeline::{self, default_output, read_histogram, write_fit, write_histogram};
use bunchlab::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bunchlab", version, about = "Photon-bunching pipeline for filtered thermal light")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's `output_dir`, else `./out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `synthesis.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print errors only.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filtered source spectrum → spectrum.csv.
    Spectrum,
    /// γ(τ), ideal and detected g²(τ) → gamma.csv, g2_theory.csv, g2_detected.csv.
    Theory,
    /// Synthesized and detected time tags → channel_a.pbt, channel_b.pbt.
    Synth,
    /// Cross-correlates two PBT1 files into a coincidence histogram.
    Correlate(CorrelateArgs),
    /// Fits the bunching peak of a histogram CSV.
    Fit(FitArgs),
    /// All stages plus manifest.json.
    Pipeline,
    /// Runs the acceptance criteria and prints a pass/fail table.
    Acceptance {
        /// Criterion ids to run (default: all).
        ids: Vec<u32>,
    },
    /// Correlator throughput on synthetic Poisson streams.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    StartStop,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Channel A time tags [default: OUT/channel_a.pbt].
    #[arg(long)]
    a: Option<PathBuf>,
    /// Channel B time tags [default: OUT/channel_b.pbt].
    #[arg(long)]
    b: Option<PathBuf>,
    /// Histogram CSV to write [default: OUT/histogram.csv].
    #[arg(long)]
    output: Option<PathBuf>,
    /// Bin width in ps (required without --config).
    #[arg(long)]
    bin_ps: Option<f64>,
    /// Half-range of τ in ns (required without --config).
    #[arg(long)]
    range_ns: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Start-stop dead time in ns.
    #[arg(long)]
    dead_time_ns: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Histogram CSV [default: OUT/histogram.csv].
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Fit JSON to write [default: OUT/fit.json].
    #[arg(long)]
    output: Option<PathBuf>,
    /// Leave out bins with |τ| below this many ps.
    #[arg(long)]
    exclude_center_ps: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Events per channel.
    #[arg(long, default_value_t = 5_000_000)]
    events: usize,
    /// Event rate per channel in Hz.
    #[arg(long, default_value_t = 1e6)]
    rate_hz: f64,
    #[arg(long, default_value_t = 16.0)]
    bin_ps: f64,
    #[arg(long, default_value_t = 50.0)]
    range_ns: f64,
}

/// Failure that is not a library error, e.g. acceptance criteria failing.
const EXIT_FAILED: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_FAILED);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Option<ScenarioConfig>, Error> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.synthesis.seed = seed;
    }
    Ok(Some(cfg))
}

fn require(cfg: Option<ScenarioConfig>, command: &str) -> Result<ScenarioConfig, Error> {
    cfg.ok_or_else(|| Error::Config {
        path: "--config".into(),
        message: format!("`{command}` needs a scenario file"),
    })
}

fn out_dir(cli: &Cli, cfg: Option<&ScenarioConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(default_output))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    let say = |msg: String| {
        if !cli.quiet {
            println!("{msg}");
        }
    };
    match &cli.command {
        Command::Spectrum | Command::Theory | Command::Synth => {
            let stage = match cli.command {
                Command::Spectrum => "spectrum",
                Command::Theory => "theory",
                _ => "synth",
            };
            let cfg = require(cfg, stage)?;
            let out = out_dir(cli, Some(&cfg));
            pipeline::run_single_stage(&cfg, &out, stage)?;
            say(format!("{stage}: wrote {}", out.display()));
        }
        Command::Correlate(args) => {
            let out = out_dir(cli, cfg.as_ref());
            correlate(args, cfg.as_ref(), &out, &say)?;
        }
        Command::Fit(args) => {
            let out = out_dir(cli, cfg.as_ref());
            let fit = fit(args, cfg.as_ref(), &out)?;
            say(summary(&fit));
        }
        Command::Pipeline => {
            let cfg = require(cfg, "pipeline")?;
            let out = out_dir(cli, Some(&cfg));
            let fit = pipeline::run_pipeline(&cfg, &out)?;
            say(format!("pipeline: wrote {}", out.display()));
            say(summary(&fit));
        }
        Command::Acceptance { ids } => {
            let reports = run_selected_with(ids, |r| say(r.to_string()));
            let table = format_table(&reports);
            // The summary line is printed even with --quiet.
            println!("{}", table.lines().last().unwrap_or_default());
            if reports.iter().any(|r| r.hard && !r.passed) {
                return Ok(ExitCode::from(EXIT_FAILED));
            }
        }
        Command::Bench(args) => {
            let t = measure_throughput(args.events, args.rate_hz, args.bin_ps * 1e-12, args.range_ns * 1e-9, 9)?;
            println!(
                "{} events in {:.3} s: {:.3e} events/s ({} pairs, {} threads)",
                t.events,
                t.seconds,
                t.events_per_second(),
                t.pairs,
                rayon::current_num_threads()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn flag_missing(flag: &str) -> Error {
    Error::Config {
        path: flag.into(),
        message: "required when no --config is given".into(),
    }
}

fn correlate(args: &CorrelateArgs, cfg: Option<&ScenarioConfig>, out: &Path, say: &dyn Fn(String)) -> Result<(), Error> {
    let bin = match (args.bin_ps, cfg) {
        (Some(ps), _) => ps * 1e-12,
        (None, Some(c)) => c.bin_width(),
        (None, None) => return Err(flag_missing("--bin-ps")),
    };
    let range = match (args.range_ns, cfg) {
        (Some(ns), _) => ns * 1e-9,
        (None, Some(c)) => c.tau_range(),
        (None, None) => return Err(flag_missing("--range-ns")),
    };
    let configured = cfg.map_or(CorrelatorMode::Full, ScenarioConfig::correlator_mode);
    let configured_dead = match configured {
        CorrelatorMode::StartStop { dead_time } => dead_time,
        CorrelatorMode::Full => 0.0,
    };
    let dead_time = args.dead_time_ns.map_or(configured_dead, |ns| ns * 1e-9);
    let mode = match args.mode {
        Some(Mode::Full) => CorrelatorMode::Full,
        Some(Mode::StartStop) => CorrelatorMode::StartStop { dead_time },
        None => match configured {
            CorrelatorMode::Full if args.dead_time_ns.is_some() => CorrelatorMode::StartStop { dead_time },
            CorrelatorMode::Full => CorrelatorMode::Full,
            CorrelatorMode::StartStop { .. } => CorrelatorMode::StartStop { dead_time },
        },
    };
    let a_path = args.a.clone().unwrap_or_else(|| out.join(pipeline::CHANNEL_A_PBT));
    let b_path = args.b.clone().unwrap_or_else(|| out.join(pipeline::CHANNEL_B_PBT));
    let a = load_pbt1(&a_path)?;
    let b = load_pbt1(&b_path)?;
    let h = cross_correlate(&a, &b, bin, range, mode)?;
    let path = match &args.output {
        Some(p) => p.clone(),
        None => {
            std::fs::create_dir_all(out).map_err(|e| Error::Io {
                path: out.to_path_buf(),
                source: e,
            })?;
            out.join(pipeline::HISTOGRAM_CSV)
        }
    };
    write_histogram(&h, &path)?;
    say(format!(
        "correlate: {} × {} events, {} pairs in {} bins → {}",
        a.len(),
        b.len(),
        h.total(),
        h.len(),
        path.display()
    ));
    Ok(())
}

fn fit(args: &FitArgs, cfg: Option<&ScenarioConfig>, out: &Path) -> Result<FitResult, Error> {
    let mut options = cfg.map_or_else(FitOptions::default, ScenarioConfig::fit_options);
    if let Some(ps) = args.exclude_center_ps {
        options.exclude_center = Some(ps * 1e-12);
    }
    let input = args.histogram.clone().unwrap_or_else(|| out.join(pipeline::HISTOGRAM_CSV));
    let h = read_histogram(&input)?;
    let fit = fit_bunching(&h, &options)?;
    let path = args.output.clone().unwrap_or_else(|| out.join(pipeline::FIT_JSON));
    write_fit(&fit, &path)?;
    Ok(fit)
}

fn summary(fit: &FitResult) -> String {
    format!(
        "g2(0) = {:.4} ± {:.4}, tau_c = {:.4} ns, chi2_r = {:.3} ({} dof){}",
        fit.g2_zero,
        fit.g2_zero_err,
        fit.tau_c * 1e9,
        fit.chi2_reduced,
        fit.dof,
        if fit.converged { "" } else { ", not converged" }
    )
}
