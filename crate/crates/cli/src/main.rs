//! `aeronet-sim`: run one scenario file and write its CSV outputs.

use std::path::PathBuf;
use std::process::ExitCode;

use aeronet_core::antenna::CompositePattern;
use aeronet_core::output::write_pattern;
use aeronet_core::scenario::{load_scenario_file, run, ExperimentKind, Scenario};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aeronet-sim",
    version,
    about = "LTE connectivity simulator for low-altitude drones"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Association map and fragmentation statistics per height.
    Map(RunArgs),
    /// TTI-level downlink latency for periodic command traffic.
    Latency(RunArgs),
    /// Routes with A3 handover and radio link failure supervision.
    Mobility(RunArgs),
    /// Composite antenna gain on a 1 degree grid.
    PatternDump(PatternArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run a single height instead of the configured sweep.
    #[arg(long)]
    height: Option<f64>,
    /// PRB pool (latency only).
    #[arg(long)]
    prbs: Option<u32>,
    /// Simulated duration (latency only).
    #[arg(long)]
    duration_ms: Option<u64>,
    /// Restrict statistics to the central site.
    #[arg(long)]
    center_only: bool,
}

#[derive(Args)]
struct PatternArgs {
    /// Scenario JSON file; only its antenna section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn apply_overrides(sc: &mut Scenario, kind: ExperimentKind, a: &RunArgs) -> anyhow::Result<()> {
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    if let Some(d) = &a.out_dir {
        sc.out_dir = d.clone();
    }
    if let Some(h) = a.height {
        sc.set_heights(vec![h]);
    }
    let e = &mut sc.experiment;
    if a.prbs.is_some() || a.duration_ms.is_some() {
        let Some(lat) = e.latency.as_mut() else {
            bail!("--prbs and --duration-ms apply to latency scenarios only");
        };
        if let Some(p) = a.prbs {
            lat.prbs = p;
        }
        if let Some(d) = a.duration_ms {
            lat.duration_ms = d;
        }
    }
    if a.center_only {
        match kind {
            ExperimentKind::Map => e.map.as_mut().expect("kind checked").center_only = true,
            ExperimentKind::Latency => e.latency.as_mut().expect("kind checked").center_only = true,
            ExperimentKind::Mobility => bail!("--center-only does not apply to mobility scenarios"),
        }
    }
    sc.validate()?;
    Ok(())
}

fn run_experiment(expected: ExperimentKind, a: &RunArgs) -> anyhow::Result<()> {
    let mut sc =
        load_scenario_file(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let kind = sc.kind()?;
    if kind != expected {
        bail!(
            "{} holds a `{}` experiment, not `{}`",
            a.config.display(),
            kind.as_str(),
            expected.as_str()
        );
    }
    apply_overrides(&mut sc, kind, a)?;
    let report = run(&sc)?;
    for line in &report.summary {
        println!("{line}");
    }
    Ok(())
}

fn pattern_dump(a: &PatternArgs) -> anyhow::Result<()> {
    let (pattern, seed, dir) = match &a.config {
        Some(p) => {
            let sc = load_scenario_file(p).with_context(|| format!("loading {}", p.display()))?;
            (sc.antenna, sc.seed, sc.out_dir)
        }
        None => (CompositePattern::default(), 1, PathBuf::from("out")),
    };
    pattern.validate()?;
    let seed = a.seed.unwrap_or(seed);
    let dir = a.out_dir.clone().unwrap_or(dir);
    write_pattern(&dir, seed, &pattern)?;
    println!(
        "pattern-dump peak_gain_dbi={:.2} file={}",
        pattern.peak_gain_dbi(),
        dir.join("pattern.csv").display()
    );
    Ok(())
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("AERONET_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("AERONET_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = init_threads().and_then(|_| match &cli.command {
        Command::Map(a) => run_experiment(ExperimentKind::Map, a),
        Command::Latency(a) => run_experiment(ExperimentKind::Latency, a),
        Command::Mobility(a) => run_experiment(ExperimentKind::Mobility, a),
        Command::PatternDump(a) => pattern_dump(a),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
