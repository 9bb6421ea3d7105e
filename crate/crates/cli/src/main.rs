use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rdmatch::error::Result;
use rdmatch::io::{write_assignments, write_cutoffs, write_economy};
use rdmatch::localpref::find_comparable_pairs;
use rdmatch::pipeline::{
    load_market, pairs_csv, qsets_csv, report, run_pipeline, write_artifacts, FalsificationMode, Market, RunConfig,
    RunOutput, Stage,
};
use rdmatch::qsets::detect_umas;

/// Simulate school-choice markets, run deferred acceptance and bound the
/// effects of assignment at admission cutoffs.
#[derive(Parser, Debug)]
#[command(name = "rdmatch", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Packaged configuration: golden-sd, rigged, strategic or truthful.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an economy and write its input files.
    Simulate,
    /// Run deferred acceptance and write assignments and cutoffs.
    Match,
    /// List comparable local preference pairs.
    Pairs,
    /// Write per-student candidate sets near each binding cutoff.
    Qsets,
    /// Identification stage: distribution bounds and falsification.
    Identify,
    /// Full run: identification plus effect bounds.
    Bounds,
    /// Rebuild the summary tables from an existing output directory.
    Report,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = Some(s);
    }
    if let Some(t) = cli.threads {
        c.threads = t;
    }
    if let Some(o) = &cli.out {
        c.output = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn market(c: &RunConfig) -> Result<Market> {
    let m = load_market(c)?;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    Ok(m)
}

fn finish(c: &RunConfig, run: &RunOutput) -> ExitCode {
    if !run.falsified() {
        return ExitCode::SUCCESS;
    }
    let mut pairs: Vec<String> = run
        .manifest
        .statuses
        .iter()
        .filter(|s| s.status == rdmatch::pipeline::Status::Falsified)
        .map(|s| format!("{} {}", s.pair, s.regime))
        .collect();
    pairs.dedup();
    eprintln!("falsified: {}", pairs.join(", "));
    match c.falsification {
        FalsificationMode::Fail => ExitCode::from(3),
        FalsificationMode::Warn => ExitCode::SUCCESS,
    }
}

fn put(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let c = config(cli)?;
    let out = c.output.as_path();
    match cli.command {
        Command::Simulate => {
            let m = market(&c)?;
            write_economy(out, &m.economy, Some(&m.matching))?;
            println!("{} students, {} schools -> {}", m.economy.students.len(), m.economy.num_schools, out.display());
        }
        Command::Match => {
            let m = market(&c)?;
            std::fs::create_dir_all(out)?;
            write_assignments(&out.join("assignments.csv"), &m.economy, &m.matching)?;
            write_cutoffs(&out.join("cutoffs.csv"), &m.cutoffs)?;
            for (s, v) in m.cutoffs.values().iter().enumerate() {
                println!("school {}: cutoff {v}", s + 1);
            }
        }
        Command::Pairs => {
            let m = market(&c)?;
            let pairs = find_comparable_pairs(&m.economy, &m.cutoffs, c.min_local_n, &c.bandwidth);
            let csv = pairs_csv(&pairs)?;
            put(out, "pairs.csv", &csv)?;
            print!("{}", String::from_utf8_lossy(&csv));
        }
        Command::Qsets => {
            let m = market(&c)?;
            let umas = detect_umas(&m.economy, &m.cutoffs, c.umas_min_mass);
            put(out, "qsets.csv", &qsets_csv(&m, &c, &umas)?)?;
            println!("candidate sets -> {}", out.join("qsets.csv").display());
        }
        Command::Identify | Command::Bounds => {
            let mut r = run_pipeline(&c)?;
            for w in &r.market.warnings {
                eprintln!("warning: {w}");
            }
            let stage = if matches!(cli.command, Command::Bounds) { Stage::Bounds } else { Stage::Identify };
            write_artifacts(out, &mut r, stage)?;
            if stage == Stage::Bounds {
                print!("{}", std::fs::read_to_string(out.join("report.csv"))?);
            } else {
                println!("{} pairs analysed -> {}", r.pairs.len(), out.display());
            }
            return Ok(finish(&c, &r));
        }
        Command::Report => {
            print!("{}", String::from_utf8_lossy(&report(out)?));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
