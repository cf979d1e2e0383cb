use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use indlab::config::ExperimentConfig;
use indlab::harness::{self, HarnessError};
use indlab::scenario::describe_scenarios;

#[derive(Parser)]
#[command(name = "indlab", version, about = "Emergent individuality experiments on coupled agent populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configured population and write trace, metrics and structures.
    Run(Common),
    /// Re-run the analysis pipeline over a recorded trace.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Scan the last window of a recorded trace once and print the clusters.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
    },
    /// List the built-in scenario kinds and their parameters.
    Scenarios,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        let out = cfg.out.clone().unwrap_or_else(|| Path::new("out").to_owned());
        Ok((cfg, out))
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    harness::init_threads()?;
    match cli.command {
        Command::Run(common) => {
            let (cfg, out) = common.load()?;
            harness::run(&cfg, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Analyze { common, trace } => {
            let (cfg, out) = common.load()?;
            harness::analyze(&trace, &cfg, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Scan { common, trace } => {
            let (cfg, _) = common.load()?;
            let (tick, report) = harness::scan_trace(&trace, &cfg)?;
            let mut lines = vec![harness::SCAN_HEADER.to_string()];
            lines.extend(harness::scan_lines(tick, &report));
            let text = lines.join("\n") + "\n";
            match &common.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
                    let path = dir.join("scan.csv");
                    std::fs::write(&path, text).map_err(|source| HarnessError::Io { path, source })?;
                }
                None => {
                    let _ = std::io::stdout().write_all(text.as_bytes());
                }
            }
        }
        Command::Scenarios => {
            for (kind, params) in describe_scenarios() {
                println!("{kind:<10} {params}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // usage errors count as bad configuration, not I/O
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
