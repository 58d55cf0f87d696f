use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsvgd::check::run_checks;
use fedsvgd::harness::{run_sweep, run_to_files, ExperimentConfig};
use fedsvgd::{Error, Result, SelectionScheme};

#[derive(Parser)]
#[command(
    name = "fedsvgd",
    version,
    about = "Federated DSVGD with client selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV and accuracy chart.
    Run(RunArgs),
    /// Run every configured scheme over several seeds.
    Sweep(RunArgs),
    /// Run the built-in oracle checks on toy problems.
    Check,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// ksd, hip, round_robin or random.
    #[arg(long)]
    scheme: Option<SelectionScheme>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra key=value overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.scheme {
            cfg.scheme = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let stem = format!("{}_seed{}", cfg.scheme, cfg.seed);
    let config_path = dir.join(format!("{stem}.config"));
    fs::write(&config_path, cfg.to_text()).map_err(|e| Error::Io {
        path: config_path.clone(),
        source: e,
    })?;
    let (run, out) = run_to_files(
        &cfg,
        &dir.join(format!("{stem}.csv")),
        &dir.join(format!("{stem}.svg")),
    )?;
    println!("wrote {}", out.csv.display());
    if let Some(p) = out.plot {
        println!("wrote {}", p.display());
    }
    if let Some(last) = run.records.iter().rev().find(|r| r.accuracy.is_some()) {
        println!(
            "round {}: accuracy {:.4}, predictive log-likelihood {:.4}",
            last.round,
            last.accuracy.unwrap_or(f64::NAN),
            last.pred_loglik.unwrap_or(f64::NAN)
        );
    }
    match run.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn sweep(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let rows = run_sweep(&cfg)?;
    println!(
        "{:<12} {:>4} {:>20} {:>8} {:>9} {:>9}",
        "scheme", "run", "seed", "to_0.7", "final", "late_std"
    );
    for r in &rows {
        println!(
            "{:<12} {:>4} {:>20} {:>8} {:>9} {:>9}",
            r.scheme.as_str(),
            r.run,
            r.seed,
            r.rounds_to_target,
            r.final_accuracy
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            r.late_std
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    println!("wrote {}", cfg.output_dir.join("summary.csv").display());
    match rows.iter().find_map(|r| r.error.clone()) {
        Some(e) => Err(Error::Config(format!("a sweep run aborted: {e}"))),
        None => Ok(()),
    }
}

fn check() -> bool {
    let outcomes = run_checks();
    for o in &outcomes {
        println!(
            "[{}] {} ({:.2}s): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.seconds,
            o.detail
        );
    }
    outcomes.iter().all(|o| o.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Check => {
            return if check() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
