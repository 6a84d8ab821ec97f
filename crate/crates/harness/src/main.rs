use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use primwalk::acceptance;
use primwalk::config::{ExperimentConfig, OUTPUT_ENV};
use primwalk::output::RunRecorder;
use primwalk::pipeline::{self, RunSummary, Target};
use primwalk::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "primwalk", version, about = "Hexapod motion-primitive learning and planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one primitive policy.
    Train {
        target: Target,
        #[command(flatten)]
        common: Common,
    },
    /// Learn the primitive lookup table from both trained policies.
    LearnDynamics {
        #[command(flatten)]
        common: Common,
    },
    /// Reach each configured goal from the origin.
    RunGoals {
        #[command(flatten)]
        common: Common,
    },
    /// Visit the configured waypoints in order.
    RunWaypoints {
        #[command(flatten)]
        common: Common,
    },
    /// Run every stage in order.
    All {
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance suite and print one line per criterion.
    Acceptance {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the PRIMWALK_OUT variable and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| cfg.output_dir.clone());
        cfg.output_dir = out.clone();
        Ok((cfg, out))
    }
}

fn print_run(kind: &str, s: &RunSummary) {
    println!(
        "{kind} {} ({}, {}): {} after {} cycles, final distance {:.3} m",
        s.index,
        s.goal[0],
        s.goal[1],
        if s.success { "reached" } else { "not reached" },
        s.cycles,
        s.final_distance
    );
}

fn stage(cfg: &ExperimentConfig, out: &Path, name: &str, body: impl FnOnce(&mut RunRecorder) -> Result<()>) -> Result<()> {
    let t0 = Instant::now();
    let mut rec = RunRecorder::new(out);
    let result = body(&mut rec);
    let manifest = rec.finish(name, cfg.hash(), pipeline::seed_list(cfg), t0.elapsed().as_secs_f64())?;
    eprintln!("manifest: {}", manifest.display());
    result
}

fn train(cfg: &ExperimentConfig, out: &Path, target: Target) -> Result<()> {
    stage(cfg, out, &format!("train-{}", target.name()), |rec| {
        let report = pipeline::train(cfg, target, rec, |s| {
            println!(
                "{} iteration {:>3}: reward {:.4}, forward {:.4} m, turn {:.4} rad, kl {:.2e}",
                target.name(),
                s.iteration,
                s.mean_reward,
                s.mean_forward,
                s.mean_turn,
                s.kl
            );
        })?;
        if report.initial_buffer > 0 {
            println!("started from {} reused transitions", report.initial_buffer);
        }
        Ok(())
    })
}

fn learn_dynamics(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    stage(cfg, out, "learn-dynamics", |rec| {
        let report = pipeline::learn_dynamics(cfg, rec)?;
        for id in primwalk_core::policy::PrimitiveId::ALL {
            let s = report.table.stats(id);
            println!(
                "{:<10} n={:<3} dx {:+.4} dy {:+.4} dtheta {:+.4}{}",
                id.name(),
                s.count,
                s.mean[0],
                s.mean[1],
                s.mean[2],
                if s.pinned { " (pinned)" } else { "" }
            );
        }
        let within = report.validation.iter().filter(|r| r.within).count();
        println!("held-out check: {within}/{} components within 3 SE", report.validation.len());
        Ok(())
    })
}

fn run_goals(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    stage(cfg, out, "run-goals", |rec| {
        pipeline::run_goals(cfg, rec, |s| print_run("goal", s)).map(|_| ())
    })
}

fn run_waypoints(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    stage(cfg, out, "run-waypoints", |rec| {
        pipeline::run_waypoints(cfg, rec, |s| print_run("waypoint", s)).map(|_| ())
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { target, common } => {
            let (cfg, out) = common.resolve()?;
            train(&cfg, &out, target)
        }
        Command::LearnDynamics { common } => {
            let (cfg, out) = common.resolve()?;
            learn_dynamics(&cfg, &out)
        }
        Command::RunGoals { common } => {
            let (cfg, out) = common.resolve()?;
            run_goals(&cfg, &out)
        }
        Command::RunWaypoints { common } => {
            let (cfg, out) = common.resolve()?;
            run_waypoints(&cfg, &out)
        }
        Command::All { common } => {
            let (cfg, out) = common.resolve()?;
            train(&cfg, &out, Target::Forward)?;
            train(&cfg, &out, Target::Turn)?;
            learn_dynamics(&cfg, &out)?;
            run_goals(&cfg, &out)?;
            run_waypoints(&cfg, &out)
        }
        Command::Acceptance { common } => {
            let (cfg, out) = common.resolve()?;
            let report = acceptance::run(&cfg, &out, |r| println!("{r}"))?;
            let passed = report.criteria.iter().filter(|c| c.passed).count();
            println!("{passed}/{} criteria passed", report.criteria.len());
            if report.all_passed() {
                Ok(())
            } else {
                Err(HarnessError::Run("acceptance criteria failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
