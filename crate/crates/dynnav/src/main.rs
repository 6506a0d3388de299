//! Command-line front end: run episodes, benchmark suites, inspect traces.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dynnav::pipeline::{
    inspect_trace, run_benchmark, run_episode, BenchSuite, EpisodeStatus, PipelineConfig,
    RunMetrics,
};
use dynnav::sim::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "dynnav",
    version,
    about = "Depth-camera navigation among moving obstacles, in simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode of a scenario.
    ///
    /// Exit code: 0 when the goal is reached (or a scripted flight
    /// completes), 2 when planning is infeasible, 3 on a collision, 4 on
    /// timeout.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Pipeline configuration TOML; fields not named there keep their
        /// defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Record the episode into this directory.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a benchmark suite and print per-run and aggregate metrics as CSV.
    Bench {
        /// Suite TOML file with [[run]] entries; scenario paths are relative
        /// to it.
        suite: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit JSON instead of CSV.
        #[arg(long)]
        json: bool,
    },
    /// Render a recorded trace as tables and plot-ready CSV.
    Inspect {
        /// Trace directory written by `run --trace`.
        trace: PathBuf,
        /// Write the per-frame track/classification table to this CSV file.
        #[arg(long)]
        tracks: Option<PathBuf>,
        /// Write sampled executed/planned trajectories to this CSV file.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Generate a random moving-obstacle benchmark scenario.
    Gen {
        /// Output scenario TOML file.
        out: PathBuf,
        /// Number of moving agents.
        #[arg(long, default_value_t = 20)]
        agents: usize,
        /// Agent speed, m/s.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Depth-noise standard deviation, m.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> dynnav::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn print_run_summary(scenario: &ScenarioConfig, m: &RunMetrics, trace: Option<&Path>) {
    println!("scenario  {}  (seed {})", scenario.name, scenario.seed);
    println!("status    {}", m.status.as_str());
    println!(
        "flight    t_arrive {:.2} s  l_traj {:.2} m  v_mean {:.2} m/s  frames {}",
        m.t_arrive, m.l_traj, m.v_mean, m.frames
    );
    println!(
        "tracking  error_pos {:.3} m  error_vel {:.3} m/s  ({} samples)",
        m.error_pos, m.error_vel, m.track_samples
    );
    println!(
        "planning  {} plans ({} forced)  opt {:.2} ms  perception {:.2} ms",
        m.plans, m.forced_replans, m.t_opt_ms, m.t_perception_ms
    );
    if let Some(dir) = trace {
        println!("trace     {}", dir.display());
    }
}

fn dispatch(cli: Cli) -> dynnav::Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            config,
            seed,
            trace,
        } => {
            let mut sc = ScenarioConfig::load(&scenario)?;
            if let Some(seed) = seed {
                sc.seed = seed;
            }
            let cfg = load_config(config.as_deref())?;
            let metrics = run_episode(&sc, &cfg, trace.as_deref())?;
            print_run_summary(&sc, &metrics, trace.as_deref());
            let code = match metrics.status {
                EpisodeStatus::GoalReached => 0,
                EpisodeStatus::PlannerInfeasible => 2,
                EpisodeStatus::Collision => 3,
                // A scripted flight has no goal; surviving the horizon is its
                // normal end.
                EpisodeStatus::Timeout if sc.ego.script.is_some() => 0,
                EpisodeStatus::Timeout => 4,
            };
            Ok(ExitCode::from(code))
        }
        Command::Bench {
            suite,
            config,
            out,
            json,
        } => {
            let parsed = BenchSuite::load(&suite)?;
            let base = suite.parent().unwrap_or_else(|| Path::new("."));
            let cfg = load_config(config.as_deref())?;
            let report = run_benchmark(&parsed, base, &cfg)?;
            let body = if json { report.to_json() } else { report.to_csv() };
            match out {
                Some(path) => std::fs::write(path, body)?,
                None => print!("{body}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Inspect {
            trace,
            tracks,
            samples,
        } => {
            let report = inspect_trace(&trace)?;
            print!("{}", report.text);
            if let Some(path) = tracks {
                std::fs::write(path, &report.tracks_csv)?;
            }
            if let Some(path) = samples {
                std::fs::write(path, &report.samples_csv)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen {
            out,
            agents,
            speed,
            sigma,
            seed,
        } => {
            let sc = ScenarioConfig::random_dynamic(agents, speed, sigma, seed);
            sc.save(&out)?;
            println!(
                "wrote {} ({} agents at {speed} m/s, sigma {sigma}, seed {seed})",
                out.display(),
                agents
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
