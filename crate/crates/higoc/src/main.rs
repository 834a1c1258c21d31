use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use higoc::checkpoint::{load_cvae, load_goal_agent, save_cvae, save_flat_agent, save_goal_agent};
use higoc::error::{io_err, Error, Result};
use higoc::eval::higoc_episode;
use higoc::files::{load_dataset, load_json, resolve_maze, save_dataset, save_log};
use higoc::grid::{run_grid, save_grid, ExperimentSpec};
use higoc::report::{read_report, render};
use higoc_core::dataset::Tier;
use higoc_core::env::{self, StateScale};
use higoc_core::expert::{collect, default_dataset_size};
use higoc_core::flat::{train_flat, FlatConfig};
use higoc_core::gcrl::{pretrain_cvae, train_agent, TrainConfig};
use higoc_core::planner::PlannerConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "higoc", version, about = "Hierarchical goal-conditioned offline RL on 2D mazes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct MazeArgs {
    /// Builtin maze (umaze, medium, large) or path to an ASCII maze file.
    #[arg(long, default_value = "umaze")]
    maze: String,
    /// JSON env config overriding the dynamics.
    #[arg(long)]
    env_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted-controller trajectories as JSON Lines.
    Collect {
        #[command(flatten)]
        maze: MazeArgs,
        #[arg(long, default_value = "expert")]
        tier: Tier,
        /// Number of trajectories [default: 200 umaze, 400 medium, 800 large].
        #[arg(long, short = 'k')]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the CVAE and the goal-conditioned agent.
    Train {
        #[command(flatten)]
        maze: MazeArgs,
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest relabeling offset (defaults to the goal period).
        #[arg(long)]
        her_window: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cvae_out: PathBuf,
        /// Training log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the flat conservative baseline.
    TrainFlat {
        #[command(flatten)]
        maze: MazeArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run one planner episode and emit its trace as JSON Lines.
    Plan {
        #[command(flatten)]
        maze: MazeArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cvae: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        /// Must match the period the agent was trained with.
        #[arg(long)]
        period: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// JSON planner config; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid from a JSON spec.
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// Maze override.
        #[arg(long)]
        maze: Option<String>,
        #[arg(long)]
        env_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a results CSV as an aligned table.
    Report {
        #[arg(long)]
        csv: PathBuf,
    },
    /// CVAE utilities.
    Cvae {
        #[command(subcommand)]
        cmd: CvaeCmd,
    },
}

#[derive(Subcommand)]
enum CvaeCmd {
    /// Sample goal sequences from the prior, one JSON object per line.
    Sample {
        #[command(flatten)]
        maze: MazeArgs,
        #[arg(long)]
        cvae: PathBuf,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config_or_default<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load_json)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn json_line<T: serde::Serialize>(w: &mut dyn Write, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v).map_err(|e| Error::Invalid(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err("output"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Collect {
            maze,
            tier,
            episodes,
            seed,
            out,
        } => {
            let spec = resolve_maze(&maze.maze, maze.env_config.as_deref())?;
            let k = episodes.unwrap_or_else(|| default_dataset_size(&spec.name));
            let d = collect(&spec, tier, k, seed)?;
            save_dataset(&out, &d)?;
            eprintln!(
                "{} transitions, mean return {:.3} (random {:.3}, expert {:.3})",
                d.transitions().len(),
                d.meta.mean_return,
                d.meta.random_mean_return,
                d.meta.expert_mean_return
            );
        }
        Cmd::Train {
            maze,
            data,
            config,
            seed,
            her_window,
            out,
            cvae_out,
            log,
        } => {
            let spec = resolve_maze(&maze.maze, maze.env_config.as_deref())?;
            let mut cfg: TrainConfig = config_or_default(config.as_deref())?;
            if her_window.is_some() {
                cfg.her_window = her_window;
            }
            cfg.validate()?;
            let d = load_dataset(&data)?;
            let (cvae, elbo) = pretrain_cvae(&d, StateScale::for_maze(&spec), &cfg, seed)?;
            if let Some(last) = elbo.last() {
                eprintln!("cvae: recon {:.4} kl {:.4}", last.recon, last.kl);
            }
            save_cvae(&cvae_out, &cvae)?;
            let (agent, rows) = train_agent(&d, &cvae, &cfg, seed, |step, _| {
                eprintln!("step {step}");
                None
            })?;
            save_goal_agent(&out, &agent)?;
            if let Some(p) = log {
                save_log(&p, &rows)?;
            }
        }
        Cmd::TrainFlat {
            maze,
            data,
            config,
            seed,
            out,
            log,
        } => {
            let spec = resolve_maze(&maze.maze, maze.env_config.as_deref())?;
            let cfg: FlatConfig = config_or_default(config.as_deref())?;
            let d = load_dataset(&data)?;
            let (agent, rows) = train_flat(&d, &spec, &cfg, seed)?;
            save_flat_agent(&out, &agent)?;
            if let Some(p) = log {
                save_log(&p, &rows)?;
            }
        }
        Cmd::Plan {
            maze,
            checkpoint,
            cvae,
            horizon,
            period,
            lambda,
            config,
            seed,
            out,
        } => {
            let spec = resolve_maze(&maze.maze, maze.env_config.as_deref())?;
            let agent = load_goal_agent(&checkpoint)?;
            let cvae = load_cvae(&cvae)?;
            if let Some(n) = period.filter(|n| *n != agent.n) {
                return Err(Error::Invalid(format!(
                    "--period {n} differs from the agent's training period {}",
                    agent.n
                )));
            }
            let mut cfg: PlannerConfig = config_or_default(config.as_deref())?;
            cfg.horizon = horizon.unwrap_or(cfg.horizon);
            cfg.lambda = lambda.unwrap_or(cfg.lambda);
            let mut secs = 0.0;
            let ep = higoc_episode(&spec, &agent, &cvae, &cfg, seed, &mut secs)?;
            let mut w = output(out.as_deref())?;
            for t in &ep.trace {
                json_line(w.as_mut(), t)?;
            }
            w.flush().map_err(io_err("output"))?;
            eprintln!(
                "return {:.3} success {} wall contacts {} plans {} ({:.1} ms each)",
                ep.ret,
                ep.success,
                ep.wall_contacts,
                ep.plans.len(),
                1e3 * secs / ep.plans.len().max(1) as f64
            );
        }
        Cmd::Grid {
            config,
            maze,
            env_config,
            out,
        } => {
            let mut spec: ExperimentSpec = load_json(&config)?;
            if let Some(m) = maze {
                spec.maze = m;
            }
            let m = resolve_maze(&spec.maze, env_config.as_deref())?;
            let res = run_grid(&spec, &m)?;
            save_grid(&out, &res)?;
            let text = std::fs::read(&out).map_err(io_err(&out))?;
            print!("{}", render(&read_report(&text[..], &out)?));
        }
        Cmd::Report { csv } => {
            let f = File::open(&csv).map_err(io_err(&csv))?;
            print!("{}", render(&read_report(f, &csv)?));
        }
        Cmd::Cvae {
            cmd:
                CvaeCmd::Sample {
                    maze,
                    cvae,
                    horizon,
                    count,
                    seed,
                },
        } => {
            let spec = resolve_maze(&maze.maze, maze.env_config.as_deref())?;
            let cvae = load_cvae(&cvae)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = output(None)?;
            for i in 0..count {
                let s0 = env::reset_with(&spec, &mut rng).to_vec();
                let goals = cvae.sample_goal_sequence(&s0, horizon, &mut rng);
                let free: Vec<bool> = goals.iter().map(|g| spec.is_free_point(g[0], g[1])).collect();
                json_line(
                    w.as_mut(),
                    &serde_json::json!({ "sample": i, "start": s0, "goals": goals, "free": free }),
                )?;
            }
            w.flush().map_err(io_err("output"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
