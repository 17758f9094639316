use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use mgrid_core::config::{DefenderKind, ScenarioSpec};
use mgrid_core::consensus::{enumerate_topologies_with_pinning, leader_pinning, TopologyRecord, DEFAULT_PINNING_GAIN};
use mgrid_core::defense::SurrogateGame;
use mgrid_core::neuralnet::Mlp;
use mgrid_core::scenario::{
    compare, load_metrics, policy_for, pretrain, run_scenario, write_artifacts, write_training_log, RunSummary,
};

/// Microgrid secondary-control attack/defense co-simulation.
#[derive(Debug, Parser)]
#[command(name = "mgrid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Defender {
    Static,
    Dqn,
}

impl From<Defender> for DefenderKind {
    fn from(d: Defender) -> Self {
        match d {
            Defender::Static => DefenderKind::Static,
            Defender::Dqn => DefenderKind::Dqn,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write trajectory.csv, metrics.json and events.log.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        defender: Option<Defender>,
        /// Trained network for the dqn defender. Pretrains in-process when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pretrain the DQN defender and write a checkpoint plus training_log.csv.
    Pretrain {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out/pretrain")]
        out: PathBuf,
        /// Checkpoint path; defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare two runs given their metrics.json files or run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write comparison.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List every spanning-tree communication topology.
    EnumerateTopologies {
        #[arg(long, default_value_t = 4)]
        dgs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the reduced tabular game and check against value iteration.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
    },
}

fn print_summary(s: &RunSummary) {
    println!("scenario              {}", s.scenario);
    println!("defender              {}", s.defender.as_str());
    println!("cumulative U_D        {:.6}", s.cumulative_u_d);
    println!("cumulative U_R        {:.6}", s.cumulative_u_r);
    println!("max |w - w_n|         {:.6} rad/s", s.max_frequency_deviation);
    println!("max mP*P mismatch     {:.4} %", 100.0 * s.max_power_share_mismatch);
    println!("final |w - w_n|       {:.3e} rad/s", s.final_frequency_deviation);
    println!("final mP*P mismatch   {:.3e} %", 100.0 * s.final_power_share_mismatch);
    println!("scans                 {}", s.scans.len());
    println!("topology switches     {}", s.switches.len());
    println!("burned DGs            {:?}", s.burned);
    println!("objectives met        {}", s.objectives_met);
}

fn load_spec(path: &Path, seed: Option<u64>, defender: Option<Defender>) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::load(path)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(d) = defender {
        spec = spec.with_defender(d.into());
    }
    Ok(spec)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, seed, out, defender, checkpoint } => {
            let spec = load_spec(&scenario, seed, defender)?;
            let network = match spec.defender {
                DefenderKind::Static => None,
                DefenderKind::Dqn => match checkpoint.or_else(|| spec.checkpoint.clone()) {
                    Some(path) if !path.is_file() => {
                        return Err(mgrid_core::Error::Config(format!("checkpoint {} does not exist", path.display())).into())
                    }
                    Some(path) => Some(Mlp::load(&path)?),
                    None => {
                        warn!("no checkpoint given; pretraining with seed {}", spec.seed);
                        Some(pretrain(&spec)?.network)
                    }
                },
            };
            let outcome = run_scenario(&spec, policy_for(&spec, network)?)?;
            let dir = out.or_else(|| spec.output.clone()).unwrap_or_else(|| Path::new("out").join(&spec.name));
            let files = write_artifacts(&outcome, &dir)?;
            print_summary(outcome.summary());
            for f in files {
                info!("wrote {}", f.display());
            }
        }
        Command::Pretrain { scenario, seed, out, checkpoint } => {
            let spec = load_spec(&scenario, seed, Some(Defender::Dqn))?;
            let report = pretrain(&spec)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let ckpt = checkpoint.unwrap_or_else(|| out.join("checkpoint.json"));
            report.network.save(&ckpt)?;
            write_training_log(&out.join("training_log.csv"), &report.log)?;
            println!("train steps   {}", report.log.last().map_or(0, |r| r.step));
            println!("initial loss  {:.6}", report.initial_loss);
            println!("final loss    {:.6}", report.final_loss);
            println!("checkpoint    {}", ckpt.display());
        }
        Command::Compare { a, b, out } => {
            let (a, b) = (load_metrics(&a)?, load_metrics(&b)?);
            let report = compare(&a.summary, &b.summary);
            print!("{}", report.table());
            if let Some(dir) = out {
                write_json(&dir.join("comparison.json"), &report)?;
            }
        }
        Command::EnumerateTopologies { dgs, out } => {
            let trees = enumerate_topologies_with_pinning(&leader_pinning(dgs, DEFAULT_PINNING_GAIN))?;
            let records = trees.iter().map(TopologyRecord::try_from).collect::<mgrid_core::Result<Vec<_>>>()?;
            for (t, r) in trees.iter().zip(&records) {
                let edges: Vec<String> = t.edges.iter().map(|(i, j)| format!("{}-{}", i + 1, j + 1)).collect();
                println!("{:>3}  lambda2={:.6}  {}", r.id, t.lambda2, edges.join(" "));
            }
            if let Some(dir) = out {
                write_json(&dir.join("topologies.json"), &records)?;
            }
        }
        Command::Oracle { seed, episodes } => {
            let game = SurrogateGame::new(3)?;
            let report = game.run(episodes, SurrogateGame::agent_config(seed))?;
            println!("{}/{} states optimal ({:.1} %) after {} episodes in {:.2} s", report.matches, report.states, 100.0 * report.fraction, report.episodes, report.seconds);
            if report.fraction < 0.9 {
                bail!("greedy policy matches the optimum in only {:.1} % of states", 100.0 * report.fraction);
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<mgrid_core::Error>() {
        Some(e) if e.is_config() => 2,
        Some(e) if e.is_divergence() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MGRID_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
