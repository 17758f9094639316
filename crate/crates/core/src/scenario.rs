//! Scenario runs, offline pretraining and run comparison.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DefenderKind, ScenarioSpec};
use crate::consensus::{relative_mismatch, SharedMeasurement};
use crate::defense::{encode_state, DqnAgent, Experience};
use crate::error::{Error, Result};
use crate::game::{settled_state, Detector, EnvConfig, Environment, OperatingReference, TrajectoryRow};
use crate::dynamics::SystemState;
use crate::neuralnet::Mlp;
use crate::threat::{AttackSchedule, AttackStage, StageTrigger};

/// Frequency bound of the consensus objective (rad/s).
pub const FREQUENCY_TOLERANCE: f64 = 1e-3;
/// Relative power-sharing bound of the consensus objective.
pub const SHARING_TOLERANCE: f64 = 0.01;

/// Settles the attack-free system and pins the operating reference to the result.
pub fn prepare(env: &EnvConfig, settle: f64) -> Result<(EnvConfig, SystemState)> {
    let start = settled_state(env, settle)?;
    let mut cfg = env.clone();
    cfg.reference = Some(OperatingReference::from_state(&start));
    Ok((cfg, start))
}

/// How topology actions are chosen during a run.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Keep the initial topology.
    Hold,
    /// Deployed DQN agent; keeps learning until the attack is neutralized.
    Agent(Box<DqnAgent>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Activated,
    Scanned,
    Switched,
    Retrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub time: f64,
    pub kind: EventKind,
    /// One-based DG, or the new topology id for switches.
    pub target: Option<usize>,
}

/// Per decision epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub time: f64,
    pub topology: usize,
    pub u_d: f64,
    pub u_r: f64,
    pub frequency_deviation: f64,
    pub power_share_mismatch: f64,
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub defender: DefenderKind,
    pub seed: u64,
    pub duration: f64,
    pub cumulative_u_d: f64,
    pub cumulative_u_r: f64,
    pub max_frequency_deviation: f64,
    pub max_power_share_mismatch: f64,
    pub final_frequency_deviation: f64,
    pub final_power_share_mismatch: f64,
    pub activations: Vec<TimedEvent>,
    pub scans: Vec<TimedEvent>,
    pub switches: Vec<TimedEvent>,
    pub retrains: Vec<TimedEvent>,
    /// One-based DGs whose malware was removed.
    pub burned: Vec<usize>,
    /// Frequency and power-sharing objectives hold at the end of the run.
    pub objectives_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub step: u64,
    pub episode: usize,
    pub loss: f64,
    #[serde(rename = "B_t")]
    pub b_t: f64,
    pub cum_reward: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub summary: RunSummary,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub trajectory: Vec<TrajectoryRow>,
    pub training_log: Vec<TrainingLogRow>,
}

impl RunOutcome {
    pub fn summary(&self) -> &RunSummary {
        &self.metrics.summary
    }
}

/// Largest `|ω_k − ω_n|` and the relative `m_P·P` spread of the grid right now.
pub fn objective_errors(env: &Environment) -> (f64, f64) {
    let g = env.grid();
    let n = g.dg_count();
    let f = (0..n).map(|k| (g.omega(k) - g.config.dgs[k].omega_n).abs()).fold(0.0, f64::max);
    let shares: Vec<f64> = (0..n).map(|k| g.power_share(k)).collect();
    (f, relative_mismatch(&shares))
}

/// Builds the defender a spec asks for; DQN needs a trained network.
pub fn policy_for(spec: &ScenarioSpec, network: Option<Mlp>) -> Result<Policy> {
    match spec.defender {
        DefenderKind::Static => Ok(Policy::Hold),
        DefenderKind::Dqn => {
            let net = network.ok_or_else(|| Error::Config("the dqn defender needs a checkpoint".into()))?;
            let cfg = crate::defense::AgentConfig { seed: spec.seed, ..spec.agent.clone() };
            Ok(Policy::Agent(Box::new(DqnAgent::deployed(net, cfg)?)))
        }
    }
}

fn check_network(net: &Mlp, inputs: usize, actions: usize) -> Result<()> {
    if net.input_dim() != inputs || net.output_dim() != actions {
        return Err(Error::Config(format!(
            "checkpoint maps {} inputs to {} actions but this system needs {inputs} to {actions}",
            net.input_dim(),
            net.output_dim()
        )));
    }
    Ok(())
}

/// Runs a scenario from its settled operating point.
pub fn run_scenario(spec: &ScenarioSpec, mut policy: Policy) -> Result<RunOutcome> {
    let (cfg, start) = prepare(&spec.env, spec.settle)?;
    let mut env = Environment::with_state(cfg, spec.schedule.clone(), start)?;
    env.record_trajectory(true);
    let actions = env.topologies().len();
    let features = |env: &Environment| encode_state(&env.game_state(), actions);
    if let Policy::Agent(agent) = &policy {
        check_network(&agent.online, features(&env).len(), actions)?;
    }
    let attacked = !spec.schedule.stages.is_empty();

    let mut epochs = Vec::with_capacity(spec.epochs());
    let mut training_log = Vec::new();
    let (mut activations, mut scans, mut switches, mut retrains) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut sum_d, mut sum_r) = (0.0, 0.0);
    for _ in 0..spec.epochs() {
        let s = features(&env);
        let done = attacked && env.attacker().neutralized();
        let action = match &mut policy {
            Policy::Hold => env.topology(),
            Policy::Agent(agent) if done => agent.greedy(&s)?,
            Policy::Agent(agent) => agent.act(&s)?,
        };
        let out = env.step(action)?;
        let t = out.time;
        sum_d += out.breakdown.u_d;
        sum_r += out.breakdown.u_r;
        if let Policy::Agent(agent) = &mut policy {
            if !done {
                let terminal = attacked && env.attacker().neutralized();
                let exp = Experience { state: s, action, reward: out.reward, next_state: features(&env), terminal };
                if let Some(loss) = agent.observe(exp)? {
                    training_log.push(TrainingLogRow {
                        step: agent.train_steps(),
                        episode: 0,
                        loss,
                        b_t: agent.exploration(),
                        cum_reward: sum_d,
                    });
                }
                if agent.record_reward(out.reward) {
                    retrains.push(TimedEvent { time: t, kind: EventKind::Retrain, target: None });
                }
            }
        }
        for &k in &out.activated {
            activations.push(TimedEvent { time: t, kind: EventKind::Activated, target: Some(k + 1) });
        }
        for &k in &out.scanned {
            scans.push(TimedEvent { time: t, kind: EventKind::Scanned, target: Some(k + 1) });
        }
        if out.switched {
            switches.push(TimedEvent { time: t, kind: EventKind::Switched, target: Some(env.topology()) });
        }
        let (f, m) = objective_errors(&env);
        epochs.push(EpochRecord {
            time: t,
            topology: env.topology(),
            u_d: out.breakdown.u_d,
            u_r: out.breakdown.u_r,
            frequency_deviation: f,
            power_share_mismatch: m,
            flags: out.flags,
        });
    }

    let last = epochs.last().ok_or_else(|| Error::Config("scenario shorter than one decision epoch".into()))?;
    let (final_f, final_m) = (last.frequency_deviation, last.power_share_mismatch);
    let summary = RunSummary {
        scenario: spec.name.clone(),
        defender: spec.defender,
        seed: spec.seed,
        duration: spec.duration,
        cumulative_u_d: sum_d,
        cumulative_u_r: sum_r,
        max_frequency_deviation: epochs.iter().map(|e| e.frequency_deviation).fold(0.0, f64::max),
        max_power_share_mismatch: epochs.iter().map(|e| e.power_share_mismatch).fold(0.0, f64::max),
        final_frequency_deviation: final_f,
        final_power_share_mismatch: final_m,
        burned: (0..env.grid().dg_count()).filter(|&k| env.attacker().state.burned[k]).map(|k| k + 1).collect(),
        activations,
        scans,
        switches,
        retrains,
        objectives_met: final_f < FREQUENCY_TOLERANCE && final_m < SHARING_TOLERANCE,
    };
    Ok(RunOutcome { metrics: Metrics { summary, epochs }, trajectory: env.take_trajectory(), training_log })
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    io(path, w.flush())
}

pub fn write_training_log(path: &Path, rows: &[TrainingLogRow]) -> Result<()> {
    if rows.is_empty() {
        let header = "step,episode,loss,B_t,cum_reward\n";
        return io(path, fs::write(path, header));
    }
    write_csv(path, rows)
}

fn events_text(s: &RunSummary) -> String {
    let mut all: Vec<&TimedEvent> = s.activations.iter().chain(&s.scans).chain(&s.switches).chain(&s.retrains).collect();
    all.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut out = String::new();
    for e in all {
        let what = match (e.kind, e.target) {
            (EventKind::Activated, Some(k)) => format!("attack activated on DG{k}"),
            (EventKind::Scanned, Some(k)) => format!("malware scan burned DG{k}"),
            (EventKind::Switched, Some(t)) => format!("switched to topology {t}"),
            (EventKind::Retrain, _) => "reward drop, exploration restarted".to_string(),
            (kind, None) => format!("{kind:?}"),
        };
        let _ = writeln!(out, "t={:.3}s {what}", e.time);
    }
    out
}

/// Writes `trajectory.csv`, `metrics.json`, `events.log` and `training_log.csv` into `dir`.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    io(dir, fs::create_dir_all(dir))?;
    let paths: Vec<PathBuf> =
        ["trajectory.csv", "metrics.json", "events.log", "training_log.csv"].iter().map(|f| dir.join(f)).collect();
    write_csv(&paths[0], &outcome.trajectory)?;
    let json = serde_json::to_string_pretty(&outcome.metrics)?;
    io(&paths[1], fs::write(&paths[1], json + "\n"))?;
    io(&paths[2], fs::write(&paths[2], events_text(&outcome.metrics.summary)))?;
    write_training_log(&paths[3], &outcome.training_log)?;
    Ok(paths)
}

/// Reads `metrics.json`, or the one inside a run directory.
pub fn load_metrics(path: &Path) -> Result<Metrics> {
    let file = if path.is_dir() { path.join("metrics.json") } else { path.to_path_buf() };
    let text = io(&file, fs::read_to_string(&file))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: file, message: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainOutcome {
    pub network: Mlp,
    pub log: Vec<TrainingLogRow>,
    /// Mean loss over the first and last plateau windows.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub offline_steps: usize,
}

fn random_episode<R: Rng>(rng: &mut R, spec: &ScenarioSpec) -> AttackSchedule {
    let p = &spec.pretrain;
    if rng.random::<f64>() < p.benign_fraction {
        return AttackSchedule::default();
    }
    let n = spec.env.plant.dg_count();
    let dg = rng.random_range(0..n);
    let time = rng.random_range(p.onset_min..=p.onset_max);
    let mut draw = |max: f64| {
        let m = rng.random_range(0.1 * max..=max);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    };
    let offsets = SharedMeasurement {
        omega: draw(p.omega_offset_max),
        power_share: draw(p.share_offset_max),
        reactive_share: draw(p.share_offset_max),
    };
    AttackSchedule { stages: vec![AttackStage { trigger: StageTrigger::At { time }, dgs: vec![dg], offsets }] }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

fn checked(loss: f64, step: u64, episode: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numerical(format!("non-finite training loss at train step {step} (episode {episode})")))
    }
}

/// Trains a defender on benign and randomized single-DG attack episodes, then keeps
/// training on the replay memory until the loss stops improving.
pub fn pretrain(spec: &ScenarioSpec) -> Result<PretrainOutcome> {
    let p = &spec.pretrain;
    let mut env_cfg = spec.env.clone();
    env_cfg.detector = Detector::Dynamic;
    let (cfg, start) = prepare(&env_cfg, spec.settle)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7072_6574_7261_696e);
    let probe = Environment::with_state(cfg.clone(), AttackSchedule::default(), start.clone())?;
    let actions = probe.topologies().len();
    let inputs = encode_state(&probe.game_state(), actions).len();
    let mut agent = DqnAgent::new(inputs, actions, crate::defense::AgentConfig { seed: spec.seed, ..spec.agent.clone() })?;
    let epochs = (p.episode_seconds / cfg.epoch).round() as usize;

    let mut log = Vec::new();
    for episode in 0..p.episodes {
        let schedule = random_episode(&mut rng, spec);
        let attacked = !schedule.stages.is_empty();
        let mut env = Environment::with_state(cfg.clone(), schedule, start.clone())?;
        agent.reset_episode();
        let mut cum = 0.0;
        for _ in 0..epochs {
            let s = encode_state(&env.game_state(), actions);
            let a = agent.act(&s)?;
            let out = env.step(a)?;
            cum += out.reward;
            let terminal = attacked && env.attacker().neutralized();
            let exp = Experience { state: s, action: a, reward: out.reward, next_state: encode_state(&env.game_state(), actions), terminal };
            if let Some(loss) = agent.observe(exp)? {
                let step = agent.train_steps();
                log.push(TrainingLogRow { step, episode, loss: checked(loss, step, episode)?, b_t: agent.exploration(), cum_reward: cum });
            }
            if terminal {
                break;
            }
        }
        log::info!("pretraining episode {} finished, cumulative reward {cum:.4}", episode + 1);
    }

    let w = p.plateau_window;
    let mut offline = 0;
    let mut previous = f64::INFINITY;
    while offline < p.max_offline_steps {
        let mut window = Vec::with_capacity(w);
        for _ in 0..w.min(p.max_offline_steps - offline) {
            let Some(loss) = agent.train_once()? else { break };
            let step = agent.train_steps();
            window.push(checked(loss, step, p.episodes)?);
            log.push(TrainingLogRow { step, episode: p.episodes, loss, b_t: agent.exploration(), cum_reward: 0.0 });
            offline += 1;
        }
        if window.is_empty() {
            break;
        }
        let current = mean(&window);
        if previous.is_finite() && previous - current < p.plateau_tolerance * previous.abs() {
            break;
        }
        previous = current;
    }

    let losses: Vec<f64> = log.iter().map(|r| r.loss).collect();
    let k = w.min(losses.len());
    Ok(PretrainOutcome {
        network: agent.online.clone(),
        initial_loss: mean(&losses[..k]),
        final_loss: mean(&losses[losses.len() - k..]),
        log,
        offline_steps: offline,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b − a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub rows: Vec<ComparisonRow>,
    pub objectives_met_a: bool,
    pub objectives_met_b: bool,
}

pub fn compare(a: &RunSummary, b: &RunSummary) -> Comparison {
    let pick: [(&str, fn(&RunSummary) -> f64); 10] = [
        ("cumulative_u_d", |s| s.cumulative_u_d),
        ("cumulative_u_r", |s| s.cumulative_u_r),
        ("max_frequency_deviation", |s| s.max_frequency_deviation),
        ("max_power_share_mismatch", |s| s.max_power_share_mismatch),
        ("final_frequency_deviation", |s| s.final_frequency_deviation),
        ("final_power_share_mismatch", |s| s.final_power_share_mismatch),
        ("activations", |s| s.activations.len() as f64),
        ("scans", |s| s.scans.len() as f64),
        ("switches", |s| s.switches.len() as f64),
        ("burned", |s| s.burned.len() as f64),
    ];
    let rows = pick
        .iter()
        .map(|(name, f)| ComparisonRow { metric: name.to_string(), a: f(a), b: f(b), delta: f(b) - f(a) })
        .collect();
    Comparison {
        a: format!("{} ({})", a.scenario, a.defender.as_str()),
        b: format!("{} ({})", b.scenario, b.defender.as_str()),
        rows,
        objectives_met_a: a.objectives_met,
        objectives_met_b: b.objectives_met,
    }
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>16} {:>16} {:>16}", "metric", "A", "B", "B - A");
        let _ = writeln!(out, "{:<28} {:>16} {:>16}", "run", self.a, self.b);
        for r in &self.rows {
            let _ = writeln!(out, "{:<28} {:>16.6} {:>16.6} {:>16.6}", r.metric, r.a, r.b, r.delta);
        }
        let _ = writeln!(out, "{:<28} {:>16} {:>16}", "objectives_met", self.objectives_met_a, self.objectives_met_b);
        out
    }
}
