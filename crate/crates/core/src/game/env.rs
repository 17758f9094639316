use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::utility::{breakdown, count_oscillations_with_floor, ChannelMetrics, GameConfig, UtilityBreakdown, UtilityInputs};
use crate::consensus::{
    consensus_rates, default_consensus_gain, enumerate_topologies_with_pinning, leader_pinning, min_consensus_gain,
    CommTopology, SharedMeasurement, DEFAULT_PINNING_GAIN,
};
use crate::dynamics::{Microgrid, PlantConfig, SystemState};
use crate::defense::{channel_residuals, static_detect, StaticDetectorConfig};
use crate::error::{Error, Result};
use crate::threat::{AttackSchedule, Attacker, StealthBounds, DEFAULT_STEALTH_FRACTION};

/// How the defender screens incoming consensus data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Detector {
    /// Anomaly flags, automatic malware scans and topology switching.
    Dynamic,
    /// Bad-data residual test: drops any message deviating from the value its sender
    /// measured by more than a channel threshold. Never scans and never switches topology.
    Static(StaticDetectorConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub plant: PlantConfig,
    pub game: GameConfig,
    pub pinning_gain: f64,
    /// `K1 = K2`; the topology-set default when absent.
    pub consensus_gain: Option<f64>,
    pub comm_period: f64,
    pub epoch: f64,
    pub sample_period: f64,
    pub stealth_fraction: f64,
    pub detector: Detector,
    /// Attack-free operating point that deviations are measured from.
    pub reference: Option<OperatingReference>,
}

/// Secondary-control and voltage values of the settled attack-free system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingReference {
    pub delta_omega: Vec<f64>,
    pub delta_v: Vec<f64>,
    pub v_od: Vec<f64>,
}

impl OperatingReference {
    pub fn from_state(state: &SystemState) -> Self {
        Self {
            delta_omega: state.dgs.iter().map(|d| d.delta_omega).collect(),
            delta_v: state.dgs.iter().map(|d| d.delta_v).collect(),
            v_od: state.dgs.iter().map(|d| d.v_od).collect(),
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::four_dg_default(),
            game: GameConfig::default(),
            pinning_gain: DEFAULT_PINNING_GAIN,
            consensus_gain: None,
            comm_period: 0.01,
            epoch: 0.1,
            sample_period: 1e-3,
            stealth_fraction: DEFAULT_STEALTH_FRACTION,
            detector: Detector::Dynamic,
            reference: None,
        }
    }
}

fn ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    let r = a / b;
    let n = r.round();
    if !(n >= 1.0) || (r - n).abs() > 1e-6 {
        return Err(Error::Config(format!("{what}: {a} is not a whole multiple of {b}")));
    }
    Ok(n as usize)
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.game.validate()?;
        if !(self.pinning_gain > 0.0) {
            return Err(Error::InvalidParameter("pinning gain must be positive".into()));
        }
        if let Some(k) = self.consensus_gain {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidParameter(format!("consensus gain {k} must be finite and nonnegative")));
            }
        }
        ratio(self.comm_period, self.plant.dt, "communication period")?;
        ratio(self.epoch, self.comm_period, "decision epoch")?;
        ratio(self.comm_period, self.sample_period, "communication period")?;
        ratio(self.sample_period, self.plant.dt, "sample period")?;
        if !(self.stealth_fraction > 0.0 && self.stealth_fraction < 1.0) {
            return Err(Error::InvalidParameter("stealth fraction must lie in (0, 1)".into()));
        }
        if let Detector::Static(d) = &self.detector {
            d.validate()?;
        }
        if let Some(r) = &self.reference {
            let n = self.plant.dg_count();
            if r.delta_omega.len() != n || r.delta_v.len() != n || r.v_od.len() != n {
                return Err(Error::Config("operating reference does not match the DG count".into()));
            }
        }
        Ok(())
    }

    /// Scale of each shared channel: `ω_n`, `m_P·S` and `n_Q·S` of DG1.
    pub fn channel_scales(&self) -> SharedMeasurement {
        let p = &self.plant.dgs[0];
        SharedMeasurement { omega: p.omega_n, power_share: p.omega_band(), reactive_share: p.voltage_band() }
    }

    pub fn stealth_bounds(&self) -> StealthBounds {
        StealthBounds::symmetric(self.channel_scales(), self.stealth_fraction)
    }

    pub fn topologies(&self) -> Result<Vec<CommTopology>> {
        enumerate_topologies_with_pinning(&leader_pinning(self.plant.dg_count(), self.pinning_gain))
    }
}

/// Runs the attack-free system from a flat start for `seconds` on topology 0 and
/// returns the settled plant state with its clock reset to zero.
pub fn settled_state(config: &EnvConfig, seconds: f64) -> Result<SystemState> {
    let mut cfg = config.clone();
    cfg.detector = Detector::Dynamic;
    cfg.reference = None;
    let mut env = Environment::new(cfg, AttackSchedule::default())?;
    let epochs = (seconds / config.epoch).round() as usize;
    for _ in 0..epochs {
        env.step(0)?;
    }
    let mut state = env.grid.state.clone();
    state.steps = 0;
    Ok(state)
}

/// Markov state visible to the defender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub theta: Vec<bool>,
    pub topology: usize,
    pub burned: Vec<bool>,
    pub flags: Vec<bool>,
    pub step: u64,
}

/// One row of the recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    /// One-based DG number.
    pub dg: usize,
    pub omega: f64,
    pub v_od: f64,
    pub v_oq: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub delta_omega: f64,
    pub delta_v: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub time: f64,
    pub reward: f64,
    pub breakdown: UtilityBreakdown,
    pub activated: Vec<usize>,
    pub scanned: Vec<usize>,
    pub switched: bool,
    pub flags: Vec<bool>,
    /// Largest normalised residual seen from each DG this epoch.
    pub residuals: Vec<f64>,
    /// Messages rejected by the static detector this epoch.
    pub dropped_messages: u64,
}

/// Everything needed to resume an environment exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub plant_state: SystemState,
    pub attacker: Attacker,
    pub topology: usize,
    pub flags: Vec<bool>,
    pub streak: Vec<u32>,
    pub step: u64,
    /// Per DG, per channel, trailing samples for oscillation counting.
    pub history: Vec<[Vec<f64>; 3]>,
}

pub struct Environment {
    config: EnvConfig,
    topologies: Vec<CommTopology>,
    gain: f64,
    grid: Microgrid,
    attacker: Attacker,
    topology: usize,
    flags: Vec<bool>,
    streak: Vec<u32>,
    step: u64,
    history: Vec<[VecDeque<f64>; 3]>,
    recorder: Option<Vec<TrajectoryRow>>,
}

impl Environment {
    pub fn new(config: EnvConfig, schedule: AttackSchedule) -> Result<Self> {
        let state = SystemState::flat_start(&config.plant);
        Self::with_state(config, schedule, state)
    }

    /// Starts from a given plant state (for example a settled operating point).
    pub fn with_state(config: EnvConfig, schedule: AttackSchedule, state: SystemState) -> Result<Self> {
        config.validate()?;
        let n = config.plant.dg_count();
        let attacker = Attacker::new(schedule, n, config.stealth_bounds())?;
        let snap = EnvSnapshot {
            plant_state: state,
            attacker,
            topology: 0,
            flags: vec![false; n],
            streak: vec![0; n],
            step: 0,
            history: vec![Default::default(); n],
        };
        Self::restore(config, snap)
    }

    pub fn restore(config: EnvConfig, snap: EnvSnapshot) -> Result<Self> {
        config.validate()?;
        let topologies = config.topologies()?;
        let gain = match config.consensus_gain {
            Some(k) => k,
            None => default_consensus_gain(&topologies)?,
        };
        if gain > 0.0 {
            for t in &topologies {
                let k_min = min_consensus_gain(t)?;
                if gain < k_min {
                    log::warn!("consensus gain {gain} below K_min = {k_min:.4} of topology {}", t.id);
                }
            }
        }
        if snap.topology >= topologies.len() {
            return Err(Error::InvalidTopology(format!("topology id {} out of range", snap.topology)));
        }
        let grid = Microgrid::from_state(config.plant.clone(), snap.plant_state)?;
        let n = grid.dg_count();
        if snap.attacker.state.dg_count() != n || snap.flags.len() != n || snap.streak.len() != n || snap.history.len() != n {
            return Err(Error::Config("snapshot does not match the configured DG count".into()));
        }
        let history = snap.history.into_iter().map(|h| h.map(VecDeque::from)).collect();
        Ok(Self {
            config,
            topologies,
            gain,
            grid,
            attacker: snap.attacker,
            topology: snap.topology,
            flags: snap.flags,
            streak: snap.streak,
            step: snap.step,
            history,
            recorder: None,
        })
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            plant_state: self.grid.state.clone(),
            attacker: self.attacker.clone(),
            topology: self.topology,
            flags: self.flags.clone(),
            streak: self.streak.clone(),
            step: self.step,
            history: self.history.iter().map(|h| h.clone().map(Vec::from)).collect(),
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn topologies(&self) -> &[CommTopology] {
        &self.topologies
    }

    pub fn consensus_gain(&self) -> f64 {
        self.gain
    }

    pub fn grid(&self) -> &Microgrid {
        &self.grid
    }

    pub fn attacker(&self) -> &Attacker {
        &self.attacker
    }

    pub fn time(&self) -> f64 {
        self.grid.time()
    }

    pub fn topology(&self) -> usize {
        self.topology
    }

    pub fn game_state(&self) -> GameState {
        GameState {
            theta: self.attacker.state.theta.clone(),
            topology: self.topology,
            burned: self.attacker.state.burned.clone(),
            flags: self.flags.clone(),
            step: self.step,
        }
    }

    /// Starts keeping one trajectory row per DG every sample period.
    pub fn record_trajectory(&mut self, on: bool) {
        self.recorder = on.then(Vec::new);
    }

    pub fn take_trajectory(&mut self) -> Vec<TrajectoryRow> {
        self.recorder.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn measurements(&self) -> Vec<SharedMeasurement> {
        (0..self.grid.dg_count())
            .map(|k| SharedMeasurement {
                omega: self.grid.omega(k),
                power_share: self.grid.power_share(k),
                reactive_share: self.grid.reactive_share(k),
            })
            .collect()
    }

    fn sample(&mut self) {
        let n = self.grid.dg_count();
        let cap = (self.config.game.oscillation_window / self.config.sample_period).round().max(1.0) as usize;
        let t = self.grid.time();
        for k in 0..n {
            let s = &self.grid.state.dgs[k];
            let omega = self.grid.omega(k);
            let values = [omega, s.v_od, self.grid.power_share(k)];
            for (h, v) in self.history[k].iter_mut().zip(values) {
                if h.len() == cap {
                    h.pop_front();
                }
                h.push_back(v);
            }
            if let Some(rows) = self.recorder.as_mut() {
                rows.push(TrajectoryRow {
                    t,
                    dg: k + 1,
                    omega,
                    v_od: s.v_od,
                    v_oq: s.v_oq,
                    p: s.p,
                    q: s.q,
                    delta_omega: s.delta_omega,
                    delta_v: s.delta_v,
                    freq_hz: omega / std::f64::consts::TAU,
                });
            }
        }
    }

    /// Runs one decision epoch with the defender's chosen topology.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= self.topologies.len() {
            return Err(Error::InvalidTopology(format!("topology id {action} out of range")));
        }
        let cfg = self.config.clone();
        let dynamic = matches!(cfg.detector, Detector::Dynamic);
        let switched = dynamic && action != self.topology;
        if switched {
            self.topology = action;
            self.attacker.on_topology_change(&self.topologies[action]);
        }
        let n = self.grid.dg_count();
        let dt = cfg.plant.dt;
        let ticks = ratio(cfg.epoch, cfg.comm_period, "decision epoch")?;
        let steps_per_tick = ratio(cfg.comm_period, dt, "communication period")?;
        let steps_per_sample = ratio(cfg.sample_period, dt, "sample period")?;
        let scales = cfg.channel_scales();
        let omega_n = cfg.plant.dgs[0].omega_n;
        let static_cfg = match cfg.detector {
            Detector::Static(d) => Some(d),
            Detector::Dynamic => None,
        };

        let mut activated = Vec::new();
        let mut residuals = vec![0.0f64; n];
        let mut dropped = 0u64;
        let mut rates = vec![(0.0, 0.0); n];
        for _ in 0..ticks {
            let topo = &self.topologies[self.topology];
            let fired = self.attacker.update(self.grid.time(), topo);
            activated.extend(fired);
            let x_n = self.measurements();
            let msgs = self.attacker.inject(&x_n, topo);
            for l in 0..n {
                let mut received = vec![None; n];
                for k in 0..n {
                    if k == l || !topo.is_link(k, l) {
                        continue;
                    }
                    let (m, x) = (msgs[k][l], x_n[k]);
                    let r = channel_residuals(&m, &x, &scales).into_iter().fold(0.0, f64::max);
                    residuals[k] = residuals[k].max(r);
                    if static_cfg.is_some_and(|d| static_detect(&m, &x, &scales, &d)) {
                        dropped += 1;
                        continue;
                    }
                    received[k] = Some(m);
                }
                rates[l] = consensus_rates(l, &received, x_n[l], &topo.adjacency, &topo.pinning, self.gain, self.gain, omega_n);
            }
            self.grid.set_secondary_rates(&rates);
            for s in 0..steps_per_tick {
                self.grid.step().map_err(|e| match e {
                    Error::Diverged { time, detail } => Error::Diverged {
                        time,
                        detail: format!("{detail} (epoch {}, topology {})", self.step, self.topology),
                    },
                    other => other,
                })?;
                if (s + 1) % steps_per_sample == 0 {
                    self.sample();
                }
            }
        }

        let threshold = self.config.game.anomaly_threshold;
        for k in 0..n {
            self.flags[k] = residuals[k] > threshold;
            self.streak[k] = if self.flags[k] { self.streak[k] + 1 } else { 0 };
        }
        let inputs = self.utility_inputs(activated.len())?;
        let theta = self.attacker.state.theta.clone();
        let b = breakdown(&inputs, &theta, self.config.game.rho)?;

        let mut scanned = Vec::new();
        if dynamic {
            let t = self.grid.time();
            for k in 0..n {
                if self.streak[k] >= self.config.game.scan_after {
                    log::info!("t={t:.3}s malware scan on DG {}", k + 1);
                    self.attacker.remove(k, t);
                    self.streak[k] = 0;
                    scanned.push(k);
                }
            }
        }
        self.step += 1;
        Ok(StepOutcome {
            time: self.grid.time(),
            reward: b.u_d,
            breakdown: b,
            activated,
            scanned,
            switched,
            flags: self.flags.clone(),
            residuals,
            dropped_messages: dropped,
        })
    }

    fn utility_inputs(&self, newly_revealed: usize) -> Result<UtilityInputs> {
        let n = self.grid.dg_count();
        let p0 = &self.config.plant.dgs[0];
        let reference = self.config.reference.as_ref();
        let shares: Vec<f64> = (0..n).map(|k| self.grid.power_share(k)).collect();
        let mean_share = shares.iter().sum::<f64>() / n as f64;
        let floor = self.config.game.oscillation_floor;
        let mut channels = Vec::with_capacity(n);
        for k in 0..n {
            let dg = &self.config.plant.dgs[k];
            let v_ref = reference.map_or(dg.v_odn, |r| r.v_od[k]);
            let p_n = [dg.omega_n, v_ref, mean_share];
            let p_c = [self.grid.omega(k), self.grid.state.dgs[k].v_od, shares[k]];
            let mut row = [ChannelMetrics::default(); 3];
            for h in 0..3 {
                let samples: Vec<f64> = self.history[k][h].iter().copied().collect();
                let (z, p_a) = count_oscillations_with_floor(&samples, floor * p_n[h].abs());
                row[h] = ChannelMetrics { z, p_a, p_n: p_n[h], p_c: p_c[h] };
            }
            channels.push(row);
        }
        let dgs = &self.grid.state.dgs;
        Ok(UtilityInputs {
            delta_omega: (0..n).map(|k| dgs[k].delta_omega - reference.map_or(0.0, |r| r.delta_omega[k])).collect(),
            delta_v: (0..n).map(|k| dgs[k].delta_v - reference.map_or(0.0, |r| r.delta_v[k])).collect(),
            omega_n: p0.omega_n,
            v_odn: p0.v_odn,
            channels,
            n_l: self.topologies[self.topology].directed_links(),
            sigma: self.config.game.sigma_unit * newly_revealed as f64,
        })
    }
}
