//! Staged rootkit attacker injecting stealthy offsets into shared consensus data.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::consensus::{CommTopology, SharedMeasurement};
use crate::error::{Error, Result};

/// Fraction of a channel's scale an injection may reach (exclusive).
pub const DEFAULT_STEALTH_FRACTION: f64 = 0.05;

/// How long an attacker waits after its last exposed DG is removed before a reactive stage fires.
pub const DEFAULT_NEUTRALIZED_DELAY: f64 = 0.5;

/// Open interval `(lower, upper)` per shared channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StealthBounds {
    pub lower: SharedMeasurement,
    pub upper: SharedMeasurement,
}

fn channels(m: &SharedMeasurement) -> [f64; 3] {
    [m.omega, m.power_share, m.reactive_share]
}

fn from_channels(c: [f64; 3]) -> SharedMeasurement {
    SharedMeasurement { omega: c[0], power_share: c[1], reactive_share: c[2] }
}

impl StealthBounds {
    /// `±fraction × scale` on each channel.
    pub fn symmetric(scale: SharedMeasurement, fraction: f64) -> Self {
        let s = channels(&scale).map(|v| (v * fraction).abs());
        Self { lower: from_channels(s.map(|v| -v)), upper: from_channels(s) }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (channels(&self.lower), channels(&self.upper));
        if lo.iter().zip(&hi).all(|(l, h)| l.is_finite() && h.is_finite() && l < h) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("empty stealth interval {self:?}")))
        }
    }

    /// Pulls each channel strictly inside the interval; the flag reports whether anything moved.
    pub fn clamp(&self, x_a: SharedMeasurement) -> (SharedMeasurement, bool) {
        let (lo, hi, x) = (channels(&self.lower), channels(&self.upper), channels(&x_a));
        let mut out = x;
        let mut moved = false;
        for i in 0..3 {
            let margin = 1e-6 * (hi[i] - lo[i]);
            if !(x[i] < hi[i]) {
                out[i] = hi[i] - margin;
                moved = true;
            } else if !(x[i] > lo[i]) {
                out[i] = lo[i] + margin;
                moved = true;
            }
        }
        (from_channels(out), moved)
    }
}

/// True iff every channel of `x_a` lies strictly inside `bounds`.
pub fn is_stealthy(x_a: &SharedMeasurement, bounds: &StealthBounds) -> bool {
    let (lo, hi, x) = (channels(&bounds.lower), channels(&bounds.upper), channels(x_a));
    (0..3).all(|i| lo[i] < x[i] && x[i] < hi[i])
}

/// When a stage fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageTrigger {
    /// At a fixed simulation time.
    At { time: f64 },
    /// Once every previously activated DG has been removed for `delay` seconds.
    Neutralized { delay: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStage {
    pub trigger: StageTrigger,
    /// Zero-based DG indices.
    pub dgs: Vec<usize>,
    pub offsets: SharedMeasurement,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub stages: Vec<AttackStage>,
}

impl AttackSchedule {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        for (i, stage) in self.stages.iter().enumerate() {
            match stage.trigger {
                StageTrigger::At { time } => {
                    if !time.is_finite() || time < last {
                        return Err(Error::Config(format!("stage {i}: activation times must be nondecreasing")));
                    }
                    last = time;
                }
                StageTrigger::Neutralized { delay } => {
                    if !(delay >= 0.0) || i == 0 {
                        return Err(Error::Config(format!(
                            "stage {i}: a reactive stage needs a preceding stage and a nonnegative delay"
                        )));
                    }
                }
            }
            if let Some(&k) = stage.dgs.iter().find(|&&k| k >= n) {
                return Err(Error::Config(format!("stage {i}: DG index {k} out of range for {n} DGs")));
            }
            let [a, b, c] = channels(&stage.offsets);
            if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                return Err(Error::Config(format!("stage {i}: non-finite offsets")));
            }
        }
        Ok(())
    }
}

/// Compromise status of the fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackState {
    /// `θ_k`: DG `k` is currently sending manipulated data.
    pub theta: Vec<bool>,
    /// `Ξ[k][l]`: the link from `k` to `l` carries manipulated data.
    pub xi: Vec<Vec<bool>>,
    pub burned: Vec<bool>,
    /// Offsets used by each compromised DG on all of its links.
    pub offsets: Vec<SharedMeasurement>,
    pub bounds: StealthBounds,
    pub ever_activated: Vec<bool>,
    /// Number of times an offset outside the stealth interval was requested.
    pub irrational_events: u64,
}

impl AttackState {
    pub fn new(n: usize, bounds: StealthBounds) -> Self {
        Self {
            theta: vec![false; n],
            xi: vec![vec![false; n]; n],
            burned: vec![false; n],
            offsets: vec![SharedMeasurement::default(); n],
            bounds,
            ever_activated: vec![false; n],
            irrational_events: 0,
        }
    }

    pub fn dg_count(&self) -> usize {
        self.theta.len()
    }

    pub fn any_active(&self) -> bool {
        self.theta.iter().any(|&t| t)
    }

    /// Recomputes `Ξ = θ · S` on the given topology.
    ///
    /// A cleaned DG still takes part in consensus, so links toward it are restored here.
    pub fn refresh_links(&mut self, topology: &CommTopology) {
        let n = self.dg_count();
        for k in 0..n {
            for l in 0..n {
                self.xi[k][l] = self.theta[k] && topology.is_link(k, l);
            }
        }
    }

    /// Checks the structural invariants.
    pub fn check(&self) -> Result<()> {
        for k in 0..self.dg_count() {
            if self.theta[k] && self.burned[k] {
                return Err(Error::Contract(format!("DG {k} both active and removed")));
            }
            if self.xi[k].iter().any(|&x| x) && !self.theta[k] {
                return Err(Error::Contract(format!("DG {k} injects without being compromised")));
            }
            if self.theta[k] && !is_stealthy(&self.offsets[k], &self.bounds) {
                return Err(Error::Contract(format!("DG {k} offset outside the stealth interval")));
            }
        }
        Ok(())
    }
}

/// Activates a stage's DGs on the current topology; removed DGs are skipped.
///
/// Returns the DGs that were newly activated.
pub fn activate_stage(state: &mut AttackState, stage: &AttackStage, topology: &CommTopology) -> Vec<usize> {
    let (offsets, clamped) = state.bounds.clamp(stage.offsets);
    if clamped {
        state.irrational_events += 1;
        warn!("stage offsets {:?} outside the stealth interval; clamped to {:?}", stage.offsets, offsets);
    }
    let mut activated = Vec::new();
    for &k in &stage.dgs {
        if state.burned[k] || state.ever_activated[k] {
            warn!("DG {} cannot be activated again; skipped", k + 1);
            continue;
        }
        state.theta[k] = true;
        state.ever_activated[k] = true;
        state.offsets[k] = offsets;
        activated.push(k);
    }
    state.refresh_links(topology);
    activated
}

/// Marks `dg` clean and permanently unusable for the attacker. Idempotent.
pub fn remove_malware(state: &mut AttackState, dg: usize) {
    state.theta[dg] = false;
    state.burned[dg] = true;
    state.offsets[dg] = SharedMeasurement::default();
    for row in state.xi.iter_mut() {
        row[dg] = false;
    }
    state.xi[dg].iter_mut().for_each(|x| *x = false);
}

/// Messages on every link after manipulation: `out[k][l]` is what `l` receives from `k`.
///
/// Only links in `Ξ ∩ S` carry offsets; everything else is copied unchanged.
pub fn inject(
    x_n: &[SharedMeasurement],
    state: &AttackState,
    topology: &CommTopology,
) -> Vec<Vec<SharedMeasurement>> {
    let n = x_n.len();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|l| {
                    if state.xi[k][l] && topology.is_link(k, l) {
                        let a = state.offsets[k];
                        SharedMeasurement {
                            omega: x_n[k].omega + a.omega,
                            power_share: x_n[k].power_share + a.power_share,
                            reactive_share: x_n[k].reactive_share + a.reactive_share,
                        }
                    } else {
                        x_n[k]
                    }
                })
                .collect()
        })
        .collect()
}

/// Schedule-driven attacker with reactive stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attacker {
    pub schedule: AttackSchedule,
    pub state: AttackState,
    /// Index of the next stage to fire.
    pub next_stage: usize,
    /// Time at which every exposed DG had been removed, if that is the case now.
    pub neutralized_since: Option<f64>,
}

impl Attacker {
    pub fn new(schedule: AttackSchedule, n: usize, bounds: StealthBounds) -> Result<Self> {
        schedule.validate(n)?;
        bounds.validate()?;
        Ok(Self { schedule, state: AttackState::new(n, bounds), next_stage: 0, neutralized_since: None })
    }

    pub fn finished(&self) -> bool {
        self.next_stage >= self.schedule.stages.len()
    }

    /// Every stage has fired and no DG is compromised any more.
    pub fn neutralized(&self) -> bool {
        self.finished() && !self.state.any_active()
    }

    /// Fires every stage whose trigger holds at time `t`; returns newly activated DGs.
    pub fn update(&mut self, t: f64, topology: &CommTopology) -> Vec<usize> {
        let mut activated = Vec::new();
        while let Some(stage) = self.schedule.stages.get(self.next_stage) {
            let due = match stage.trigger {
                StageTrigger::At { time } => t >= time - 1e-9,
                StageTrigger::Neutralized { delay } => {
                    self.neutralized_since.is_some_and(|since| t >= since + delay - 1e-9)
                }
            };
            if !due {
                break;
            }
            let stage = stage.clone();
            let fired = activate_stage(&mut self.state, &stage, topology);
            info!("t={t:.3}s attack stage {} activated DGs {:?}", self.next_stage + 1, fired);
            activated.extend(fired);
            self.next_stage += 1;
            self.neutralized_since = None;
        }
        activated
    }

    /// Removes malware from `dg` at time `t`.
    pub fn remove(&mut self, dg: usize, t: f64) {
        remove_malware(&mut self.state, dg);
        let exposed = self.state.ever_activated.iter().any(|&a| a);
        if exposed && !self.state.any_active() {
            self.neutralized_since.get_or_insert(t);
        }
    }

    pub fn on_topology_change(&mut self, topology: &CommTopology) {
        self.state.refresh_links(topology);
    }

    pub fn inject(&self, x_n: &[SharedMeasurement], topology: &CommTopology) -> Vec<Vec<SharedMeasurement>> {
        inject(x_n, &self.state, topology)
    }
}
