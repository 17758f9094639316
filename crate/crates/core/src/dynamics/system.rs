use serde::{Deserialize, Serialize};

use super::control::{current_loop, droop_setpoints, voltage_loop};
use super::integrator::{rk4_step, Rk4Workspace};
use super::network::{NetworkModel, TerminalImpedance};
use super::params::{ControlGains, DgParams, DgState};
use super::plant::plant_derivatives;
use super::power::{instantaneous_power, measure_power, DEFAULT_FILTER_CUTOFF};
use crate::error::{Error, Result};

/// Everything about the physical system that does not change while it runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub dgs: Vec<DgParams>,
    pub gains: ControlGains,
    pub network: NetworkModel,
    /// Integration step (s).
    pub dt: f64,
    /// Power filter cutoff (rad/s).
    pub filter_cutoff: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::four_dg_default()
    }
}

impl PlantConfig {
    pub fn four_dg_default() -> Self {
        Self {
            dgs: vec![DgParams::default(); 4],
            gains: ControlGains::default(),
            network: NetworkModel::radial_four_bus(),
            dt: 1e-4,
            filter_cutoff: DEFAULT_FILTER_CUTOFF,
        }
    }

    pub fn dg_count(&self) -> usize {
        self.dgs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dgs.is_empty() {
            return Err(Error::Config("at least one DG is required".into()));
        }
        for p in &self.dgs {
            p.validate()?;
        }
        self.gains.validate()?;
        self.network.validate()?;
        if self.network.dg_count() != self.dgs.len() {
            return Err(Error::Config(format!(
                "network maps {} DGs but {} DG parameter sets were given",
                self.network.dg_count(),
                self.dgs.len()
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.filter_cutoff > 0.0) {
            return Err(Error::InvalidParameter("filter cutoff must be > 0".into()));
        }
        Ok(())
    }
}

/// Full continuous state of the microgrid plus the held secondary-control rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Completed integration steps; simulated time is `steps · dt`.
    pub steps: u64,
    pub dgs: Vec<DgState>,
    /// `(dδω/dt, dδv/dt)` per DG, held constant between communication ticks.
    pub secondary_rates: Vec<(f64, f64)>,
}

impl SystemState {
    /// Flat start: every output capacitor charged to its nominal voltage, all currents zero.
    pub fn flat_start(config: &PlantConfig) -> Self {
        Self {
            steps: 0,
            dgs: config
                .dgs
                .iter()
                .map(|p| DgState { v_od: p.v_odn, ..Default::default() })
                .collect(),
            secondary_rates: vec![(0.0, 0.0); config.dg_count()],
        }
    }

    pub fn time(&self, dt: f64) -> f64 {
        self.steps as f64 * dt
    }
}

/// Frequency of DG `k` as set by its droop law.
pub fn dg_omega(params: &DgParams, state: &DgState) -> f64 {
    droop_setpoints(state.p, state.q, params, state.delta_omega, 0.0).0
}

/// Reusable buffers for [`integrate_step`].
#[derive(Debug, Default, Clone)]
pub struct StepWorkspace {
    rk: Rk4Workspace,
    y: Vec<f64>,
    currents: Vec<(f64, f64)>,
    angles: Vec<f64>,
    v_bus: Vec<(f64, f64)>,
}

/// Advances the microgrid by one fixed RK4 step of length `dt`.
///
/// Filtered powers are held over the step and updated afterwards from the
/// new electrical state; secondary corrections integrate their held rates.
pub fn integrate_step(state: &SystemState, config: &PlantConfig, dt: f64, ws: &mut StepWorkspace) -> Result<SystemState> {
    let n = config.dg_count();
    const M: usize = DgState::ODE_LEN;
    let omega_ref = dg_omega(&config.dgs[0], &state.dgs[0]);
    if !omega_ref.is_finite() || state.dgs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Diverged { time: state.time(dt), detail: "non-finite state before step".into() });
    }
    let z = TerminalImpedance::new(&config.network, omega_ref)?;

    ws.y.clear();
    for dg in &state.dgs {
        ws.y.extend_from_slice(&dg.to_ode());
    }
    ws.currents.resize(n, (0.0, 0.0));
    ws.angles.resize(n, 0.0);
    ws.v_bus.resize(n, (0.0, 0.0));

    let StepWorkspace { rk, y, currents, angles, v_bus } = ws;
    let gains = &config.gains;
    rk4_step(y, dt, rk, |y, dy| {
        for k in 0..n {
            let base = k * M;
            currents[k] = (y[base + 4], y[base + 5]);
            angles[k] = y[base + 12];
        }
        z.solve_into(currents, angles, v_bus);
        let mut omega_com = 0.0;
        for k in 0..n {
            let params = &config.dgs[k];
            let s = state.dgs[k].with_ode(&y[k * M..(k + 1) * M]);
            let (omega, v_od_ref) = droop_setpoints(s.p, s.q, params, s.delta_omega, s.delta_v);
            if k == 0 {
                omega_com = omega;
            }
            let vl = voltage_loop(&s, omega, v_od_ref, 0.0, gains, params);
            let cl = current_loop(&s, omega, vl.i_id_ref, vl.i_iq_ref, gains, params);
            let (v_bd, v_bq) = v_bus[k];
            let plant = plant_derivatives(&s, cl.v_id_ref, cl.v_iq_ref, v_bd, v_bq, omega, params);
            let out = &mut dy[k * M..(k + 1) * M];
            out[..6].copy_from_slice(&plant);
            out[6] = vl.phi_d_rate;
            out[7] = vl.phi_q_rate;
            out[8] = cl.gamma_d_rate;
            out[9] = cl.gamma_q_rate;
            out[10] = state.secondary_rates[k].0;
            out[11] = state.secondary_rates[k].1;
            out[12] = omega - omega_com;
        }
    });

    let mut next = state.clone();
    next.steps += 1;
    for (k, dg) in next.dgs.iter_mut().enumerate() {
        *dg = dg.with_ode(&y[k * M..(k + 1) * M]);
        let (p, q) = measure_power(dg.v_od, dg.v_oq, dg.i_od, dg.i_oq, dg.p, dg.q, dt, config.filter_cutoff);
        dg.p = p;
        dg.q = q;
        if !dg.is_finite() {
            return Err(Error::Diverged {
                time: next.time(dt),
                detail: format!("non-finite state in DG {}", k + 1),
            });
        }
    }
    Ok(next)
}

/// Owned plant + state, stepping at the configured `dt`.
#[derive(Debug, Clone)]
pub struct Microgrid {
    pub config: PlantConfig,
    pub state: SystemState,
    ws: StepWorkspace,
}

impl Microgrid {
    pub fn new(config: PlantConfig) -> Result<Self> {
        config.validate()?;
        let state = SystemState::flat_start(&config);
        Ok(Self { config, state, ws: StepWorkspace::default() })
    }

    pub fn from_state(config: PlantConfig, state: SystemState) -> Result<Self> {
        config.validate()?;
        if state.dgs.len() != config.dg_count() || state.secondary_rates.len() != config.dg_count() {
            return Err(Error::Config("state does not match the plant's DG count".into()));
        }
        Ok(Self { config, state, ws: StepWorkspace::default() })
    }

    pub fn time(&self) -> f64 {
        self.state.time(self.config.dt)
    }

    pub fn dg_count(&self) -> usize {
        self.config.dg_count()
    }

    pub fn step(&mut self) -> Result<()> {
        self.state = integrate_step(&self.state, &self.config, self.config.dt, &mut self.ws)?;
        Ok(())
    }

    pub fn run_for(&mut self, seconds: f64) -> Result<()> {
        let steps = (seconds / self.config.dt).round() as u64;
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn set_secondary_rates(&mut self, rates: &[(f64, f64)]) {
        self.state.secondary_rates.copy_from_slice(rates);
    }

    pub fn omega(&self, k: usize) -> f64 {
        dg_omega(&self.config.dgs[k], &self.state.dgs[k])
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.dg_count()).map(|k| self.omega(k)).collect()
    }

    /// `m_Pk · P_k` for DG `k`.
    pub fn power_share(&self, k: usize) -> f64 {
        self.config.dgs[k].m_p * self.state.dgs[k].p
    }

    /// `n_Qk · Q_k` for DG `k`.
    pub fn reactive_share(&self, k: usize) -> f64 {
        self.config.dgs[k].n_q * self.state.dgs[k].q
    }

    /// Instantaneous real power leaving each DG's filter capacitor.
    pub fn instantaneous_real_power(&self) -> Vec<f64> {
        self.state
            .dgs
            .iter()
            .map(|s| instantaneous_power(s.v_od, s.v_oq, s.i_od, s.i_oq).0)
            .collect()
    }

    /// `(load consumption, line losses, coupling-line losses)` for the current state.
    pub fn power_balance(&self) -> Result<(f64, f64, f64)> {
        use nalgebra::Complex;
        let net = &self.config.network;
        let currents: Vec<(f64, f64)> = self.state.dgs.iter().map(|s| (s.i_od, s.i_oq)).collect();
        let angles: Vec<f64> = self.state.dgs.iter().map(|s| s.delta_angle).collect();
        let mut inj = vec![Complex::new(0.0, 0.0); net.buses];
        for (k, (&(d, q), &a)) in currents.iter().zip(&angles).enumerate() {
            inj[net.dg_bus[k]] += Complex::new(d, q) * Complex::from_polar(1.0, a);
        }
        let omega = self.omega(0);
        let v = net.bus_voltages(&inj, omega)?;
        let (loads, lines) = net.consumption(&v, omega);
        let coupling = self
            .state
            .dgs
            .iter()
            .zip(&self.config.dgs)
            .map(|(s, p)| 1.5 * p.r_c * (s.i_od * s.i_od + s.i_oq * s.i_oq))
            .sum();
        Ok((loads, lines, coupling))
    }
}
