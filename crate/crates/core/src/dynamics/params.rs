use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electrical parameters of one inverter-interfaced distributed generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgParams {
    /// Filter resistance (Ω).
    pub r_f: f64,
    /// Filter inductance (H).
    pub l_f: f64,
    /// Filter capacitance (F).
    pub c_f: f64,
    /// Coupling line resistance (Ω).
    pub r_c: f64,
    /// Coupling line inductance (H).
    pub l_c: f64,
    /// Frequency droop coefficient (rad/s per W).
    pub m_p: f64,
    /// Voltage droop coefficient (V per var).
    pub n_q: f64,
    /// Apparent power rating (VA).
    pub s_rating: f64,
    /// Nominal angular frequency (rad/s).
    pub omega_n: f64,
    /// Nominal d-axis output voltage (V).
    pub v_odn: f64,
    /// DC-link voltage (V).
    pub v_dc: f64,
    /// Switching frequency (Hz). Carried as metadata; the inverter model is averaged.
    pub f_sw: f64,
}

impl Default for DgParams {
    fn default() -> Self {
        Self {
            r_f: 0.1,
            l_f: 4e-3,
            c_f: 200e-6,
            r_c: 0.1,
            l_c: 1.5e-3,
            m_p: 1e-4,
            n_q: 1e-4,
            s_rating: 10_000.0,
            omega_n: 2.0 * PI * 50.0,
            v_odn: 381.0,
            v_dc: 1000.0,
            f_sw: 10_000.0,
        }
    }
}

impl DgParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("r_f", self.r_f),
            ("l_f", self.l_f),
            ("c_f", self.c_f),
            ("r_c", self.r_c),
            ("l_c", self.l_c),
            ("m_p", self.m_p),
            ("n_q", self.n_q),
            ("s_rating", self.s_rating),
            ("omega_n", self.omega_n),
            ("v_odn", self.v_odn),
            ("v_dc", self.v_dc),
            ("f_sw", self.f_sw),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "DG parameter `{name}` must be finite and > 0, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Droop-induced frequency excursion at rated power, `m_P · S`.
    pub fn omega_band(&self) -> f64 {
        self.m_p * self.s_rating
    }

    /// Droop-induced voltage excursion at rated reactive power, `n_Q · S`.
    pub fn voltage_band(&self) -> f64 {
        self.n_q * self.s_rating
    }
}

/// Inner/outer loop PI gains and the secondary consensus gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGains {
    pub k_pv: f64,
    pub k_iv: f64,
    pub k_pi: f64,
    pub k_ii: f64,
    /// Frequency consensus gain.
    pub k1: f64,
    /// Voltage consensus gain. Kept equal to `k1`.
    pub k2: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            k_pv: 0.5,
            k_iv: 390.0,
            k_pi: 10.5,
            k_ii: 16_000.0,
            k1: 0.0,
            k2: 0.0,
        }
    }
}

impl ControlGains {
    pub fn with_consensus_gain(mut self, k: f64) -> Self {
        self.k1 = k;
        self.k2 = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("k_pv", self.k_pv),
            ("k_iv", self.k_iv),
            ("k_pi", self.k_pi),
            ("k_ii", self.k_ii),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "control gain `{name}` must be finite and > 0, got {value}"
                )));
            }
        }
        // Zero consensus gains are legal: they disable secondary control.
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::InvalidParameter(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if self.k1 != self.k2 {
            return Err(Error::InvalidParameter(format!(
                "consensus gains must satisfy k1 = k2 (got {} and {})",
                self.k1, self.k2
            )));
        }
        Ok(())
    }
}

/// Per-DG continuous state in the DG's own rotating dq frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DgState {
    pub i_id: f64,
    pub i_iq: f64,
    pub v_od: f64,
    pub v_oq: f64,
    pub i_od: f64,
    pub i_oq: f64,
    pub phi_d: f64,
    pub phi_q: f64,
    pub gamma_d: f64,
    pub gamma_q: f64,
    /// Low-pass filtered real power (W).
    pub p: f64,
    /// Low-pass filtered reactive power (var).
    pub q: f64,
    pub delta_omega: f64,
    pub delta_v: f64,
    /// Angle of this DG's frame relative to the common reference frame (rad).
    pub delta_angle: f64,
}

impl DgState {
    /// Number of entries advanced by the ODE integrator (everything except `p`, `q`).
    pub const ODE_LEN: usize = 13;

    pub fn is_finite(&self) -> bool {
        self.to_ode().iter().all(|v| v.is_finite()) && self.p.is_finite() && self.q.is_finite()
    }

    pub(crate) fn to_ode(self) -> [f64; Self::ODE_LEN] {
        [
            self.i_id,
            self.i_iq,
            self.v_od,
            self.v_oq,
            self.i_od,
            self.i_oq,
            self.phi_d,
            self.phi_q,
            self.gamma_d,
            self.gamma_q,
            self.delta_omega,
            self.delta_v,
            self.delta_angle,
        ]
    }

    pub(crate) fn with_ode(mut self, y: &[f64]) -> Self {
        self.i_id = y[0];
        self.i_iq = y[1];
        self.v_od = y[2];
        self.v_oq = y[3];
        self.i_od = y[4];
        self.i_oq = y[5];
        self.phi_d = y[6];
        self.phi_q = y[7];
        self.gamma_d = y[8];
        self.gamma_q = y[9];
        self.delta_omega = y[10];
        self.delta_v = y[11];
        self.delta_angle = y[12];
        self
    }
}
