//! Primary control: droop characteristics and the cascaded voltage/current PI loops.

use super::params::{ControlGains, DgParams, DgState};
use crate::error::{Error, Result};

/// Droop characteristic shifted by the secondary corrections.
///
/// Returns `(omega_star, v_od_star)`.
pub fn droop_setpoints(p: f64, q: f64, params: &DgParams, delta_omega: f64, delta_v: f64) -> (f64, f64) {
    let omega_star = params.omega_n - params.m_p * p + delta_omega;
    let v_od_star = params.v_odn - params.n_q * q + delta_v;
    (omega_star, v_od_star)
}

/// Droop coefficients that make every DG hit the same excursion at its own rating.
///
/// `m_Pk · S_k = delta_omega_th` and `n_Qk · S_k = delta_v_th` for every `k`.
pub fn compute_droop_coeffs(
    delta_omega_th: f64,
    delta_v_th: f64,
    ratings: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(delta_omega_th > 0.0 && delta_v_th > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "droop thresholds must be > 0 (got {delta_omega_th}, {delta_v_th})"
        )));
    }
    if let Some((k, r)) = ratings.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::InvalidParameter(format!("rating of DG {} must be > 0, got {r}", k + 1)));
    }
    let m_p = ratings.iter().map(|r| delta_omega_th / r).collect();
    let n_q = ratings.iter().map(|r| delta_v_th / r).collect();
    Ok((m_p, n_q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageLoopOutput {
    pub i_id_ref: f64,
    pub i_iq_ref: f64,
    pub phi_d_rate: f64,
    pub phi_q_rate: f64,
}

/// Outer voltage loop with capacitor cross-coupling compensation.
pub fn voltage_loop(
    state: &DgState,
    omega: f64,
    v_od_ref: f64,
    v_oq_ref: f64,
    gains: &ControlGains,
    params: &DgParams,
) -> VoltageLoopOutput {
    let err_d = v_od_ref - state.v_od;
    let err_q = v_oq_ref - state.v_oq;
    VoltageLoopOutput {
        i_id_ref: state.i_od - omega * params.c_f * state.v_oq + gains.k_pv * err_d + gains.k_iv * state.phi_d,
        i_iq_ref: state.i_oq + omega * params.c_f * state.v_od + gains.k_pv * err_q + gains.k_iv * state.phi_q,
        phi_d_rate: err_d,
        phi_q_rate: err_q,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentLoopOutput {
    pub v_id_ref: f64,
    pub v_iq_ref: f64,
    pub gamma_d_rate: f64,
    pub gamma_q_rate: f64,
}

/// Inner current loop tracking the inverter-side currents, with filter-inductor decoupling.
pub fn current_loop(
    state: &DgState,
    omega: f64,
    i_id_ref: f64,
    i_iq_ref: f64,
    gains: &ControlGains,
    params: &DgParams,
) -> CurrentLoopOutput {
    let err_d = i_id_ref - state.i_id;
    let err_q = i_iq_ref - state.i_iq;
    CurrentLoopOutput {
        v_id_ref: state.v_od - omega * params.l_f * state.i_iq + gains.k_pi * err_d + gains.k_ii * state.gamma_d,
        v_iq_ref: state.v_oq + omega * params.l_f * state.i_id + gains.k_pi * err_q + gains.k_ii * state.gamma_q,
        gamma_d_rate: err_d,
        gamma_q_rate: err_q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> DgParams {
        DgParams::default()
    }

    #[test]
    fn droop_at_zero_load_is_nominal() {
        let p = table();
        let (w, v) = droop_setpoints(0.0, 0.0, &p, 0.0, 0.0);
        assert!((w - 314.159_265_358_979_3).abs() < 1e-9);
        assert_eq!(v, p.v_odn);
    }

    #[test]
    fn droop_at_rated_power_and_restoration() {
        let p = table();
        let (w, _) = droop_setpoints(10_000.0, 0.0, &p, 0.0, 0.0);
        assert!((w - (p.omega_n - 1.0)).abs() < 1e-12);
        assert!((w - 313.159_265).abs() < 1e-6);
        let (w, _) = droop_setpoints(10_000.0, 0.0, &p, 1.0, 0.0);
        assert!((w - p.omega_n).abs() < 1e-12);
    }

    #[test]
    fn droop_coefficients_from_thresholds() {
        let (mp, nq) = compute_droop_coeffs(1.0, 1.0, &[10_000.0]).unwrap();
        assert!((mp[0] - 1e-4).abs() < 1e-18);
        assert!((nq[0] - 1e-4).abs() < 1e-18);

        let (mp, _) = compute_droop_coeffs(1.0, 1.0, &[10_000.0, 10_000.0]).unwrap();
        assert_eq!(mp[0], mp[1]);

        let (mp, nq) = compute_droop_coeffs(1.0, 2.0, &[10_000.0, 20_000.0]).unwrap();
        assert!((mp[0] - 2.0 * mp[1]).abs() < 1e-18);
        assert!((nq[0] * 10_000.0 - nq[1] * 20_000.0).abs() < 1e-12);
    }

    #[test]
    fn droop_coefficients_reject_bad_ratings() {
        assert!(compute_droop_coeffs(1.0, 1.0, &[10_000.0, 0.0]).is_err());
        assert!(compute_droop_coeffs(1.0, 1.0, &[-5.0]).is_err());
        assert!(compute_droop_coeffs(0.0, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn voltage_loop_zero_error() {
        let p = table();
        let g = ControlGains::default();
        let s = DgState { v_od: 381.0, ..Default::default() };
        let out = voltage_loop(&s, p.omega_n, 381.0, 0.0, &g, &p);
        assert_eq!(out.i_id_ref, 0.0);
        assert_eq!(out.phi_d_rate, 0.0);
    }

    #[test]
    fn voltage_loop_cross_coupling_and_integrator_rate() {
        let p = table();
        let g = ControlGains::default();
        let s = DgState { v_od: 370.0, v_oq: 5.0, ..Default::default() };
        let out = voltage_loop(&s, p.omega_n, 381.0, 5.0, &g, &p);
        assert_eq!(out.phi_d_rate, 11.0);
        let expected = -p.omega_n * p.c_f * 5.0 + g.k_pv * 11.0;
        assert!((out.i_id_ref - expected).abs() < 1e-12);
    }

    #[test]
    fn current_loop_zero_error_passes_voltage_through() {
        let p = table();
        let g = ControlGains::default();
        let s = DgState { v_od: 381.0, i_id: 7.0, ..Default::default() };
        let out = current_loop(&s, p.omega_n, 7.0, 0.0, &g, &p);
        assert_eq!(out.v_id_ref, 381.0);
        assert_eq!(out.gamma_d_rate, 0.0);
    }

    #[test]
    fn current_loop_cross_coupling() {
        let p = table();
        let g = ControlGains::default();
        let s = DgState { i_id: 2.0, i_iq: 3.0, ..Default::default() };
        let out = current_loop(&s, p.omega_n, 2.0, 3.0, &g, &p);
        assert!((out.v_id_ref + p.omega_n * p.l_f * 3.0).abs() < 1e-12);
        assert_eq!(out.gamma_d_rate, 0.0);
        assert!((out.v_iq_ref - p.omega_n * p.l_f * 2.0).abs() < 1e-12);
    }
}
