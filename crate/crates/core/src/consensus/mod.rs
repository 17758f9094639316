//! Secondary control: communication graphs, consensus rates and convergence diagnostics.

mod topology;

pub use topology::{
    build_laplacian, default_consensus_gain, enumerate_topologies, enumerate_topologies_with_pinning,
    lambda2, leader_pinning, min_consensus_gain, safe_consensus_gain, validate_topology, CommTopology,
    TopologyRecord, DEFAULT_CONSENSUS_GAIN, DEFAULT_PINNING_GAIN, MAX_ENUMERATED_DGS,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// The tuple a DG broadcasts to its neighbours each communication tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SharedMeasurement {
    pub omega: f64,
    /// `m_P · P`
    pub power_share: f64,
    /// `n_Q · Q`
    pub reactive_share: f64,
}

/// Consensus integrator rates `(δω̇_k, δv̇_k)` for DG `k`.
///
/// `received[l]` is what DG `k` received from DG `l` this tick, which may have been
/// tampered with; `None` entries (and entries where `s_kl = 0`) are skipped.
#[allow(clippy::too_many_arguments)]
pub fn consensus_rates(
    k: usize,
    received: &[Option<SharedMeasurement>],
    own: SharedMeasurement,
    s: &DMatrix<f64>,
    g: &[f64],
    k1: f64,
    k2: f64,
    omega_n: f64,
) -> (f64, f64) {
    let mut freq = g[k] * (omega_n - own.omega);
    let mut volt = 0.0;
    for (l, m) in received.iter().enumerate() {
        let Some(m) = m else { continue };
        let s_kl = s[(k, l)];
        if l == k || s_kl == 0.0 {
            continue;
        }
        freq += s_kl * (m.omega - own.omega) + s_kl * (m.power_share - own.power_share);
        volt += s_kl * (m.reactive_share - own.reactive_share);
    }
    (k1 * freq, k2 * volt)
}

/// Lyapunov candidate `½ Σ y_k²`.
pub fn lyapunov_value(y: &[f64]) -> f64 {
    0.5 * y.iter().map(|v| v * v).sum::<f64>()
}

/// Lyapunov coordinate of one DG relative to the restored operating point.
///
/// `ω*_k + m_Pk·P_k` shifted by the target `ω_n + m_Pk·P_k`, which leaves `ω*_k − ω_n`.
pub fn lyapunov_coordinate(omega_star: f64, power_share: f64, omega_n: f64) -> f64 {
    (omega_star + power_share) - (omega_n + power_share)
}

/// One sample of the quantities the diagnostic needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSample {
    pub time: f64,
    pub omega: Vec<f64>,
    pub power_share: Vec<f64>,
    pub reactive_share: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub max_frequency_error: f64,
    pub max_power_share_mismatch: f64,
    pub max_reactive_share_mismatch: f64,
    pub y: Vec<f64>,
    pub v: f64,
    pub v_dot: f64,
    /// Largest increase of `V` between consecutive samples.
    pub max_v_increase: f64,
}

fn max_pairwise(x: &[f64]) -> f64 {
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    if x.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Largest pairwise difference relative to the mean magnitude.
pub fn relative_mismatch(x: &[f64]) -> f64 {
    let mean = x.iter().map(|v| v.abs()).sum::<f64>() / x.len().max(1) as f64;
    if mean > 0.0 {
        max_pairwise(x) / mean
    } else {
        max_pairwise(x)
    }
}

/// Objectives and Lyapunov trend over a window; the objectives are taken at the last sample.
///
/// Returns `None` for windows shorter than two samples.
pub fn lyapunov_diagnostic(window: &[DiagnosticSample], omega_n: f64) -> Option<ConvergenceReport> {
    let [.., prev, last] = window else { return None };
    let v: Vec<f64> = window.iter().map(|s| lyapunov_value(&s.y)).collect();
    let dt = last.time - prev.time;
    let v_dot = if dt > 0.0 { (v[v.len() - 1] - v[v.len() - 2]) / dt } else { 0.0 };
    let max_v_increase = v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Some(ConvergenceReport {
        max_frequency_error: last.omega.iter().map(|w| (w - omega_n).abs()).fold(0.0, f64::max),
        max_power_share_mismatch: max_pairwise(&last.power_share),
        max_reactive_share_mismatch: max_pairwise(&last.reactive_share),
        y: last.y.clone(),
        v: v[v.len() - 1],
        v_dot,
        max_v_increase,
    })
}
