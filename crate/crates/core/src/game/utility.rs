use serde::{Deserialize, Serialize};

use crate::consensus::CommTopology;
use crate::error::{Error, Result};

/// Channels monitored per DG: ω, v_od and m_P·P.
pub const MONITORED_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    /// Cost charged to the attacker per newly exposed DG.
    pub sigma_unit: f64,
    /// Link-cost weight ϱ.
    pub rho: f64,
    pub gamma: f64,
    /// Length of the trailing window used to count oscillations, in seconds.
    pub oscillation_window: f64,
    /// Swing a signal must make, relative to its channel nominal, to count as a turning point.
    pub oscillation_floor: f64,
    /// Per-DG anomaly residual above which the DG is flagged.
    pub anomaly_threshold: f64,
    /// Consecutive flagged epochs before an automatic malware scan.
    pub scan_after: u32,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            sigma_unit: 1.0,
            rho: 0.001,
            gamma: 0.95,
            oscillation_window: 0.1,
            oscillation_floor: 1e-4,
            anomaly_threshold: 1e-3,
            scan_after: 2,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.sigma_unit >= 0.0 && self.sigma_unit.is_finite()) {
            return bad("sigma_unit must be finite and nonnegative");
        }
        if !(self.oscillation_window > 0.0) || !(self.oscillation_floor >= 0.0) {
            return bad("oscillation window must be positive and floor nonnegative");
        }
        if !(self.anomaly_threshold > 0.0) || self.scan_after == 0 {
            return bad("anomaly threshold must be positive and scan_after at least 1");
        }
        Ok(())
    }
}

/// `|p_c − p_n| / p_n`.
pub fn relative_error(p_c: f64, p_n: f64) -> Result<f64> {
    if !(p_n > 0.0) {
        return Err(Error::Config(format!("channel nominal must be positive, got {p_n}")));
    }
    Ok((p_c - p_n).abs() / p_n)
}

/// Oscillation count and mean peak-to-peak swing of a sampled channel.
///
/// Turning points are confirmed once the signal retreats from its running extreme by more
/// than `floor`; each pair of turning points is one oscillation.
pub fn count_oscillations_with_floor(samples: &[f64], floor: f64) -> (f64, f64) {
    let Some(&first) = samples.first() else { return (0.0, 0.0) };
    // direction: 0 unknown, +1 rising, -1 falling
    let mut dir = 0i8;
    let (mut hi, mut lo) = (first, first);
    let mut extreme = first;
    let mut turns: Vec<f64> = Vec::new();
    for &x in &samples[1..] {
        match dir {
            0 => {
                hi = hi.max(x);
                lo = lo.min(x);
                if x - lo > floor && x >= hi {
                    dir = 1;
                    extreme = x;
                } else if hi - x > floor && x <= lo {
                    dir = -1;
                    extreme = x;
                }
            }
            1 => {
                if x > extreme {
                    extreme = x;
                } else if extreme - x > floor {
                    turns.push(extreme);
                    dir = -1;
                    extreme = x;
                }
            }
            _ => {
                if x < extreme {
                    extreme = x;
                } else if x - extreme > floor {
                    turns.push(extreme);
                    dir = 1;
                    extreme = x;
                }
            }
        }
    }
    let z = (turns.len() / 2) as f64;
    let p_a = if turns.len() >= 2 {
        turns.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (turns.len() - 1) as f64
    } else {
        0.0
    };
    (z, p_a)
}

/// [`count_oscillations_with_floor`] with a floor of `1e-9` times the signal's magnitude.
pub fn count_oscillations(samples: &[f64]) -> (f64, f64) {
    let scale = samples.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    count_oscillations_with_floor(samples, 1e-9 * scale)
}

/// `(N_l, N_c, C_c)`: active directed links, compromised DGs and links stemming from them.
pub fn link_counts(topology: &CommTopology, theta: &[bool]) -> (usize, usize, usize) {
    let n = topology.node_count();
    let n_l = topology.directed_links();
    assert!(n_l <= max_links(n), "{n_l} links exceed the bound for {n} DGs");
    let n_c = theta.iter().filter(|&&t| t).count();
    (n_l, n_c, n_c * n.saturating_sub(1))
}

/// Upper bound `N² − N` on directed links.
pub fn max_links(n: usize) -> usize {
    n * n - n
}

/// Oscillation and magnitude measurements of one channel of one DG.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub z: f64,
    pub p_a: f64,
    pub p_n: f64,
    pub p_c: f64,
}

/// Everything the utilities depend on for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityInputs {
    pub delta_omega: Vec<f64>,
    pub delta_v: Vec<f64>,
    pub omega_n: f64,
    pub v_odn: f64,
    /// Per DG, per monitored channel.
    pub channels: Vec<[ChannelMetrics; MONITORED_CHANNELS]>,
    pub n_l: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    /// `Σ (|δω_k|/ω_n + |δv_k|/v_odn)`
    pub sum_delta: f64,
    pub z: Vec<[f64; MONITORED_CHANNELS]>,
    pub p_a: Vec<[f64; MONITORED_CHANNELS]>,
    pub p_n: Vec<[f64; MONITORED_CHANNELS]>,
    pub p_c: Vec<[f64; MONITORED_CHANNELS]>,
    pub p_r: Vec<[f64; MONITORED_CHANNELS]>,
    /// `ΣΣ (z·p_a/p_n + p_r)`
    pub channel_terms: f64,
    pub n_l: usize,
    pub n_c: usize,
    pub c_c: usize,
    pub sigma: f64,
    pub u_r: f64,
    pub u_d: f64,
}

fn delta_sum(inp: &UtilityInputs) -> Result<f64> {
    if !(inp.omega_n > 0.0 && inp.v_odn > 0.0) {
        return Err(Error::Config("nominal frequency and voltage must be positive".into()));
    }
    Ok(inp
        .delta_omega
        .iter()
        .zip(&inp.delta_v)
        .map(|(w, v)| w.abs() / inp.omega_n + v.abs() / inp.v_odn)
        .sum())
}

fn channel_sum(inp: &UtilityInputs) -> Result<f64> {
    let mut total = 0.0;
    for dg in &inp.channels {
        for c in dg {
            total += c.z * c.p_a / c.p_n + relative_error(c.p_c, c.p_n)?;
        }
    }
    Ok(total)
}

/// Attacker reward: `Σ(δω + δv) + ΣΣ(z·p_a/p_n + p_r) + ϱ·N_l − σ`.
pub fn attacker_utility(inp: &UtilityInputs, rho: f64) -> Result<f64> {
    Ok(delta_sum(inp)? + channel_sum(inp)? + rho * inp.n_l as f64 - inp.sigma)
}

/// Defender reward, the exact negation of [`attacker_utility`].
pub fn defender_utility(inp: &UtilityInputs, rho: f64) -> Result<f64> {
    Ok(-attacker_utility(inp, rho)?)
}

pub fn breakdown(inp: &UtilityInputs, theta: &[bool], rho: f64) -> Result<UtilityBreakdown> {
    let map = |f: fn(&ChannelMetrics) -> f64| -> Vec<[f64; MONITORED_CHANNELS]> {
        inp.channels.iter().map(|dg| dg.map(|c| f(&c))).collect()
    };
    let p_r = inp
        .channels
        .iter()
        .map(|dg| {
            let mut out = [0.0; MONITORED_CHANNELS];
            for (o, c) in out.iter_mut().zip(dg) {
                *o = relative_error(c.p_c, c.p_n)?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = theta.len();
    let n_c = theta.iter().filter(|&&t| t).count();
    let u_r = attacker_utility(inp, rho)?;
    Ok(UtilityBreakdown {
        sum_delta: delta_sum(inp)?,
        z: map(|c| c.z),
        p_a: map(|c| c.p_a),
        p_n: map(|c| c.p_n),
        p_c: map(|c| c.p_c),
        p_r,
        channel_terms: channel_sum(inp)?,
        n_l: inp.n_l,
        n_c,
        c_c: n_c * n.saturating_sub(1),
        sigma: inp.sigma,
        u_r,
        u_d: -u_r,
    })
}
