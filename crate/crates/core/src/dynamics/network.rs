//! Quasi-static phasor model of the distribution network between DG terminals.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series resistance (Ω).
    pub r: f64,
    /// Series inductance (H).
    pub l: f64,
}

/// Series RL load to ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: usize,
    pub r: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkModel {
    pub buses: usize,
    pub lines: Vec<Line>,
    pub loads: Vec<Load>,
    /// Bus index of each DG, in DG order.
    pub dg_bus: Vec<usize>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self::radial_four_bus()
    }
}

impl NetworkModel {
    pub const TYPE_I: (f64, f64) = (0.1, 1.5e-3);
    pub const TYPE_II: (f64, f64) = (0.07, 0.5e-3);

    /// Radial DG1–DG2–DG3–DG4 feeder with RL loads at buses 1 and 3.
    pub fn radial_four_bus() -> Self {
        let line = |from, to, (r, l): (f64, f64)| Line { from, to, r, l };
        Self {
            buses: 4,
            lines: vec![line(0, 1, Self::TYPE_I), line(1, 2, Self::TYPE_II), line(2, 3, Self::TYPE_I)],
            loads: vec![Load { bus: 0, r: 20.0, l: 20e-3 }, Load { bus: 2, r: 20.0, l: 20e-3 }],
            dg_bus: vec![0, 1, 2, 3],
        }
    }

    pub fn dg_count(&self) -> usize {
        self.dg_bus.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.buses == 0 {
            return Err(Error::Config("network needs at least one bus".into()));
        }
        let in_range = |b: usize, what: &str| {
            if b < self.buses {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} references bus {b} but the network has {} buses", self.buses)))
            }
        };
        for line in &self.lines {
            in_range(line.from, "line")?;
            in_range(line.to, "line")?;
            if line.from == line.to {
                return Err(Error::Config(format!("line {}-{} is a self loop", line.from, line.to)));
            }
            if !(line.r > 0.0 && line.l > 0.0) {
                return Err(Error::Config(format!("line {}-{} needs positive impedance", line.from, line.to)));
            }
        }
        for load in &self.loads {
            in_range(load.bus, "load")?;
            if !(load.r > 0.0 && load.l >= 0.0) {
                return Err(Error::Config(format!("load at bus {} needs r > 0 and l >= 0", load.bus)));
            }
        }
        for &b in &self.dg_bus {
            in_range(b, "DG mapping")?;
        }
        // electrical connectivity
        let mut parent: Vec<usize> = (0..self.buses).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for line in &self.lines {
            let (a, b) = (find(&mut parent, line.from), find(&mut parent, line.to));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        if (0..self.buses).any(|b| find(&mut parent, b) != root) {
            return Err(Error::Config("electrical network is not connected".into()));
        }
        Ok(())
    }

    /// Nodal admittance matrix at angular frequency `omega`.
    pub fn admittance(&self, omega: f64) -> DMatrix<C64> {
        let mut y = DMatrix::<C64>::zeros(self.buses, self.buses);
        for line in &self.lines {
            let ys = C64::new(line.r, omega * line.l).inv();
            y[(line.from, line.from)] += ys;
            y[(line.to, line.to)] += ys;
            y[(line.from, line.to)] -= ys;
            y[(line.to, line.from)] -= ys;
        }
        for load in &self.loads {
            y[(load.bus, load.bus)] += C64::new(load.r, omega * load.l).inv();
        }
        y
    }

    /// Bus voltages (common frame, complex `d + jq`) for given complex bus injections.
    pub fn bus_voltages(&self, injections: &[C64], omega: f64) -> Result<Vec<C64>> {
        let y = self.admittance(omega);
        let rhs = DVector::from_column_slice(injections);
        let lu = y.lu();
        let v = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Config("singular network admittance matrix".into()))?;
        Ok(v.iter().copied().collect())
    }

    /// Real power consumed by loads and dissipated in lines for the given bus voltages (W, dq scaling).
    pub fn consumption(&self, v_bus: &[C64], omega: f64) -> (f64, f64) {
        let mut loads = 0.0;
        for load in &self.loads {
            let v = v_bus[load.bus];
            let i = v / C64::new(load.r, omega * load.l);
            loads += 1.5 * load.r * i.norm_sqr();
        }
        let mut losses = 0.0;
        for line in &self.lines {
            let i = (v_bus[line.from] - v_bus[line.to]) / C64::new(line.r, omega * line.l);
            losses += 1.5 * line.r * i.norm_sqr();
        }
        (loads, losses)
    }
}

/// Rotates DG-frame currents into the common frame and sums them per bus.
fn injections(net: &NetworkModel, dg_currents: &[(f64, f64)], angles: &[f64]) -> Vec<C64> {
    let mut inj = vec![C64::new(0.0, 0.0); net.buses];
    for (k, (&(d, q), &angle)) in dg_currents.iter().zip(angles).enumerate() {
        inj[net.dg_bus[k]] += C64::new(d, q) * C64::from_polar(1.0, angle);
    }
    inj
}

/// Solves the network for the terminal bus voltage seen by each DG, in that DG's own dq frame.
pub fn network_solve(
    dg_currents: &[(f64, f64)],
    angles: &[f64],
    net: &NetworkModel,
    omega_common: f64,
) -> Result<Vec<(f64, f64)>> {
    if dg_currents.len() != net.dg_count() || angles.len() != net.dg_count() {
        return Err(Error::Contract(format!(
            "network has {} DGs but got {} currents and {} angles",
            net.dg_count(),
            dg_currents.len(),
            angles.len()
        )));
    }
    let v = net.bus_voltages(&injections(net, dg_currents, angles), omega_common)?;
    Ok(net
        .dg_bus
        .iter()
        .zip(angles)
        .map(|(&b, &angle)| {
            let local = v[b] * C64::from_polar(1.0, -angle);
            (local.re, local.im)
        })
        .collect())
}

/// Driving-point and transfer impedances between DG terminals, factorised once per time step.
#[derive(Debug, Clone)]
pub(crate) struct TerminalImpedance {
    z: Vec<C64>,
    n: usize,
}

impl TerminalImpedance {
    pub(crate) fn new(net: &NetworkModel, omega: f64) -> Result<Self> {
        let n = net.dg_count();
        let y = net.admittance(omega);
        let inv = y
            .try_inverse()
            .ok_or_else(|| Error::Config("singular network admittance matrix".into()))?;
        let mut z = Vec::with_capacity(n * n);
        for &a in &net.dg_bus {
            for &b in &net.dg_bus {
                z.push(inv[(a, b)]);
            }
        }
        Ok(Self { z, n })
    }

    /// Same result as [`network_solve`] using the cached impedance matrix.
    pub(crate) fn solve_into(&self, dg_currents: &[(f64, f64)], angles: &[f64], out: &mut [(f64, f64)]) {
        let n = self.n;
        let rot: Vec<C64> = angles.iter().map(|&a| C64::from_polar(1.0, a)).collect();
        let inj: Vec<C64> = dg_currents.iter().zip(&rot).map(|(&(d, q), r)| C64::new(d, q) * r).collect();
        for k in 0..n {
            let mut v = C64::new(0.0, 0.0);
            for j in 0..n {
                v += self.z[k * n + j] * inj[j];
            }
            let local = v * rot[k].conj();
            out[k] = (local.re, local.im);
        }
    }
}
