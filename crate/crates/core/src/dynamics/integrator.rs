/// Scratch buffers for allocation-free classical RK4 steps.
#[derive(Debug, Clone, Default)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        let mut ws = Self::default();
        ws.resize(n);
        ws
    }

    fn resize(&mut self, n: usize) {
        for buf in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            buf.resize(n, 0.0);
        }
    }
}

/// Classical fourth-order Runge-Kutta step for an autonomous system `y' = f(y)`.
///
/// `f(y, dy)` writes the derivative of `y` into `dy`.
pub fn rk4_step<F>(y: &mut [f64], dt: f64, ws: &mut Rk4Workspace, mut f: F)
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = y.len();
    ws.resize(n);
    let Rk4Workspace { k1, k2, k3, k4, tmp } = ws;

    f(y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    f(tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    f(tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    f(tmp, k4);
    for i in 0..n {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}
