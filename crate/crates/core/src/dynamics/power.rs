/// Default cutoff of the power measurement filter (rad/s).
pub const DEFAULT_FILTER_CUTOFF: f64 = 31.4;

/// Instantaneous dq real and reactive power.
pub fn instantaneous_power(v_od: f64, v_oq: f64, i_od: f64, i_oq: f64) -> (f64, f64) {
    (1.5 * (v_od * i_od + v_oq * i_oq), 1.5 * (v_oq * i_od - v_od * i_oq))
}

/// One step of the first-order power filter, discretised exactly under a zero-order hold.
///
/// `omega_c` is the filter cutoff; returns the filtered `(P, Q)`.
pub fn measure_power(
    v_od: f64,
    v_oq: f64,
    i_od: f64,
    i_oq: f64,
    prev_p: f64,
    prev_q: f64,
    dt: f64,
    omega_c: f64,
) -> (f64, f64) {
    debug_assert!(dt > 0.0);
    let (p, q) = instantaneous_power(v_od, v_oq, i_od, i_oq);
    let alpha = -(-omega_c * dt).exp_m1();
    (prev_p + alpha * (p - prev_p), prev_q + alpha * (q - prev_q))
}
