use super::params::{DgParams, DgState};

/// Time derivatives of `[i_id, i_iq, v_od, v_oq, i_od, i_oq]` for the LC filter and coupling line.
///
/// The cross-coupling terms follow the standard rotating-frame convention:
/// `+ω i_iq` / `-ω i_id` on the filter inductor, `+ω v_oq` / `-ω v_od` on the
/// capacitor, and `+ω i_oq` / `-ω i_od` on the coupling inductor.
pub fn plant_derivatives(
    state: &DgState,
    v_id: f64,
    v_iq: f64,
    v_bd: f64,
    v_bq: f64,
    omega: f64,
    params: &DgParams,
) -> [f64; 6] {
    let DgParams { r_f, l_f, c_f, r_c, l_c, .. } = *params;
    let s = state;
    [
        -r_f / l_f * s.i_id + omega * s.i_iq + (v_id - s.v_od) / l_f,
        -r_f / l_f * s.i_iq - omega * s.i_id + (v_iq - s.v_oq) / l_f,
        omega * s.v_oq + (s.i_id - s.i_od) / c_f,
        -omega * s.v_od + (s.i_iq - s.i_oq) / c_f,
        -r_c / l_c * s.i_od + omega * s.i_oq + (s.v_od - v_bd) / l_c,
        -r_c / l_c * s.i_oq - omega * s.i_od + (s.v_oq - v_bq) / l_c,
    ]
}
