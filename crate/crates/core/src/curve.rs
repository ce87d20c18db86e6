//! Inverse-time operating curves: the classic current-only form, the
//! voltage-extended general form, and the reduced form the optimizer works
//! in, where the time multiplier and both curve constants merge into a
//! single linear coefficient.

use serde::{Deserialize, Serialize};

/// Full parameter set of the voltage-extended inverse-time curve. Setting
/// `lambda_v = 0, l_v = 1` recovers the plain overcurrent curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripCurveParams {
    pub tms: f64,
    pub lambda_i: f64,
    pub lambda_v: f64,
    pub l_i: f64,
    pub l_v: f64,
    pub eta_i: f64,
    pub eta_v: f64,
    pub i_s_amps: f64,
    pub v_s_pu: f64,
}

impl TripCurveParams {
    /// The merged linear coefficient the optimizer solves for.
    pub fn zeta(&self) -> f64 {
        self.tms * self.lambda_i * self.lambda_v
    }
}

/// Plain inverse-time overcurrent operating time. `None` when the relay does
/// not pick up (`i_m <= i_s`).
pub fn t_op_current(i_m: f64, tms: f64, lambda: f64, eta: f64, l: f64, i_s: f64) -> Option<f64> {
    if i_m <= i_s {
        return None;
    }
    let bracket = (i_m / i_s).powf(eta) - 1.0;
    if bracket <= 0.0 {
        return None;
    }
    Some(tms * (lambda / bracket + l))
}

/// Voltage-extended operating time. The current bracket must be positive;
/// the voltage bracket is only constrained when `lambda_v` is nonzero
/// (otherwise the factor is the constant `l_v` and no voltage pickup
/// applies).
pub fn t_op_full(i_m: f64, v_m: f64, p: &TripCurveParams) -> Option<f64> {
    if i_m <= p.i_s_amps {
        return None;
    }
    let bi = (i_m / p.i_s_amps).powf(p.eta_i) - 1.0;
    if bi <= 0.0 {
        return None;
    }
    let factor_i = p.lambda_i / bi + p.l_i;
    let factor_v = if p.lambda_v == 0.0 {
        p.l_v
    } else {
        if v_m >= p.v_s_pu {
            return None;
        }
        let bv = (p.v_s_pu / v_m).powf(p.eta_v) - 1.0;
        if bv <= 0.0 {
            return None;
        }
        p.lambda_v / bv + p.l_v
    };
    Some(p.tms * factor_i * factor_v)
}

/// Reduced form used by the optimizer: linear in `zeta`. Requires both
/// pickups (`i_m > i_s`, `v_m < v_s`).
pub fn t_op_reduced(
    i_m: f64,
    v_m: f64,
    zeta: f64,
    eta_i: f64,
    eta_v: f64,
    i_s: f64,
    v_s: f64,
) -> Option<f64> {
    reduced_rate(i_m, v_m, eta_i, eta_v, i_s, v_s).map(|rate| zeta * rate)
}

/// Seconds of operating time per unit of `zeta` at a measurement point, or
/// `None` when the point is outside the curve domain. This is the LP
/// coefficient for that point.
pub fn reduced_rate(i_m: f64, v_m: f64, eta_i: f64, eta_v: f64, i_s: f64, v_s: f64) -> Option<f64> {
    if i_m <= i_s || v_m >= v_s || v_m <= 0.0 {
        return None;
    }
    let bi = (i_m / i_s).powf(eta_i) - 1.0;
    let bv = (v_s / v_m).powf(eta_v) - 1.0;
    if bi <= 0.0 || bv <= 0.0 {
        return None;
    }
    Some(1.0 / (bi * bv))
}
