//! Closed-form helpers for the one-dimensional closed-loop study.
//!
//! The scalar system `s_{t+1} = a s_t + b u_t` under a linear gain `u = theta s`
//! has states `s_t = (a + b theta)^t s0`, so returns and their exact gradients
//! are available by direct recursion. The same machinery evaluates the
//! correction-model landscape: rolling the corrected model along a reference
//! trajectory recorded under `theta_ref` gives states `sbar_t + e_t` with an
//! error recursion in `e`, and differentiating that recursion in `theta`
//! yields the landscape gradient without finite differences.

use crate::error::{LabError, LabResult};

/// Bell reward `exp(-(s/sigma_r)^2)`.
pub fn bell(s: f64, sigma_r: f64) -> f64 {
    let z = s / sigma_r;
    (-z * z).exp()
}

/// Derivative of [`bell`] with respect to `s`.
pub fn bell_grad(s: f64, sigma_r: f64) -> f64 {
    -2.0 * s / (sigma_r * sigma_r) * bell(s, sigma_r)
}

/// A return value together with its derivative in `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapePoint {
    pub value: f64,
    pub gradient: f64,
}

/// Time-averaged bell return of the closed loop `s_{t+1} = c s_t`.
pub fn scalar_return_timeavg(c: f64, s0: f64, sigma_r: f64, horizon: usize) -> f64 {
    let mut s = s0;
    let mut sum = 0.0;
    for _ in 0..horizon {
        sum += bell(s, sigma_r);
        s *= c;
    }
    sum / horizon as f64
}

/// Time-averaged bell return and exact gradient of the closed loop
/// `s_{t+1} = (a + b theta) s_t` as a function of `theta`.
///
/// The tangent recursion is `u_{t+1} = (a + b theta) u_t + b s_t`, `u_0 = 0`.
pub fn closed_loop_landscape(
    a: f64,
    b: f64,
    theta: f64,
    s0: f64,
    sigma_r: f64,
    horizon: usize,
) -> LabResult<LandscapePoint> {
    if horizon == 0 {
        return Err(LabError::InvalidArgument {
            context: "closed_loop_landscape",
            message: "horizon must be >= 1".into(),
        });
    }
    let c = a + b * theta;
    let mut s = s0;
    let mut u = 0.0;
    let mut value = 0.0;
    let mut gradient = 0.0;
    for _ in 0..horizon {
        value += bell(s, sigma_r);
        gradient += bell_grad(s, sigma_r) * u;
        let next_s = c * s;
        let next_u = c * u + b * s;
        s = next_s;
        u = next_u;
    }
    Ok(LandscapePoint {
        value: value / horizon as f64,
        gradient: gradient / horizon as f64,
    })
}

/// Landscape of the corrected model along a fixed reference trajectory.
///
/// References are recorded on the true system under gain `theta_ref`:
/// `sbar_{t+1} = (a + b theta_ref) sbar_t`. Rolling the corrected model
/// (mean `a_model s + b_model u`) along them under gain `theta` produces
/// states `s_t = sbar_t + e_t` with
///
/// ```text
/// e_{t+1} = (a_model + b_model theta) e_t + b_model (theta - theta_ref) sbar_t
/// ```
///
/// and the `theta`-tangent `v` of `e` obeys
/// `v_{t+1} = (a_model + b_model theta) v_t + b_model (e_t + sbar_t)`.
/// At `theta = theta_ref` the error vanishes identically and the landscape
/// value equals the true return at `theta_ref`.
pub fn opc_landscape(
    a: f64,
    b: f64,
    a_model: f64,
    b_model: f64,
    theta: f64,
    theta_ref: f64,
    s0: f64,
    sigma_r: f64,
    horizon: usize,
) -> LabResult<LandscapePoint> {
    if horizon == 0 {
        return Err(LabError::InvalidArgument {
            context: "opc_landscape",
            message: "horizon must be >= 1".into(),
        });
    }
    let c_ref = a + b * theta_ref;
    let c_model = a_model + b_model * theta;
    let mut sbar = s0;
    let mut e = 0.0;
    let mut v = 0.0;
    let mut value = 0.0;
    let mut gradient = 0.0;
    for _ in 0..horizon {
        let s = sbar + e;
        value += bell(s, sigma_r);
        gradient += bell_grad(s, sigma_r) * v;
        let next_e = c_model * e + b_model * (theta - theta_ref) * sbar;
        let next_v = c_model * v + b_model * (e + sbar);
        e = next_e;
        v = next_v;
        sbar *= c_ref;
    }
    Ok(LandscapePoint {
        value: value / horizon as f64,
        gradient: gradient / horizon as f64,
    })
}
