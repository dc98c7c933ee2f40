//! Per-rotor propulsion: throttle curve, rate-limited motor response, and the
//! static thrust/torque laws with the coefficient algebra behind them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Result};

/// Reference step for the per-step increment clamps, seconds.
pub const DT_REF: f64 = 1e-3;

pub const RPM_PER_RAD_S: f64 = 60.0 / (2.0 * PI);

pub fn rpm_to_rad_s(rpm: f64) -> f64 {
    rpm / RPM_PER_RAD_S
}

pub fn rad_s_to_rpm(rad_s: f64) -> f64 {
    rad_s * RPM_PER_RAD_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorParams {
    /// +1 counter-clockwise, -1 clockwise.
    pub spin_dir: f64,
    /// Thrust constant, N/(rad/s)^2.
    pub k_t: f64,
    /// Torque-per-thrust constant, m.
    pub k_q: f64,
    /// `H(u)` in RPM, highest degree first.
    pub throttle_curve: Vec<f64>,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Converts the response-PID output into RPM per reference step.
    pub response_scale: f64,
    /// Per-step deceleration bound, RPM per `DT_REF`.
    pub f_min: f64,
    /// Per-step acceleration bound, RPM per `DT_REF`.
    pub f_max: f64,
    /// RPM.
    pub omega_max: f64,
}

impl MotorParams {
    pub(crate) fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut positive = |name: &'static str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                out.push((name, format!("must be positive, got {v}")));
            }
        };
        positive("k_t", self.k_t);
        positive("k_q", self.k_q);
        positive("omega_max", self.omega_max);
        positive("response_scale", self.response_scale);
        if !(self.f_min < 0.0 && self.f_min.is_finite()) {
            out.push(("f_min", format!("must be negative, got {}", self.f_min)));
        }
        if !(self.f_max > 0.0 && self.f_max.is_finite()) {
            out.push(("f_max", format!("must be positive, got {}", self.f_max)));
        }
        if self.spin_dir != 1.0 && self.spin_dir != -1.0 {
            out.push(("spin_dir", format!("must be +1 or -1, got {}", self.spin_dir)));
        }
        if self.throttle_curve.is_empty() || self.throttle_curve.iter().any(|c| !c.is_finite()) {
            out.push(("throttle_curve", "needs at least one finite coefficient".into()));
        }
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !v.is_finite() {
                out.push((name, "must be finite".into()));
            }
        }
        out
    }

    /// Target rotor speed (RPM) for control signal `u`.
    pub fn throttle_to_target(&self, u: f64) -> f64 {
        throttle_to_target(&self.throttle_curve, u)
    }

    /// Largest per-step speed change the clamps allow at step `dt`.
    pub fn max_increment(&self, dt: f64) -> f64 {
        self.f_min.abs().max(self.f_max) * dt / DT_REF
    }
}

/// Horner evaluation, coefficients highest degree first.
pub fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, c| acc * x + c)
}

/// `H(u)` floored at zero, with `u` clamped to `[0, 1]`.
pub fn throttle_to_target(coeffs: &[f64], u: f64) -> f64 {
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
    eval_poly(coeffs, u).max(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MotorState {
    /// RPM.
    pub omega: f64,
    pub integral: f64,
    /// RPM.
    pub prev_error: f64,
}

/// Advance one rotor toward `target` RPM.
///
/// The error is `target - omega`, so a positive gain accelerates toward the
/// target. The increment is clamped to `[f_min, f_max]` per reference step.
pub fn motor_response_step(state: MotorState, target: f64, p: &MotorParams, dt: f64) -> MotorState {
    debug_assert!(dt > 0.0);
    let error = target - state.omega;
    let integral = state.integral + error * dt;
    let derivative = (error - state.prev_error) / dt;
    let raw = p.kp * error + p.ki * integral + p.kd * derivative;
    let increment = (raw * p.response_scale).clamp(p.f_min, p.f_max) * (dt / DT_REF);
    MotorState {
        omega: (state.omega + increment).max(0.0),
        integral,
        prev_error: error,
    }
}

/// `T = omega^2 K_T`, omega in rad/s.
pub fn thrust(omega: f64, k_t: f64) -> f64 {
    omega * omega * k_t
}

/// `Q = T K_Q`.
pub fn torque(thrust: f64, k_q: f64) -> f64 {
    thrust * k_q
}

/// Thrust coefficient `C_T = T / (rho n^2 D^4)`, n in rev/s.
pub fn ct(thrust: f64, rho: f64, n: f64, d: f64) -> Result<f64> {
    ensure_positive("rho", rho)?;
    ensure_positive("n", n)?;
    ensure_positive("D", d)?;
    Ok(thrust / (rho * n * n * d.powi(4)))
}

/// Torque coefficient `C_Q = Q / (rho n^2 D^5)`.
pub fn cq(torque: f64, rho: f64, n: f64, d: f64) -> Result<f64> {
    ensure_positive("rho", rho)?;
    ensure_positive("n", n)?;
    ensure_positive("D", d)?;
    Ok(torque / (rho * n * n * d.powi(5)))
}

/// Advance ratio `J = V / (n D)`; zero airspeed is the static bench case.
pub fn advance_ratio(v_inf: f64, n: f64, d: f64) -> Result<f64> {
    ensure_positive("n", n)?;
    ensure_positive("D", d)?;
    Ok(v_inf / (n * d))
}

/// `K_T = C_T rho D^4 / (2 pi)^2`.
pub fn kt_from_ct(c_t: f64, rho: f64, d: f64) -> Result<f64> {
    ensure_positive("C_T", c_t)?;
    ensure_positive("rho", rho)?;
    ensure_positive("D", d)?;
    Ok(c_t * rho * d.powi(4) / (2.0 * PI).powi(2))
}

/// `K_Q = C_Q D / C_T`.
pub fn kq_from_coeffs(c_t: f64, c_q: f64, d: f64) -> Result<f64> {
    ensure_positive("C_T", c_t)?;
    ensure_positive("C_Q", c_q)?;
    ensure_positive("D", d)?;
    Ok(c_q * d / c_t)
}
