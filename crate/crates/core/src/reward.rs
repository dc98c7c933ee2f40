//! Reward functions for the three environment generations.
//!
//! `reward_v1` takes errors in rad/s. Everything else works in deg/s.

use serde::{Deserialize, Serialize};

use crate::config::Violation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// rad/s.
    pub omega_max: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta_y_max: f64,
    /// Error band as a fraction of the setpoint.
    pub epsilon: f64,
    pub max_penalty: f64,
    /// Factor from control units to the output scale the smoothness term is
    /// expressed in (1000 puts a full-range change at 1000 µs of ESC pulse).
    pub output_scale: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            omega_max: 300f64.to_radians(),
            alpha: 300.0,
            beta: 0.5,
            delta_y_max: 100.0 * 100.0,
            epsilon: 0.1,
            max_penalty: 1e9,
            output_scale: 1000.0,
        }
    }
}

impl RewardParams {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let positive = [
            ("omega_max", self.omega_max),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta_y_max", self.delta_y_max),
            ("max_penalty", self.max_penalty),
            ("output_scale", self.output_scale),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                v.push(Violation::new(format!("reward.{name}"), format!("must be positive, got {value}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            v.push(Violation::new("reward.epsilon", format!("must lie in (0, 1), got {}", self.epsilon)));
        }
        v
    }
}

/// `-clip(sum |e| / (3 omega_max), 0, 1)`, `e` in rad/s.
pub fn reward_v1(e: &[f64; 3], omega_max: f64) -> f64 {
    let s: f64 = e.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * omega_max);
    if s.is_nan() {
        return -1.0;
    }
    -s.clamp(0.0, 1.0)
}

/// `-(e_r^2 + e_p^2 + e_y^2)`.
pub fn reward_error(e: &[f64; 3]) -> f64 {
    -(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
}

/// `alpha (1 - mean(y))`.
pub fn reward_output_min(y: &[f64], alpha: f64) -> f64 {
    if y.is_empty() {
        return alpha;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    alpha * (1.0 - mean)
}

/// `beta * sum max(0, dy_max - dy_i^2)`.
pub fn reward_smooth(delta_y: &[f64], beta: f64, delta_y_max: f64) -> f64 {
    beta * delta_y
        .iter()
        .map(|d| (delta_y_max - d * d).max(0.0))
        .sum::<f64>()
}

/// True when every axis error lies strictly inside `epsilon |setpoint|`.
pub fn in_band(e: &[f64; 3], setpoint: &[f64; 3], epsilon: f64) -> bool {
    e.iter()
        .zip(setpoint)
        .all(|(e, sp)| e.abs() < epsilon * sp.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct V2Breakdown {
    pub error: f64,
    pub output: f64,
    pub smooth: f64,
    pub total: f64,
}

/// `r_e`, plus `r_y + r_delta` when inside the band.
pub fn reward_v2(e: &[f64; 3], y: &[f64], delta_y: &[f64], in_band: bool, p: &RewardParams) -> V2Breakdown {
    let error = reward_error(e);
    let (output, smooth) = if in_band {
        (
            reward_output_min(y, p.alpha),
            reward_smooth(delta_y, p.beta, p.delta_y_max),
        )
    } else {
        (0.0, 0.0)
    };
    V2Breakdown {
        error,
        output,
        smooth,
        total: error + output + smooth,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardState {
    /// `r_e` of the previous step.
    pub prev_error_reward: f64,
    pub prev_u: Vec<f64>,
}

impl RewardState {
    pub fn new(motor_count: usize) -> Self {
        Self {
            prev_error_reward: 0.0,
            prev_u: vec![0.0; motor_count],
        }
    }

    /// State seeded with the error at reset, so the first progress term
    /// measures the change from the initial observation.
    pub fn at_reset(e0: &[f64; 3], motor_count: usize) -> Self {
        Self {
            prev_error_reward: reward_error(e0),
            prev_u: vec![0.0; motor_count],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct V3Breakdown {
    pub progress: f64,
    pub change: f64,
    pub output: f64,
    pub saturation: f64,
    pub all_saturated: f64,
    pub idle: f64,
    pub total: f64,
}

/// Count of motors commanded exactly zero.
fn zero_motors(u: &[f64]) -> usize {
    u.iter().filter(|v| **v == 0.0).count()
}

/// Progress, output-change, band, saturation and idle terms in one step.
pub fn reward_v3(
    state: &RewardState,
    e: &[f64; 3],
    u: &[f64],
    a_raw: &[f64],
    setpoint: &[f64; 3],
    p: &RewardParams,
) -> (V3Breakdown, RewardState) {
    let r_e = reward_error(e);
    let progress = r_e - state.prev_error_reward;

    let max_change = u
        .iter()
        .enumerate()
        .map(|(i, v)| (v - state.prev_u.get(i).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max);
    let change = -p.beta * max_change;

    let output = if in_band(e, setpoint, p.epsilon) {
        reward_output_min(u, p.alpha)
    } else {
        0.0
    };

    let excess: f64 = a_raw.iter().map(|a| (a - 1.0).max(0.0)).sum();
    let saturation = -p.max_penalty * excess;

    let all_saturated = if !u.is_empty() && u.iter().all(|v| *v == 1.0) {
        -p.max_penalty
    } else {
        0.0
    };

    let commanded = setpoint.iter().any(|w| w.abs() > 0.0);
    let idle = if zero_motors(u) > 2 && commanded {
        -p.max_penalty
    } else {
        0.0
    };

    let b = V3Breakdown {
        progress,
        change,
        output,
        saturation,
        all_saturated,
        idle,
        total: progress + change + output + saturation + all_saturated + idle,
    };
    let next = RewardState {
        prev_error_reward: r_e,
        prev_u: u.to_vec(),
    };
    (b, next)
}
