//! Controllers under test: axis-wise PID with motor mixing and a
//! feedforward neural policy with its input/output transforms.

mod pid;
mod policy;
mod tuning;

pub use pid::{mix, mix_unclamped, pid_eval, zn_tune, AxisGains, PidGains, PidState};
pub use policy::{Activation, DenseLayer, MlpPolicy};
pub use tuning::{
    ultimate_gain_search, EnvAxisLoop, GainSearch, OscillationDetector, ProportionalLoop,
    UltimateGain,
};

use crate::config::MixerTable;
use crate::env::Observation;
use crate::error::Result;

/// Output scale applied to the PID sum before mixing (firmware mixer scaling).
pub const PID_OUTPUT_SCALE: f64 = 1e-3;

/// Base throttle under PID control. Mid-range leaves every motor room to
/// both speed up and slow down.
pub const PID_DEFAULT_THROTTLE: f64 = 0.5;

/// Network input `x = [e, e - prev_e]`.
pub fn build_input(e: &[f64; 3], prev_e: &[f64; 3]) -> [f64; 6] {
    [
        e[0],
        e[1],
        e[2],
        e[0] - prev_e[0],
        e[1] - prev_e[1],
        e[2] - prev_e[2],
    ]
}

/// Clip raw outputs to `[-1, 1]` and map affinely onto `[0, 1]`.
pub fn transform_output(y_raw: &[f64]) -> Vec<f64> {
    const Y_LOW: f64 = -1.0;
    const Y_HIGH: f64 = 1.0;
    const U_LOW: f64 = 0.0;
    const U_HIGH: f64 = 1.0;
    y_raw
        .iter()
        .map(|y| {
            let y = if y.is_nan() { Y_LOW } else { y.clamp(Y_LOW, Y_HIGH) };
            (U_HIGH - U_LOW) * (y - Y_LOW) / (Y_HIGH - Y_LOW) + U_LOW
        })
        .collect()
}

/// Add throttle only within the headroom left by the largest output:
/// `T_hat = T (1 - max y)`, `u_i = T_hat + y_i`.
pub fn throttle_mix(y: &[f64], throttle: f64) -> (f64, Vec<f64>) {
    let max_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let headroom = if y.is_empty() { 1.0 } else { 1.0 - max_y };
    let effective = throttle * headroom;
    (effective, y.iter().map(|v| effective + v).collect())
}

/// What a controller hands the environment each step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    /// Motor signals in `[0, 1]`.
    pub u: Vec<f64>,
    /// Unclipped network output, when there is one.
    pub raw: Option<Vec<f64>>,
}

pub trait Controller {
    fn reset(&mut self);
    fn act(&mut self, obs: &Observation) -> Result<ControlOutput>;
}

#[derive(Debug, Clone)]
pub struct PidController {
    pub gains: PidGains,
    pub mixer: MixerTable,
    pub throttle: f64,
    pub output_scale: f64,
    dt: f64,
    state: PidState,
}

impl PidController {
    pub fn new(gains: PidGains, mixer: MixerTable, dt: f64) -> Self {
        Self {
            gains,
            mixer,
            throttle: PID_DEFAULT_THROTTLE,
            output_scale: PID_OUTPUT_SCALE,
            dt,
            state: PidState::default(),
        }
    }

    pub fn with_throttle(mut self, throttle: f64) -> Self {
        self.throttle = throttle;
        self
    }
}

impl Controller for PidController {
    fn reset(&mut self) {
        self.state = PidState::default();
    }

    fn act(&mut self, obs: &Observation) -> Result<ControlOutput> {
        let y = pid_eval(&mut self.state, &obs.error, &self.gains, self.dt);
        let y = y.map(|v| v * self.output_scale);
        Ok(ControlOutput {
            u: mix(&y, self.throttle, &self.mixer),
            raw: None,
        })
    }
}

/// Deterministic neural policy: the distribution mean is used as the action.
#[derive(Debug, Clone)]
pub struct NeuralController {
    pub policy: MlpPolicy,
    pub throttle: f64,
    prev_error: [f64; 3],
}

impl NeuralController {
    pub fn new(policy: MlpPolicy) -> Self {
        Self {
            policy,
            throttle: 0.0,
            prev_error: [0.0; 3],
        }
    }
}

impl Controller for NeuralController {
    fn reset(&mut self) {
        self.prev_error = [0.0; 3];
    }

    fn act(&mut self, obs: &Observation) -> Result<ControlOutput> {
        let x = build_input(&obs.error, &self.prev_error);
        self.prev_error = obs.error;
        let raw = self.policy.forward(&x)?;
        let y = transform_output(&raw);
        let (_, u) = throttle_mix(&y, self.throttle);
        Ok(ControlOutput { u, raw: Some(raw) })
    }
}

/// Always commands zero.
#[derive(Debug, Clone)]
pub struct ZeroController {
    pub motor_count: usize,
}

impl Controller for ZeroController {
    fn reset(&mut self) {}

    fn act(&mut self, _obs: &Observation) -> Result<ControlOutput> {
        Ok(ControlOutput {
            u: vec![0.0; self.motor_count],
            raw: None,
        })
    }
}

/// Replays a fixed command sequence, then holds the last command (or zero).
#[derive(Debug, Clone)]
pub struct ReplayController {
    commands: Vec<Vec<f64>>,
    motor_count: usize,
    cursor: usize,
}

impl ReplayController {
    pub fn new(commands: Vec<Vec<f64>>, motor_count: usize) -> Self {
        Self {
            commands,
            motor_count,
            cursor: 0,
        }
    }
}

impl Controller for ReplayController {
    fn reset(&mut self) {
        self.cursor = 0;
    }

    fn act(&mut self, _obs: &Observation) -> Result<ControlOutput> {
        let u = match self.commands.get(self.cursor) {
            Some(u) => u.clone(),
            None => self
                .commands
                .last()
                .cloned()
                .unwrap_or_else(|| vec![0.0; self.motor_count]),
        };
        self.cursor += 1;
        Ok(ControlOutput { u, raw: None })
    }
}
