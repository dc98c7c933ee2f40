//! Lockstep episode environment: one `step` call is one physics step.

use std::str::FromStr;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AircraftConfig, NoiseParams};
use crate::control::Controller;
use crate::dynamics::RigidBody;
use crate::error::{ensure_len, ensure_positive, Error, Result};
use crate::gyro;
use crate::propulsion::{self, motor_response_step, rpm_to_rad_s, MotorState};
use crate::reward::{self, RewardParams, RewardState};
use crate::task::{self, TaskSchedule};
use crate::trace::{EpisodeTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardKind {
    V1,
    V2,
    #[default]
    V3,
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" | "1" => Ok(RewardKind::V1),
            "v2" | "2" => Ok(RewardKind::V2),
            "v3" | "3" => Ok(RewardKind::V3),
            other => Err(Error::Parse(format!("unknown reward '{other}' (v1, v2, v3)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    /// Bound in rad/s.
    Episodic { omega_bound: f64 },
    Continuous {
        omega_bound: f64,
        interval: (f64, f64),
        length: f64,
    },
    Pulse { sigma: f64 },
    /// Pulse shape with a fixed setpoint, deg/s.
    PulseFixed { setpoint: [f64; 3] },
    Step { setpoint: [f64; 3], length: f64 },
    Schedule(TaskSchedule),
}

impl TaskSpec {
    pub fn build(&self, seed: u64) -> Result<TaskSchedule> {
        match self {
            TaskSpec::Episodic { omega_bound } => task::episodic_uniform(seed, *omega_bound),
            TaskSpec::Continuous {
                omega_bound,
                interval,
                length,
            } => task::continuous_random(seed, *omega_bound, *interval, *length),
            TaskSpec::Pulse { sigma } => task::pulse(seed, *sigma),
            TaskSpec::PulseFixed { setpoint } => task::pulse_with(*setpoint),
            TaskSpec::Step { setpoint, length } => task::step(*setpoint, *length),
            TaskSpec::Schedule(s) => Ok(s.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub aircraft: AircraftConfig,
    pub task: TaskSpec,
    pub reward: RewardKind,
    pub reward_params: RewardParams,
    pub noise: bool,
    /// Documented only: there is no translational channel for gravity to act on.
    pub gravity: bool,
}

impl EnvConfig {
    pub fn new(aircraft: AircraftConfig, task: TaskSpec) -> Self {
        Self {
            aircraft,
            task,
            reward: RewardKind::default(),
            reward_params: RewardParams::default(),
            noise: true,
            gravity: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    /// deg/s.
    pub setpoint: [f64; 3],
    /// Measured rate, deg/s.
    pub gyro: [f64; 3],
    pub error: [f64; 3],
    pub delta_error: [f64; 3],
}

impl Observation {
    /// `(e, delta e)`.
    pub fn vector(&self) -> [f64; 6] {
        crate::control::build_input(&self.error, &[0, 1, 2].map(|i| self.error[i] - self.delta_error[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Noise-free body rate, deg/s.
    pub omega_true: [f64; 3],
    pub rotor_rpm: Vec<f64>,
    /// N.
    pub rotor_thrust: Vec<f64>,
    /// N·m.
    pub rotor_torque: Vec<f64>,
    /// Commands applied after clamping to `[0, 1]`.
    pub u_applied: Vec<f64>,
    /// Out-of-range command components clamped so far this episode.
    pub clamped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// The step/reset surface shared by the simulator and test doubles.
pub trait StepEnv {
    fn motor_count(&self) -> usize;
    fn dt(&self) -> f64;
    fn reset(&mut self, seed: u64) -> Result<Observation>;
    fn step_with_raw(&mut self, u: &[f64], raw: Option<&[f64]>) -> Result<StepOutcome>;

    fn step(&mut self, u: &[f64]) -> Result<StepOutcome> {
        self.step_with_raw(u, None)
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    body: RigidBody,
    noise: NoiseParams,
    dt: f64,
    omega: Vector3<f64>,
    motors: Vec<MotorState>,
    reward_state: RewardState,
    prev_u: Vec<f64>,
    prev_error: [f64; 3],
    schedule: TaskSchedule,
    total_steps: u64,
    steps: u64,
    done: bool,
    clamped: u64,
    rng: ChaCha8Rng,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        let violations = crate::config::validate(&cfg.aircraft);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        let rv = cfg.reward_params.violations();
        if !rv.is_empty() {
            return Err(Error::Invalid(rv));
        }
        if cfg.gravity {
            log::warn!("gravity has no effect in a rotation-only simulation");
        }
        let dt = cfg.aircraft.sim_dt;
        ensure_positive("sim_dt", dt)?;
        let body = RigidBody::new(cfg.aircraft.inertia_matrix())?;
        let noise = if cfg.noise { cfg.aircraft.gyro_noise } else { NoiseParams::zero() };
        let m = cfg.aircraft.motor_count;
        let schedule = cfg.task.build(0)?;
        let mut env = Self {
            body,
            noise,
            dt,
            omega: Vector3::zeros(),
            motors: vec![MotorState::default(); m],
            reward_state: RewardState::new(m),
            prev_u: vec![0.0; m],
            prev_error: [0.0; 3],
            total_steps: 0,
            schedule,
            steps: 0,
            done: false,
            clamped: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            cfg,
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn t(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn schedule(&self) -> &TaskSchedule {
        &self.schedule
    }

    /// True body rate, rad/s.
    pub fn omega(&self) -> Vector3<f64> {
        self.omega
    }

    pub fn rotor_rpm(&self) -> Vec<f64> {
        self.motors.iter().map(|m| m.omega).collect()
    }
}

impl StepEnv for Env {
    fn motor_count(&self) -> usize {
        self.cfg.aircraft.motor_count
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn reset(&mut self, seed: u64) -> Result<Observation> {
        let m = self.motor_count();
        self.schedule = self.cfg.task.build(seed)?;
        self.total_steps = (self.schedule.length() / self.dt).round() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        self.rng = rng;
        self.omega = Vector3::zeros();
        self.motors = vec![MotorState::default(); m];
        self.prev_u = vec![0.0; m];
        self.steps = 0;
        self.done = false;
        self.clamped = 0;

        let setpoint = self.schedule.setpoint_at(0.0);
        let error = setpoint;
        self.prev_error = error;
        self.reward_state = RewardState::at_reset(&error, m);
        Ok(Observation {
            t: 0.0,
            setpoint,
            gyro: [0.0; 3],
            error,
            delta_error: error,
        })
    }

    fn step_with_raw(&mut self, u: &[f64], raw: Option<&[f64]>) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let m = self.motor_count();
        ensure_len(m, u.len())?;
        if let Some(raw) = raw {
            ensure_len(m, raw.len())?;
        }
        if u.iter().any(|v| v.is_nan()) {
            return Err(Error::Degenerate("motor command contains NaN".into()));
        }
        let u_applied: Vec<f64> = u.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        self.clamped += u.iter().zip(&u_applied).filter(|(a, b)| a != b).count() as u64;

        let motors = &self.cfg.aircraft.motors;
        let mut thrust = Vec::with_capacity(m);
        let mut torque = Vec::with_capacity(m);
        for i in 0..m {
            let p = &motors[i];
            let target = p.throttle_to_target(u_applied[i]);
            self.motors[i] = motor_response_step(self.motors[i], target, p, self.dt);
            let t = propulsion::thrust(rpm_to_rad_s(self.motors[i].omega), p.k_t);
            thrust.push(t);
            torque.push(propulsion::torque(t, p.k_q));
        }
        let tau = crate::dynamics::body_torque_from_thrust(&thrust, &torque, &self.cfg.aircraft)?;
        self.omega = self.body.advance(&self.omega, &tau, self.dt);
        self.steps += 1;
        let t = self.t();

        let gyro: [f64; 3] = gyro::sample(&self.omega, &self.noise, &mut self.rng).into();
        let setpoint = self.schedule.setpoint_at(t);
        let error = [0, 1, 2].map(|ax| setpoint[ax] - gyro[ax]);
        let delta_error = [0, 1, 2].map(|ax| error[ax] - self.prev_error[ax]);
        self.prev_error = error;

        let p = &self.cfg.reward_params;
        let reward = match self.cfg.reward {
            RewardKind::V1 => reward::reward_v1(&error.map(f64::to_radians), p.omega_max),
            RewardKind::V2 => {
                let dy: Vec<f64> = u_applied
                    .iter()
                    .zip(&self.prev_u)
                    .map(|(a, b)| (a - b) * p.output_scale)
                    .collect();
                let band = reward::in_band(&error, &setpoint, p.epsilon);
                reward::reward_v2(&error, &u_applied, &dy, band, p).total
            }
            RewardKind::V3 => {
                let a = raw.unwrap_or(&u_applied);
                let (b, next) = reward::reward_v3(&self.reward_state, &error, &u_applied, a, &setpoint, p);
                self.reward_state = next;
                b.total
            }
        };
        self.prev_u.clone_from(&u_applied);
        self.done = self.steps >= self.total_steps;

        Ok(StepOutcome {
            obs: Observation {
                t,
                setpoint,
                gyro,
                error,
                delta_error,
            },
            reward,
            done: self.done,
            info: StepInfo {
                omega_true: self.omega.map(f64::to_degrees).into(),
                rotor_rpm: self.rotor_rpm(),
                rotor_thrust: thrust,
                rotor_torque: torque,
                u_applied,
                clamped: self.clamped,
            },
        })
    }
}

/// Roll out one closed-loop episode.
///
/// Row `k` holds the state after step `k + 1`: its time, setpoint and gyro
/// reading, together with the command that produced it and its reward.
pub fn run_episode<E: StepEnv + ?Sized, C: Controller + ?Sized>(
    env: &mut E,
    controller: &mut C,
    seed: u64,
) -> Result<EpisodeTrace> {
    let m = env.motor_count();
    let mut trace = EpisodeTrace::new(env.dt(), m);
    let mut obs = env.reset(seed)?;
    controller.reset();
    loop {
        let action = controller.act(&obs)?;
        let out = env.step_with_raw(&action.u, action.raw.as_deref())?;
        trace.push(TraceRow {
            t: out.obs.t,
            setpoint: out.obs.setpoint,
            gyro: out.obs.gyro,
            u: out.info.u_applied.clone(),
            rpm: out.info.rotor_rpm.clone(),
            reward: out.reward,
        })?;
        obs = out.obs;
        if out.done {
            return Ok(trace);
        }
    }
}

/// Replay a fixed command sequence open loop; the episode ends at the
/// schedule's time limit or when commands run out.
pub fn run_commands<E: StepEnv + ?Sized>(env: &mut E, commands: &[Vec<f64>], seed: u64) -> Result<EpisodeTrace> {
    let mut trace = EpisodeTrace::new(env.dt(), env.motor_count());
    env.reset(seed)?;
    for u in commands {
        let out = env.step(u)?;
        trace.push(TraceRow {
            t: out.obs.t,
            setpoint: out.obs.setpoint,
            gyro: out.obs.gyro,
            u: out.info.u_applied.clone(),
            rpm: out.info.rotor_rpm.clone(),
            reward: out.reward,
        })?;
        if out.done {
            break;
        }
    }
    Ok(trace)
}

/// Read a command file: one row per step, `M` comma-separated values, an
/// optional header line starting with a letter.
pub fn read_commands(path: impl AsRef<std::path::Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_commands(&text)
}

pub fn parse_commands(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if n == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad number '{s}'", n + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = out.first() {
            ensure_len(first.len(), row.len())?;
        }
        out.push(row);
    }
    Ok(out)
}
