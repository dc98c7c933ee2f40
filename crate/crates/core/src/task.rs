//! Setpoint schedules. All setpoints are deg/s and piecewise constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure_positive, Error, Result};

pub const EPISODIC_LENGTH: f64 = 1.0;
pub const CONTINUOUS_LENGTH: f64 = 30.0;
pub const PULSE_LENGTH: f64 = 4.5;
pub const PULSE_SIGMA: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub setpoint: [f64; 3],
}

/// Right-continuous step function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSchedule {
    segments: Vec<Segment>,
    length: f64,
}

impl TaskSchedule {
    /// `segments` must start at 0 with strictly increasing start times.
    pub fn new(segments: Vec<Segment>, length: f64) -> Result<Self> {
        ensure_positive("episode length", length)?;
        match segments.first() {
            Some(s) if s.start == 0.0 => {}
            _ => return Err(Error::Degenerate("schedule must start at t = 0".into())),
        }
        if segments.windows(2).any(|w| w[1].start <= w[0].start) {
            return Err(Error::Degenerate("segment starts must increase".into()));
        }
        Ok(Self { segments, length })
    }

    pub fn constant(setpoint: [f64; 3], length: f64) -> Result<Self> {
        Self::new(vec![Segment { start: 0.0, setpoint }], length)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn setpoint_at(&self, t: f64) -> [f64; 3] {
        let idx = self.segments.partition_point(|s| s.start <= t);
        self.segments[idx.saturating_sub(1)].setpoint
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One uniform setpoint in `[-bound, bound]` (bound in rad/s), held for 1 s.
pub fn episodic_uniform(seed: u64, omega_bound: f64) -> Result<TaskSchedule> {
    ensure_positive("omega_bound", omega_bound)?;
    let b = omega_bound.to_degrees();
    let mut rng = rng_for(seed);
    let sp = [0; 3].map(|_: u8| rng.random_range(-b..=b));
    TaskSchedule::constant(sp, EPISODIC_LENGTH)
}

/// Uniform setpoints held for uniform durations in `interval`.
pub fn continuous_random(
    seed: u64,
    omega_bound: f64,
    interval: (f64, f64),
    length: f64,
) -> Result<TaskSchedule> {
    ensure_positive("omega_bound", omega_bound)?;
    ensure_positive("interval start", interval.0)?;
    if !(interval.1 >= interval.0) {
        return Err(Error::Degenerate(format!("bad hold interval {interval:?}")));
    }
    ensure_positive("episode length", length)?;
    let b = omega_bound.to_degrees();
    let mut rng = rng_for(seed);
    let mut segments = Vec::new();
    let mut t = 0.0;
    while t < length {
        let setpoint = [0; 3].map(|_: u8| rng.random_range(-b..=b));
        segments.push(Segment { start: t, setpoint });
        t += rng.random_range(interval.0..=interval.1);
    }
    TaskSchedule::new(segments, length)
}

/// Idle 0.5 s, a Normal(0, sigma) pulse for 2 s, idle 2 s.
pub fn pulse(seed: u64, sigma: f64) -> Result<TaskSchedule> {
    ensure_positive("sigma", sigma)?;
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Degenerate(e.to_string()))?;
    let mut rng = rng_for(seed);
    let sp = [0; 3].map(|_: u8| normal.sample(&mut rng));
    pulse_with(sp)
}

/// The pulse shape with a fixed setpoint.
pub fn pulse_with(setpoint: [f64; 3]) -> Result<TaskSchedule> {
    TaskSchedule::new(
        vec![
            Segment { start: 0.0, setpoint: [0.0; 3] },
            Segment { start: 0.5, setpoint },
            Segment { start: 2.5, setpoint: [0.0; 3] },
        ],
        PULSE_LENGTH,
    )
}

/// Setpoint from `t = 0` for `length` seconds.
pub fn step(setpoint: [f64; 3], length: f64) -> Result<TaskSchedule> {
    TaskSchedule::constant(setpoint, length)
}
