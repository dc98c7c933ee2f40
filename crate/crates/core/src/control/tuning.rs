//! Ultimate-gain search for Ziegler–Nichols tuning.

use crate::config::AircraftConfig;
use crate::env::{run_episode, Env, EnvConfig, TaskSpec};
use crate::error::{ensure_positive, Error, Result};

use std::collections::VecDeque;

use crate::env::Observation;

use super::{ControlOutput, Controller, PidController, PidGains};

/// A closed loop under proportional-only control.
pub trait ProportionalLoop {
    fn dt(&self) -> f64;
    /// Response of the controlled variable to a setpoint step under gain `kp`.
    fn run(&mut self, kp: f64) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltimateGain {
    pub ku: f64,
    /// Seconds.
    pub tu: f64,
}

/// Declares an oscillation sustained when the last `cycles` full cycles lose
/// less than `max_decay` of their peak-to-peak amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationDetector {
    pub cycles: usize,
    pub max_decay: f64,
    pub min_amplitude: f64,
}

impl Default for OscillationDetector {
    fn default() -> Self {
        Self {
            cycles: 5,
            max_decay: 0.05,
            min_amplitude: 1e-6,
        }
    }
}

impl OscillationDetector {
    /// Oscillation period in seconds, or `None` when the signal settles.
    pub fn period(&self, signal: &[f64], dt: f64) -> Option<f64> {
        if signal.len() < 4 || signal.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let tail = &signal[signal.len() / 2..];
        let mid = tail.iter().sum::<f64>() / tail.len() as f64;

        // upward crossings of the tail mean, linearly interpolated
        let mut crossings: Vec<(usize, f64)> = Vec::new();
        for k in 1..signal.len() {
            let (a, b) = (signal[k - 1] - mid, signal[k] - mid);
            if a < 0.0 && b >= 0.0 {
                let frac = -a / (b - a);
                crossings.push((k, (k - 1) as f64 + frac));
            }
        }
        if crossings.len() < self.cycles + 1 {
            return None;
        }
        let last = &crossings[crossings.len() - self.cycles - 1..];
        let amplitudes: Vec<f64> = last
            .windows(2)
            .map(|w| {
                let seg = &signal[w[0].0..w[1].0];
                let hi = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = seg.iter().copied().fold(f64::INFINITY, f64::min);
                hi - lo
            })
            .collect();
        let first = amplitudes[0];
        let final_amp = amplitudes[amplitudes.len() - 1];
        if final_amp < self.min_amplitude || first <= 0.0 {
            return None;
        }
        if (first - final_amp) / first >= self.max_decay {
            return None;
        }
        let span = last[last.len() - 1].1 - last[0].1;
        Some(span / self.cycles as f64 * dt)
    }
}

/// Geometric gain ladder `k_start, k_start k_factor, ...` up to `k_cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSearch {
    pub k_start: f64,
    pub k_factor: f64,
    pub k_cap: f64,
}

/// Smallest gain on the ladder whose response oscillates in a sustained way.
pub fn ultimate_gain_search<L: ProportionalLoop + ?Sized>(
    plant: &mut L,
    search: GainSearch,
    detector: &OscillationDetector,
) -> Result<UltimateGain> {
    ensure_positive("k_start", search.k_start)?;
    ensure_positive("k_cap", search.k_cap)?;
    if !(search.k_factor > 1.0 && search.k_factor.is_finite()) {
        return Err(Error::NonPositive {
            name: "k_factor - 1",
            value: search.k_factor - 1.0,
        });
    }
    let mut k = search.k_start;
    while k <= search.k_cap {
        let y = plant.run(k)?;
        if let Some(tu) = detector.period(&y, plant.dt()) {
            log::debug!("sustained oscillation at K = {k}, period {tu} s");
            return Ok(UltimateGain { ku: k, tu });
        }
        k *= search.k_factor;
    }
    Err(Error::SearchFailed(format!(
        "no sustained oscillation for gains up to {}",
        search.k_cap
    )))
}

/// One body axis of the simulator under P-only rate control.
#[derive(Debug, Clone)]
pub struct EnvAxisLoop {
    pub aircraft: AircraftConfig,
    pub axis: usize,
    /// deg/s.
    pub setpoint: f64,
    /// Seconds.
    pub duration: f64,
    pub throttle: f64,
    pub noise: bool,
    pub seed: u64,
    /// Control steps between a command and the motors receiving it.
    pub command_delay: usize,
}

impl EnvAxisLoop {
    pub fn new(aircraft: AircraftConfig, axis: usize) -> Self {
        Self {
            aircraft,
            axis,
            setpoint: 50.0,
            duration: 2.0,
            throttle: super::PID_DEFAULT_THROTTLE,
            noise: false,
            seed: 0,
            command_delay: 0,
        }
    }
}

impl ProportionalLoop for EnvAxisLoop {
    fn dt(&self) -> f64 {
        self.aircraft.sim_dt
    }

    fn run(&mut self, kp: f64) -> Result<Vec<f64>> {
        let mut sp = [0.0; 3];
        sp[self.axis] = self.setpoint;
        let mut cfg = EnvConfig::new(
            self.aircraft.clone(),
            TaskSpec::Step {
                setpoint: sp,
                length: self.duration,
            },
        );
        cfg.noise = self.noise;
        let mut env = Env::new(cfg)?;
        let mut g = [[0.0; 3]; 3];
        g[self.axis][0] = kp;
        let gains = PidGains {
            roll: g[0],
            pitch: g[1],
            yaw: g[2],
        };
        let pid = PidController::new(gains, self.aircraft.mixer.clone(), self.aircraft.sim_dt)
            .with_throttle(self.throttle);
        let mut c = Delayed::new(pid, self.command_delay, self.aircraft.motor_count, self.throttle);
        let trace = run_episode(&mut env, &mut c, self.seed)?;
        Ok(trace.rows.iter().map(|r| r.gyro[self.axis]).collect())
    }
}

/// Holds each command back `delay` steps; the motors idle at `throttle` meanwhile.
struct Delayed<C> {
    inner: C,
    delay: usize,
    idle: Vec<f64>,
    queue: VecDeque<ControlOutput>,
}

impl<C: Controller> Delayed<C> {
    fn new(inner: C, delay: usize, motor_count: usize, throttle: f64) -> Self {
        Self {
            inner,
            delay,
            idle: vec![throttle; motor_count],
            queue: VecDeque::new(),
        }
    }
}

impl<C: Controller> Controller for Delayed<C> {
    fn reset(&mut self) {
        self.inner.reset();
        self.queue.clear();
    }

    fn act(&mut self, obs: &Observation) -> Result<ControlOutput> {
        self.queue.push_back(self.inner.act(obs)?);
        if self.queue.len() > self.delay {
            Ok(self.queue.pop_front().expect("non-empty"))
        } else {
            Ok(ControlOutput {
                u: self.idle.clone(),
                raw: None,
            })
        }
    }
}
