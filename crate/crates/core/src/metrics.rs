//! Step-response and integral error metrics over episode traces, plus the
//! flight-envelope scan.
//!
//! Step metrics look at one setpoint change per axis: the first row whose
//! setpoint differs from the previous row (a nonzero setpoint in row 0 counts
//! as a change from rest at `t = 0`). The window runs until the next change.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::{ControlOutput, Controller};
use crate::env::{run_episode, Observation, StepEnv, StepInfo, StepOutcome, TaskSpec};
use crate::error::{ensure_positive, Error, Result};
use crate::task::TaskSchedule;
use crate::trace::EpisodeTrace;

pub const AXES: [&str; 3] = ["roll", "pitch", "yaw"];
pub const DEFAULT_BAND: f64 = 0.1;
pub const DEFAULT_SETTLE: f64 = 0.5;

/// The response to one setpoint change on one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWindow {
    pub start: usize,
    pub end: usize,
    /// Seconds.
    pub t_change: f64,
    pub setpoint: f64,
    /// Rate just before the change.
    pub omega0: f64,
}

impl StepWindow {
    pub fn initial_error(&self) -> f64 {
        self.setpoint - self.omega0
    }
}

pub fn step_window(trace: &EpisodeTrace, axis: usize) -> Option<StepWindow> {
    let rows = &trace.rows;
    let start = (0..rows.len()).find(|&k| {
        let prev = if k == 0 { 0.0 } else { rows[k - 1].setpoint[axis] };
        rows[k].setpoint[axis] != prev
    })?;
    let sp = rows[start].setpoint[axis];
    let end = (start + 1..rows.len())
        .find(|&k| rows[k].setpoint[axis] != sp)
        .unwrap_or(rows.len());
    let (t_change, omega0) = if start == 0 {
        (rows[0].t - trace.dt, 0.0)
    } else {
        (rows[start].t, rows[start - 1].gyro[axis])
    };
    Some(StepWindow {
        start,
        end,
        t_change,
        setpoint: sp,
        omega0,
    })
}

fn progress(trace: &EpisodeTrace, w: &StepWindow, axis: usize) -> Option<Vec<f64>> {
    let e0 = w.initial_error();
    if e0 == 0.0 {
        return None;
    }
    Some(
        trace.rows[w.start..w.end]
            .iter()
            .map(|r| (r.gyro[axis] - w.omega0) / e0)
            .collect(),
    )
}

/// 10% to 90% rise time in ms, `None` when undefined.
pub fn rise_time(trace: &EpisodeTrace, axis: usize) -> Option<f64> {
    let w = step_window(trace, axis)?;
    let p = progress(trace, &w, axis)?;
    let k10 = p.iter().position(|v| *v >= 0.1)?;
    let k90 = p.iter().position(|v| *v >= 0.9)?;
    let t = |k: usize| trace.rows[w.start + k].t;
    Some(((t(k90) - t(k10)) * 1000.0).max(0.0))
}

/// Largest progress toward the setpoint, percent of the initial error.
pub fn peak(trace: &EpisodeTrace, axis: usize) -> Option<f64> {
    let w = step_window(trace, axis)?;
    let p = progress(trace, &w, axis)?;
    Some(100.0 * p.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessFailure {
    pub success: bool,
    /// Mean percent error after settling; 0 on success.
    pub failure_pct: f64,
}

/// Success when every sample `settle_after` seconds past the change stays
/// within `band` of the initial error.
pub fn success_failure(
    trace: &EpisodeTrace,
    axis: usize,
    band: f64,
    settle_after: f64,
) -> Option<SuccessFailure> {
    let w = step_window(trace, axis)?;
    let e0 = w.initial_error().abs();
    if e0 == 0.0 {
        return None;
    }
    let errs: Vec<f64> = settled(trace, &w, settle_after)
        .map(|r| (r.setpoint[axis] - r.gyro[axis]).abs() / e0)
        .collect();
    if errs.is_empty() {
        return None;
    }
    let success = errs.iter().all(|e| *e <= band);
    let failure_pct = if success {
        0.0
    } else {
        100.0 * errs.iter().sum::<f64>() / errs.len() as f64
    };
    Some(SuccessFailure {
        success,
        failure_pct,
    })
}

fn settled<'a>(
    trace: &'a EpisodeTrace,
    w: &StepWindow,
    after: f64,
) -> impl Iterator<Item = &'a crate::trace::TraceRow> {
    let cut = w.t_change + after - 1e-9;
    trace.rows[w.start..w.end].iter().filter(move |r| r.t >= cut)
}

/// Least-squares slope of the rate after the cut, deg/s per second.
pub fn stability_slope(trace: &EpisodeTrace, axis: usize, from: f64) -> Result<f64> {
    let (t0, rows) = match step_window(trace, axis) {
        Some(w) => (w.t_change, &trace.rows[w.start..w.end]),
        None => (trace.rows.first().map_or(0.0, |r| r.t - trace.dt), &trace.rows[..]),
    };
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.t >= t0 + from - 1e-9)
        .map(|r| (r.t, r.gyro[axis]))
        .collect();
    ols_slope(&pts)
}

pub fn ols_slope(pts: &[(f64, f64)]) -> Result<f64> {
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "slope needs at least 2 samples, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all sample times equal".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub mse: f64,
    pub iae: f64,
    pub ise: f64,
    pub itae: f64,
    pub itse: f64,
}

impl ErrorMetrics {
    pub fn from_series(e: &[f64], t: &[f64]) -> Result<Self> {
        if e.is_empty() {
            return Err(Error::InsufficientData("empty error series".into()));
        }
        crate::error::ensure_len(e.len(), t.len())?;
        let mut m = Self::default();
        for (e, t) in e.iter().zip(t) {
            m.iae += e.abs();
            m.ise += e * e;
            m.itae += t * e.abs();
            m.itse += t * e * e;
        }
        let n = e.len() as f64;
        m.mae = m.iae / n;
        m.mse = m.ise / n;
        Ok(m)
    }

    fn fields(&self) -> [f64; 6] {
        [self.mae, self.mse, self.iae, self.ise, self.itae, self.itse]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        Self {
            mae: f[0],
            mse: f[1],
            iae: f[2],
            ise: f[3],
            itae: f[4],
            itse: f[5],
        }
    }

    pub fn mean(items: &[ErrorMetrics]) -> Self {
        let mut acc = [0.0; 6];
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.fields()) {
                *a += v;
            }
        }
        let n = items.len().max(1) as f64;
        Self::from_fields(acc.map(|a| a / n))
    }
}

pub const ERROR_METRIC_NAMES: [&str; 6] = ["MAE", "MSE", "IAE", "ISE", "ITAE", "ITSE"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceErrorMetrics {
    pub axes: [ErrorMetrics; 3],
    pub average: ErrorMetrics,
}

/// Error metrics per axis with time weights in ms from episode start.
pub fn error_metrics(trace: &EpisodeTrace) -> Result<TraceErrorMetrics> {
    let t: Vec<f64> = trace.rows.iter().map(|r| r.t * 1000.0).collect();
    let mut axes = [ErrorMetrics::default(); 3];
    for (ax, slot) in axes.iter_mut().enumerate() {
        let e: Vec<f64> = trace.rows.iter().map(|r| r.error()[ax]).collect();
        *slot = ErrorMetrics::from_series(&e, &t)?;
    }
    Ok(TraceErrorMetrics {
        axes,
        average: ErrorMetrics::mean(&axes),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub success: Option<bool>,
    pub failure_pct: Option<f64>,
    pub rise_ms: Option<f64>,
    pub peak_pct: Option<f64>,
    /// Mean |e| over the step window.
    pub error: Option<f64>,
    pub stability: Option<f64>,
}

pub fn step_metrics(trace: &EpisodeTrace, axis: usize) -> StepMetrics {
    let sf = success_failure(trace, axis, DEFAULT_BAND, DEFAULT_SETTLE);
    let error = step_window(trace, axis).map(|w| {
        let rows = &trace.rows[w.start..w.end];
        rows.iter().map(|r| r.error()[axis].abs()).sum::<f64>() / rows.len() as f64
    });
    StepMetrics {
        success: sf.map(|s| s.success),
        failure_pct: sf.map(|s| s.failure_pct),
        rise_ms: rise_time(trace, axis),
        peak_pct: peak(trace, axis),
        error,
        stability: stability_slope(trace, axis, DEFAULT_SETTLE).ok(),
    }
}

/// Per-episode metrics averaged over episodes; undefined values are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub episodes: usize,
    pub errors: TraceErrorMetrics,
    /// Per axis: success rate, failure %, rise ms, peak %, error, stability.
    pub step: [[Option<f64>; 6]; 3],
}

pub const STEP_METRIC_NAMES: [&str; 6] = ["Success", "Failure", "Rise", "Peak", "Error", "Stability"];

pub fn report(traces: &[EpisodeTrace]) -> Result<MetricsReport> {
    if traces.is_empty() {
        return Err(Error::InsufficientData("no traces to evaluate".into()));
    }
    let per: Vec<TraceErrorMetrics> = traces.iter().map(error_metrics).collect::<Result<_>>()?;
    let axes = [0, 1, 2].map(|ax| ErrorMetrics::mean(&per.iter().map(|p| p.axes[ax]).collect::<Vec<_>>()));
    let errors = TraceErrorMetrics {
        axes,
        average: ErrorMetrics::mean(&axes),
    };

    let mut step = [[None; 6]; 3];
    for (ax, row) in step.iter_mut().enumerate() {
        let sm: Vec<StepMetrics> = traces.iter().map(|t| step_metrics(t, ax)).collect();
        let cols: [Vec<Option<f64>>; 6] = [
            sm.iter().map(|s| s.success.map(|b| if b { 1.0 } else { 0.0 })).collect(),
            sm.iter().map(|s| s.failure_pct).collect(),
            sm.iter().map(|s| s.rise_ms).collect(),
            sm.iter().map(|s| s.peak_pct).collect(),
            sm.iter().map(|s| s.error).collect(),
            sm.iter().map(|s| s.stability).collect(),
        ];
        for (slot, col) in row.iter_mut().zip(cols) {
            let vals: Vec<f64> = col.into_iter().flatten().collect();
            if !vals.is_empty() {
                *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
    }
    Ok(MetricsReport {
        episodes: traces.len(),
        errors,
        step,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl MetricsReport {
    fn rows(&self) -> Vec<(String, [String; 4])> {
        let mut rows = Vec::new();
        for (k, name) in ERROR_METRIC_NAMES.iter().enumerate() {
            let a = self.errors.axes.map(|m| m.fields()[k].to_string());
            rows.push((
                name.to_string(),
                [a[0].clone(), a[1].clone(), a[2].clone(), self.errors.average.fields()[k].to_string()],
            ));
        }
        for (k, name) in STEP_METRIC_NAMES.iter().enumerate() {
            let vals: Vec<Option<f64>> = (0..3).map(|ax| self.step[ax][k]).collect();
            let defined: Vec<f64> = vals.iter().flatten().copied().collect();
            let mean = if defined.is_empty() {
                None
            } else {
                Some(defined.iter().sum::<f64>() / defined.len() as f64)
            };
            rows.push((
                name.to_string(),
                [fmt_opt(vals[0]), fmt_opt(vals[1]), fmt_opt(vals[2]), fmt_opt(mean)],
            ));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,roll,pitch,yaw,mean\n");
        let n = self.episodes.to_string();
        let _ = writeln!(s, "episodes,{n},{n},{n},{n}");
        for (name, v) in self.rows() {
            let _ = writeln!(s, "{name},{}", v.join(","));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let fmt = |v: &str| match v.parse::<f64>() {
            Ok(x) => format!("{x:.4}"),
            Err(_) => v.to_string(),
        };
        let mut s = format!(
            "# per-episode metrics averaged over {} episode(s); ITAE/ITSE weight by t in ms\n",
            self.episodes
        );
        let _ = writeln!(s, "{:<10} {:>14} {:>14} {:>14} {:>14}", "metric", "roll", "pitch", "yaw", "mean");
        for (name, v) in rows {
            let _ = writeln!(
                s,
                "{:<10} {:>14} {:>14} {:>14} {:>14}",
                name,
                fmt(&v[0]),
                fmt(&v[1]),
                fmt(&v[2]),
                fmt(&v[3])
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePoint {
    /// deg/s.
    pub setpoint: [f64; 3],
    /// Mean |e| over the episode and axes, deg/s.
    pub mae: f64,
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeScan {
    pub points: Vec<EnvelopePoint>,
}

impl EnvelopeScan {
    pub fn band_fraction(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().filter(|p| p.in_band).count() as f64 / self.points.len() as f64
    }

    pub fn mean_mae(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().map(|p| p.mae).sum::<f64>() / self.points.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sp_r,sp_p,sp_y,mae,in_band\n");
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.setpoint[0], p.setpoint[1], p.setpoint[2], p.mae, u8::from(p.in_band)
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeParams {
    pub n: usize,
    /// deg/s.
    pub sigma: f64,
    pub seed: u64,
    /// Seconds per step episode.
    pub length: f64,
    pub band: f64,
    pub settle_after: f64,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        Self {
            n: 1000,
            sigma: 300.0,
            seed: 0,
            length: 1.0,
            band: DEFAULT_BAND,
            settle_after: DEFAULT_SETTLE,
        }
    }
}

/// Every axis stays within `band` of its initial error after settling. An
/// axis with zero initial error must track exactly.
fn all_axes_in_band(trace: &EpisodeTrace, band: f64, settle_after: f64) -> bool {
    (0..3).all(|ax| match success_failure(trace, ax, band, settle_after) {
        Some(sf) => sf.success,
        None => trace
            .rows
            .iter()
            .filter(|r| r.t >= settle_after - 1e-9)
            .all(|r| r.error()[ax] == 0.0),
    })
}

/// Step episodes with Normal(0, sigma) setpoints; episode `i` uses seed
/// `seed + i` for both the setpoint draw and the environment.
pub fn envelope_scan<E, F, C>(mut make_env: F, controller: &mut C, p: &EnvelopeParams) -> Result<EnvelopeScan>
where
    E: StepEnv,
    F: FnMut(TaskSpec) -> Result<E>,
    C: Controller + ?Sized,
{
    ensure_positive("sigma", p.sigma)?;
    let normal = Normal::new(0.0, p.sigma).map_err(|e| Error::Degenerate(e.to_string()))?;
    let mut points = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let seed = p.seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let setpoint = [0; 3].map(|_: u8| normal.sample(&mut rng));
        let mut env = make_env(TaskSpec::Step {
            setpoint,
            length: p.length,
        })?;
        let trace = run_episode(&mut env, controller, seed)?;
        let m = error_metrics(&trace)?;
        points.push(EnvelopePoint {
            setpoint,
            mae: m.average.mae,
            in_band: all_axes_in_band(&trace, p.band, p.settle_after),
        });
    }
    Ok(EnvelopeScan { points })
}

/// Test double whose body rate is whatever the first three action entries
/// say, in deg/s. Commands are not clamped.
#[derive(Debug, Clone)]
pub struct RateStubEnv {
    task: TaskSpec,
    schedule: TaskSchedule,
    motor_count: usize,
    dt: f64,
    steps: u64,
    total: u64,
}

impl RateStubEnv {
    pub fn new(task: TaskSpec, motor_count: usize, dt: f64) -> Result<Self> {
        if motor_count < 3 {
            return Err(Error::Length {
                expected: 3,
                actual: motor_count,
            });
        }
        ensure_positive("dt", dt)?;
        let schedule = task.build(0)?;
        Ok(Self {
            task,
            schedule,
            motor_count,
            dt,
            steps: 0,
            total: 0,
        })
    }
}

impl StepEnv for RateStubEnv {
    fn motor_count(&self) -> usize {
        self.motor_count
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.schedule = self.task.build(seed)?;
        self.total = (self.schedule.length() / self.dt).round() as u64;
        self.steps = 0;
        let sp = self.schedule.setpoint_at(0.0);
        Ok(Observation {
            t: 0.0,
            setpoint: sp,
            gyro: [0.0; 3],
            error: sp,
            delta_error: sp,
        })
    }

    fn step_with_raw(&mut self, u: &[f64], _raw: Option<&[f64]>) -> Result<StepOutcome> {
        if self.steps >= self.total {
            return Err(Error::EpisodeDone);
        }
        crate::error::ensure_len(self.motor_count, u.len())?;
        self.steps += 1;
        let t = self.steps as f64 * self.dt;
        let sp = self.schedule.setpoint_at(t);
        let gyro = [u[0], u[1], u[2]];
        let error = [0, 1, 2].map(|ax| sp[ax] - gyro[ax]);
        Ok(StepOutcome {
            obs: Observation {
                t,
                setpoint: sp,
                gyro,
                error,
                delta_error: [0.0; 3],
            },
            reward: 0.0,
            done: self.steps >= self.total,
            info: StepInfo {
                omega_true: gyro,
                rotor_rpm: vec![0.0; self.motor_count],
                rotor_thrust: vec![0.0; self.motor_count],
                rotor_torque: vec![0.0; self.motor_count],
                u_applied: u.to_vec(),
                clamped: 0,
            },
        })
    }
}

/// Commands the setpoint itself; paired with [`RateStubEnv`] it tracks perfectly.
#[derive(Debug, Clone)]
pub struct SetpointOracle {
    pub motor_count: usize,
}

impl Controller for SetpointOracle {
    fn reset(&mut self) {}

    fn act(&mut self, obs: &Observation) -> Result<ControlOutput> {
        let mut u = vec![0.0; self.motor_count];
        u[..3].copy_from_slice(&obs.setpoint);
        Ok(ControlOutput { u, raw: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ZeroController;
    use crate::trace::TraceRow;
    use proptest::prelude::*;
    use rand::Rng;

    fn trace_from(dt: f64, sp: [f64; 3], omega: impl Fn(f64) -> [f64; 3], n: usize) -> EpisodeTrace {
        let mut t = EpisodeTrace::new(dt, 1);
        for k in 1..=n {
            let tk = k as f64 * dt;
            t.push(TraceRow { t: tk, setpoint: sp, gyro: omega(tk), u: vec![0.0], rpm: vec![0.0], reward: 0.0 }).unwrap();
        }
        t
    }

    #[test]
    fn rise_time_first_order_oracle() {
        let tau = 0.1;
        let tr = trace_from(1e-3, [100.0, 0.0, 0.0], |t| [100.0 * (1.0 - (-t / tau).exp()), 0.0, 0.0], 1000);
        let r = rise_time(&tr, 0).unwrap();
        assert!((r - tau * 9f64.ln() * 1000.0).abs() <= 1.0, "{r}");
        assert_eq!(rise_time(&tr, 1), None);
    }

    #[test]
    fn rise_time_edge_cases() {
        let jump = trace_from(1e-3, [10.0; 3], |_| [10.0; 3], 10);
        assert_eq!(rise_time(&jump, 0), Some(0.0));
        let stuck = trace_from(1e-3, [10.0; 3], |_| [5.0; 3], 10);
        assert_eq!(rise_time(&stuck, 0), None);
    }

    #[test]
    fn peak_examples() {
        let tau = 0.05;
        let mono = trace_from(1e-3, [40.0, 0.0, 0.0], |t| [40.0 * (1.0 - (-t / tau).exp()), 0.0, 0.0], 500);
        assert!(peak(&mono, 0).unwrap() <= 100.0);
        let over = trace_from(1e-3, [40.0, 0.0, 0.0], |t| [if t < 0.1 { 48.0 } else { 40.0 }, 0.0, 0.0], 500);
        assert!((peak(&over, 0).unwrap() - 120.0).abs() < 1e-9);
        let flat = trace_from(1e-3, [40.0, 0.0, 0.0], |_| [0.0; 3], 500);
        assert_eq!(peak(&flat, 0), Some(0.0));
    }

    #[test]
    fn success_failure_examples() {
        let exact = trace_from(1e-3, [50.0, 0.0, 0.0], |t| [if t < 0.4 { 20.0 } else { 50.0 }, 0.0, 0.0], 1000);
        assert_eq!(success_failure(&exact, 0, 0.1, 0.5), Some(SuccessFailure { success: true, failure_pct: 0.0 }));
        let short = trace_from(1e-3, [50.0, 0.0, 0.0], |_| [40.0, 0.0, 0.0], 1000);
        let sf = success_failure(&short, 0, 0.1, 0.5).unwrap();
        assert!(!sf.success);
        assert!((sf.failure_pct - 20.0).abs() < 1e-9);
        let osc = trace_from(1e-3, [50.0, 0.0, 0.0], |t| [50.0 + 7.5 * (60.0 * t).sin(), 0.0, 0.0], 1000);
        assert!(!success_failure(&osc, 0, 0.1, 0.5).unwrap().success);
    }

    #[test]
    fn window_uses_rate_before_change() {
        let dt = 1e-3;
        let mut tr = EpisodeTrace::new(dt, 1);
        for k in 1..=1000 {
            let t = k as f64 * dt;
            let sp = if t < 0.5 - 1e-9 { 10.0 } else { 30.0 };
            let g = if t < 0.5 - 1e-9 { 10.0 } else { 30.0 - 20.0 * (-(t - 0.5) / 0.05).exp() };
            tr.push(TraceRow { t, setpoint: [sp, 0.0, 0.0], gyro: [g, 0.0, 0.0], u: vec![0.0], rpm: vec![0.0], reward: 0.0 }).unwrap();
        }
        // the first change is the step from rest at t = 0
        let w = step_window(&tr, 0).unwrap();
        assert_eq!((w.start, w.t_change, w.omega0), (0, 0.0, 0.0));
        assert_eq!(w.end, 499);
    }

    #[test]
    fn slope_examples() {
        let c = trace_from(1e-3, [1.0; 3], |_| [5.0; 3], 1000);
        assert_eq!(stability_slope(&c, 0, 0.5).unwrap(), 0.0);
        let line = trace_from(1e-3, [1.0; 3], |t| [2.0 + 3.0 * (t - 0.5), 0.0, 0.0], 1000);
        assert!((stability_slope(&line, 0, 0.5).unwrap() - 3.0).abs() < 1e-9);
        assert!(stability_slope(&line, 0, 5.0).is_err());
    }

    #[test]
    fn slope_of_noisy_line_within_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64)> = (0..2000)
            .map(|k| {
                let t = k as f64 * 1e-3;
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                (t, 1.0 - 4.0 * t + 0.5 * z)
            })
            .collect();
        let s = ols_slope(&pts).unwrap();
        // standard error = sigma / sqrt(Sxx)
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 2000.0;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        assert!((s + 4.0).abs() < 3.0 * 0.5 / sxx.sqrt(), "{s}");
    }

    #[test]
    fn error_metric_examples() {
        let m = ErrorMetrics::from_series(&[1.0, -2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!((m.iae, m.ise, m.itae, m.itse), (6.0, 14.0, 8.0, 22.0));
        let n = 250;
        let c = ErrorMetrics::from_series(&vec![5.0; n], &vec![0.0; n]).unwrap();
        assert_eq!(c.mae, 5.0);
        assert_eq!(c.iae, 5.0 * n as f64);
        let z = trace_from(1e-3, [3.0; 3], |_| [3.0; 3], 100);
        let zm = error_metrics(&z).unwrap();
        assert_eq!(zm.average, ErrorMetrics::default());
        assert!(ErrorMetrics::from_series(&[], &[]).is_err());
    }

    #[test]
    fn report_text_and_csv() {
        let tr = trace_from(1e-3, [100.0, 0.0, 0.0], |t| [100.0 * (1.0 - (-t / 0.1).exp()), 0.0, 0.0], 1000);
        let r = report(&[tr.clone(), tr]).unwrap();
        let csv = r.to_csv();
        for name in ERROR_METRIC_NAMES {
            assert!(csv.lines().any(|l| l.starts_with(&format!("{name},"))));
        }
        assert!(csv.starts_with("metric,roll,pitch,yaw,mean\nepisodes,2,"));
        let text = r.to_text();
        assert!(text.contains("averaged over 2 episode"));
        assert!(text.contains("ITSE"));
        assert!(report(&[]).is_err());
    }

    #[test]
    fn envelope_oracle_and_frozen() {
        let p = EnvelopeParams { n: 20, ..Default::default() };
        let scan = envelope_scan(|task| RateStubEnv::new(task, 4, 1e-3), &mut SetpointOracle { motor_count: 4 }, &p).unwrap();
        assert_eq!(scan.band_fraction(), 1.0);
        assert_eq!(scan.mean_mae(), 0.0);
        let frozen = envelope_scan(|task| RateStubEnv::new(task, 4, 1e-3), &mut ZeroController { motor_count: 4 }, &p).unwrap();
        assert_eq!(frozen.band_fraction(), 0.0);
        assert!(frozen.to_csv().lines().count() == 21);
    }

    fn random_trace(rng: &mut ChaCha8Rng, n: usize) -> EpisodeTrace {
        let sp = [rng.random_range(-100.0..100.0), 20.0, -5.0];
        let mut t = EpisodeTrace::new(1e-3, 1);
        for k in 1..=n {
            let g = [0, 1, 2].map(|_: i32| rng.random_range(-150.0..150.0));
            t.push(TraceRow { t: k as f64 * 1e-3, setpoint: sp, gyro: g, u: vec![0.0], rpm: vec![0.0], reward: 0.0 }).unwrap();
        }
        t
    }

    proptest! {
        #[test]
        fn cauchy_schwarz(seed in any::<u64>(), n in 1usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = error_metrics(&random_trace(&mut rng, n)).unwrap();
            for a in m.axes {
                prop_assert!(a.ise * n as f64 >= a.iae * a.iae * (1.0 - 1e-12));
            }
        }

        #[test]
        fn duplicated_final_sample_adds_analytic_increment(seed in any::<u64>(), n in 2usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tr = random_trace(&mut rng, n);
            let mut ext = tr.clone();
            let mut last = tr.rows.last().unwrap().clone();
            last.t += tr.dt;
            ext.rows.push(last.clone());
            let a = error_metrics(&tr).unwrap();
            let b = error_metrics(&ext).unwrap();
            for ax in 0..3 {
                let e = last.error()[ax];
                let tms = last.t * 1000.0;
                let tol = |x: f64| 1e-9 * x.abs().max(1.0);
                prop_assert!((b.axes[ax].iae - a.axes[ax].iae - e.abs()).abs() <= tol(b.axes[ax].iae));
                prop_assert!((b.axes[ax].ise - a.axes[ax].ise - e * e).abs() <= tol(b.axes[ax].ise));
                prop_assert!((b.axes[ax].itae - a.axes[ax].itae - tms * e.abs()).abs() <= tol(b.axes[ax].itae));
                prop_assert!((b.axes[ax].itse - a.axes[ax].itse - tms * e * e).abs() <= tol(b.axes[ax].itse));
            }
            // a response that already settled keeps its rise time and peak
            prop_assert_eq!(rise_time(&tr, 0), rise_time(&ext, 0));
            prop_assert_eq!(peak(&tr, 0).is_some(), peak(&ext, 0).is_some());
        }

        #[test]
        fn rise_time_scale_invariant(scale in 0.01..100.0f64, tau in 0.02..0.3f64) {
            let base = trace_from(1e-3, [1.0, 0.0, 0.0], |t| [1.0 - (-t / tau).exp(), 0.0, 0.0], 2000);
            let scaled = trace_from(1e-3, [scale, 0.0, 0.0], |t| [scale * (1.0 - (-t / tau).exp()), 0.0, 0.0], 2000);
            let (a, b) = (rise_time(&base, 0).unwrap(), rise_time(&scaled, 0).unwrap());
            prop_assert!((a - b).abs() <= 1.0 + 1e-9);
        }
    }
}
