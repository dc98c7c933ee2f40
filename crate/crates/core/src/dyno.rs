//! Virtual dynamometer: motor experiments, load-cell math, curve fitting,
//! coefficient derivation and model validation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::propulsion::{self, eval_poly, motor_response_step, rpm_to_rad_s, MotorParams, MotorState};

pub const STEP_LEVELS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
/// Seconds at the commanded level, then the same again at zero.
pub const STEP_ON: f64 = 1.0;
pub const RAMP_HALF: f64 = 20.0;
pub const DEFAULT_RHO: f64 = 1.225;
pub const DEFAULT_DIAMETER: f64 = 0.1295;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynoRow {
    pub t: f64,
    pub u: f64,
    pub rpm: f64,
    pub thrust: f64,
    pub torque: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynoTrace {
    pub dt: f64,
    pub rows: Vec<DynoRow>,
}

impl DynoTrace {
    pub fn max_rpm(&self) -> f64 {
        self.rows.iter().map(|r| r.rpm).fold(0.0, f64::max)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "u", "rpm", "thrust", "torque"])?;
        for r in &self.rows {
            w.write_record([r.t, r.u, r.rpm, r.thrust, r.torque].map(|v| v.to_string()))?;
        }
        w.into_inner()
            .map_err(|e| Error::Parse(format!("csv flush failed: {e}")))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, &self.to_csv_bytes()?)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows: Vec<DynoRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.iter().any(|r| r.rpm < 0.0) {
            return Err(Error::Parse("negative RPM in dyno trace".into()));
        }
        let dt = match rows.as_slice() {
            [a, b, ..] => b.t - a.t,
            _ => 0.0,
        };
        Ok(Self { dt, rows })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(std::io::BufReader::new(f))
    }

    /// Linear interpolation of every channel at time `t` (clamped to the ends).
    pub fn sample_at(&self, t: f64) -> Option<DynoRow> {
        let rows = &self.rows;
        let first = rows.first()?;
        let last = rows.last()?;
        if t <= first.t {
            return Some(*first);
        }
        if t >= last.t {
            return Some(*last);
        }
        let k = rows.partition_point(|r| r.t <= t);
        let (a, b) = (rows[k - 1], rows[k]);
        let f = (t - a.t) / (b.t - a.t);
        let lerp = |x: f64, y: f64| x + f * (y - x);
        Some(DynoRow {
            t,
            u: lerp(a.u, b.u),
            rpm: lerp(a.rpm, b.rpm),
            thrust: lerp(a.thrust, b.thrust),
            torque: lerp(a.torque, b.torque),
        })
    }
}

/// Load-cell constants: N·m per count for the two torque cells, N per count
/// for the thrust cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCellCal {
    pub k_tau1: f64,
    pub k_tau2: f64,
    pub k_t: f64,
}

/// Mean magnitude of the two torque-arm cells.
pub fn torque_from_cells(ls1: f64, ls2: f64, cal: &LoadCellCal) -> f64 {
    ((cal.k_tau1 * ls1).abs() + (cal.k_tau2 * ls2).abs()) / 2.0
}

pub fn thrust_from_cell(ls: f64, cal: &LoadCellCal) -> f64 {
    (cal.k_t * ls).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Load,
    Unload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalPoint {
    /// Known applied load.
    pub applied: f64,
    /// Raw cell reading.
    pub reading: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCal {
    /// Load per count.
    pub slope: f64,
    pub intercept: f64,
    /// `applied - (slope reading + intercept)` per point.
    pub residuals: Vec<f64>,
    pub hysteresis: bool,
    /// Largest load/unload reading gap as a fraction of the reading span.
    pub max_hysteresis: f64,
}

/// Least-squares `applied = slope * reading + intercept`.
///
/// Load and unload readings at the same applied value differing by more than
/// `hysteresis_tol` of the reading span set the hysteresis flag.
pub fn calibrate_linear(points: &[CalPoint], hysteresis_tol: f64) -> Result<LinearCal> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "calibration needs at least 2 points, got {}",
            points.len()
        )));
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.reading, p.applied)).collect();
    let (slope, intercept) = line_fit(&xy)?;
    let residuals = points
        .iter()
        .map(|p| p.applied - (slope * p.reading + intercept))
        .collect();

    let lo = points.iter().map(|p| p.reading).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.reading).fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let mut max_gap: f64 = 0.0;
    for l in points.iter().filter(|p| p.phase == Phase::Load) {
        for u in points.iter().filter(|p| p.phase == Phase::Unload && p.applied == l.applied) {
            max_gap = max_gap.max((l.reading - u.reading).abs() / span);
        }
    }
    Ok(LinearCal {
        slope,
        intercept,
        residuals,
        hysteresis: max_gap > hysteresis_tol,
        max_hysteresis: max_gap,
    })
}

fn line_fit(xy: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all calibration readings are equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

pub fn read_calibration_csv(path: impl AsRef<Path>) -> Result<Vec<CalPoint>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(f));
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn row(t: f64, u: f64, rpm: f64, p: &MotorParams) -> DynoRow {
    let thrust = propulsion::thrust(rpm_to_rad_s(rpm), p.k_t);
    DynoRow {
        t,
        u,
        rpm,
        thrust,
        torque: propulsion::torque(thrust, p.k_q),
    }
}

/// Drive the motor model with `u(t)`; row `k` is the state after step `k + 1`.
pub fn run_motor(p: &MotorParams, dt: f64, steps: usize, u: impl Fn(f64) -> f64) -> DynoTrace {
    let mut s = MotorState::default();
    let mut rows = Vec::with_capacity(steps);
    for k in 1..=steps {
        let t = k as f64 * dt;
        let uk = u(t);
        s = motor_response_step(s, p.throttle_to_target(uk), p, dt);
        rows.push(row(t, uk, s.omega, p));
    }
    DynoTrace { dt, rows }
}

fn step_command(level: f64) -> impl Fn(f64) -> f64 {
    move |t| if t <= STEP_ON + 1e-12 { level } else { 0.0 }
}

/// One second at each level then one second at zero.
pub fn step_experiment(p: &MotorParams, levels: &[f64], dt: f64) -> Result<Vec<DynoTrace>> {
    ensure_positive("dt", dt)?;
    let steps = (2.0 * STEP_ON / dt).round() as usize;
    Ok(levels
        .iter()
        .map(|&level| run_motor(p, dt, steps, step_command(level)))
        .collect())
}

/// Triangular throttle: 0 to 1 over 20 s and back over 20 s.
pub fn ramp_experiment(p: &MotorParams, dt: f64) -> Result<DynoTrace> {
    ensure_positive("dt", dt)?;
    let steps = (2.0 * RAMP_HALF / dt).round() as usize;
    Ok(run_motor(p, dt, steps, ramp_command))
}

pub fn ramp_command(t: f64) -> f64 {
    if t <= RAMP_HALF {
        t / RAMP_HALF
    } else {
        ((2.0 * RAMP_HALF - t) / RAMP_HALF).max(0.0)
    }
}

/// Mean RPM over the last quarter of the on segment.
pub fn steady_rpm(trace: &DynoTrace, on_duration: f64) -> Result<f64> {
    let vals: Vec<f64> = trace
        .rows
        .iter()
        .filter(|r| r.t > 0.75 * on_duration && r.t <= on_duration + 1e-12)
        .map(|r| r.rpm)
        .collect();
    if vals.is_empty() {
        return Err(Error::InsufficientData("no samples in the plateau window".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Least-squares polynomial, coefficients highest degree first.
pub fn fit_throttle_curve(points: &[(f64, f64)], degree: usize) -> Result<Vec<f64>> {
    if points.len() < degree + 1 {
        return Err(Error::InsufficientData(format!(
            "degree {degree} fit needs {} points, got {}",
            degree + 1,
            points.len()
        )));
    }
    let a = DMatrix::from_fn(points.len(), degree + 1, |r, c| {
        points[r].0.powi((degree - c) as i32)
    });
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if min_sv <= max_sv * 1e-12 {
        return Err(Error::InsufficientData(
            "throttle points do not determine the polynomial".into(),
        ));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    pub c_t: f64,
    pub c_q: f64,
    /// N/(rad/s)^2.
    pub k_t: f64,
    /// m.
    pub k_q: f64,
    pub rho: f64,
    pub diameter: f64,
}

/// Coefficients at `n = omega_max / 60` rev/s and the model constants.
pub fn derive_constants(max_thrust: f64, max_torque: f64, omega_max_rpm: f64, rho: f64, d: f64) -> Result<Constants> {
    ensure_positive("max thrust", max_thrust)?;
    ensure_positive("max torque", max_torque)?;
    ensure_positive("omega_max", omega_max_rpm)?;
    let n = omega_max_rpm / 60.0;
    let c_t = propulsion::ct(max_thrust, rho, n, d)?;
    let c_q = propulsion::cq(max_torque, rho, n, d)?;
    Ok(Constants {
        c_t,
        c_q,
        k_t: propulsion::kt_from_ct(c_t, rho, d)?,
        k_q: propulsion::kq_from_coeffs(c_t, c_q, d)?,
        rho,
        diameter: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Validation {
    pub rpm_mae: f64,
    /// `rpm_mae` as a percent of the reference's peak RPM.
    pub rpm_pct: f64,
    pub thrust_mae: f64,
    pub torque_mae: f64,
}

/// Compare on the simulated trace's time grid, interpolating the reference.
pub fn validate_model(sim: &DynoTrace, reference: &DynoTrace) -> Result<Validation> {
    if sim.rows.is_empty() || reference.rows.is_empty() {
        return Err(Error::InsufficientData("empty dyno trace".into()));
    }
    let mut acc = [0.0; 3];
    for r in &sim.rows {
        let q = reference.sample_at(r.t).expect("non-empty");
        acc[0] += (r.rpm - q.rpm).abs();
        acc[1] += (r.thrust - q.thrust).abs();
        acc[2] += (r.torque - q.torque).abs();
    }
    let n = sim.rows.len() as f64;
    let rpm_mae = acc[0] / n;
    let peak = reference.max_rpm();
    Ok(Validation {
        rpm_mae,
        rpm_pct: if peak > 0.0 { 100.0 * rpm_mae / peak } else { 0.0 },
        thrust_mae: acc[1] / n,
        torque_mae: acc[2] / n,
    })
}

/// Stand-in for a measured motor: first-order lag with separate spin-up and
/// spin-down time constants, a slew limit, an ESC dead time and additive RPM
/// measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceMotor {
    /// RPM(u), highest degree first.
    pub throttle_curve: Vec<f64>,
    pub tau_up: f64,
    pub tau_down: f64,
    /// RPM per second.
    pub max_accel: f64,
    /// Seconds.
    pub latency: f64,
    /// RPM.
    pub noise_std: f64,
    pub k_t: f64,
    pub k_q: f64,
}

impl ReferenceMotor {
    /// A plausible 5-inch racing motor on the given throttle curve.
    pub fn racing(throttle_curve: Vec<f64>, k_t: f64, k_q: f64) -> Self {
        Self {
            throttle_curve,
            tau_up: 0.04,
            tau_down: 0.02,
            max_accel: 300_000.0,
            latency: 0.004,
            noise_std: 60.0,
            k_t,
            k_q,
        }
    }

    pub fn run(&self, dt: f64, steps: usize, u: impl Fn(f64) -> f64, seed: u64) -> Result<DynoTrace> {
        ensure_positive("dt", dt)?;
        let noise = Normal::new(0.0, self.noise_std.max(0.0)).map_err(|e| Error::Degenerate(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delay = (self.latency / dt).round() as usize;
        let mut omega: f64 = 0.0;
        let mut rows = Vec::with_capacity(steps);
        for k in 1..=steps {
            let t = k as f64 * dt;
            let uk = u(t);
            let u_eff = if k > delay { u((k - delay) as f64 * dt) } else { 0.0 };
            let target = eval_poly(&self.throttle_curve, u_eff.clamp(0.0, 1.0)).max(0.0);
            let tau = if target > omega { self.tau_up } else { self.tau_down };
            let mut d = (target - omega) * (1.0 - (-dt / tau).exp());
            if d > 0.0 {
                d = d.min(self.max_accel * dt);
            }
            omega = (omega + d).max(0.0);
            let measured = (omega + noise.sample(&mut rng)).max(0.0);
            let thrust = propulsion::thrust(rpm_to_rad_s(measured), self.k_t);
            rows.push(DynoRow {
                t,
                u: uk,
                rpm: measured,
                thrust,
                torque: propulsion::torque(thrust, self.k_q),
            });
        }
        Ok(DynoTrace { dt, rows })
    }

    pub fn step_experiment(&self, levels: &[f64], dt: f64, seed: u64) -> Result<Vec<DynoTrace>> {
        let steps = (2.0 * STEP_ON / dt).round() as usize;
        levels
            .iter()
            .enumerate()
            .map(|(i, &level)| self.run(dt, steps, step_command(level), seed.wrapping_add(i as u64)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFit {
    pub motor: MotorParams,
    /// Per-level RPM percent error after fitting.
    pub pct_errors: Vec<f64>,
}

/// Fit `response_scale`, `f_min` and `f_max` so the model's step responses
/// track the reference step traces, by deterministic pattern search in log
/// space minimizing the summed squared per-level percent errors.
pub fn fit_motor_response(base: &MotorParams, levels: &[f64], references: &[DynoTrace]) -> Result<ResponseFit> {
    crate::error::ensure_len(levels.len(), references.len())?;
    let dt = references
        .first()
        .map(|r| r.dt)
        .ok_or_else(|| Error::InsufficientData("no reference traces".into()))?;
    ensure_positive("reference dt", dt)?;

    let with = |x: [f64; 3]| MotorParams {
        response_scale: x[0],
        f_min: -x[1],
        f_max: x[2],
        ..base.clone()
    };
    let errors = |x: [f64; 3]| -> Result<Vec<f64>> {
        let m = with(x);
        step_experiment(&m, levels, dt)?
            .iter()
            .zip(references)
            .map(|(s, r)| validate_model(s, r).map(|v| v.rpm_pct))
            .collect()
    };
    let cost = |x: [f64; 3]| -> Result<f64> { Ok(errors(x)?.iter().map(|e| e * e).sum()) };

    // coarse scan of the gain with the clamps open, so the local search
    // starts in the right basin
    let open = 1e7;
    let mut x = [base.response_scale, open, open];
    let mut best = cost(x)?;
    for k in -20..=40 {
        let y = [base.response_scale * 2f64.powi(k), open, open];
        let c = cost(y)?;
        if c < best {
            best = c;
            x = y;
        }
    }
    // tighten the clamps to the largest per-step changes the open model makes
    let mut up: f64 = 0.0;
    let mut down: f64 = 0.0;
    for tr in step_experiment(&with(x), levels, dt)? {
        for w in tr.rows.windows(2) {
            let d = (w[1].rpm - w[0].rpm) * propulsion::DT_REF / dt;
            up = up.max(d);
            down = down.max(-d);
        }
    }
    x[1] = down.max(1.0) * 1.001;
    x[2] = up.max(1.0) * 1.001;
    best = cost(x)?;
    let mut step: f64 = 4.0;
    while step > 1.0005 {
        let mut improved = false;
        for i in 0..3 {
            for f in [step, 1.0 / step] {
                let mut y = x;
                y[i] *= f;
                let c = cost(y)?;
                if c < best {
                    best = c;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step = step.sqrt();
        }
    }
    Ok(ResponseFit {
        pct_errors: errors(x)?,
        motor: with(x),
    })
}

/// RPM from a tachometer voltage trace: rising edges through `threshold`,
/// every `blades` edges make one rotation.
pub fn rpm_from_pulses(samples: &[(f64, f64)], blades: usize, threshold: f64) -> Result<Vec<(f64, f64)>> {
    if blades == 0 {
        return Err(Error::NonPositive { name: "blade count", value: 0.0 });
    }
    let edges: Vec<f64> = samples
        .windows(2)
        .filter(|w| w[0].1 < threshold && w[1].1 >= threshold)
        .map(|w| w[1].0)
        .collect();
    if edges.is_empty() {
        return Err(Error::InsufficientData("no pulse edges found".into()));
    }
    Ok(edges
        .iter()
        .enumerate()
        .skip(blades)
        .filter(|(i, _)| i % blades == 0)
        .map(|(i, &t)| (t, 60.0 / (t - edges[i - blades])))
        .collect())
}
