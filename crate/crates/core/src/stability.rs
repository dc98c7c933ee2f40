//! Body-drift metric over multi-link pose logs and the motor-permutation sweep.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};

use crate::config::AircraftConfig;
use crate::env::{Env, EnvConfig, StepEnv, TaskSpec};
use crate::error::{Error, Result};

pub const MAX_SWEEP_MOTORS: usize = 16;
pub const DEFAULT_SWEEP_LENGTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseLog {
    pub links: Vec<String>,
    pub times: Vec<f64>,
    /// One position per link per time step, meters.
    pub frames: Vec<Vec<Vector3<f64>>>,
}

impl PoseLog {
    pub fn delta_series(&self) -> Result<Vec<f64>> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::InsufficientData("empty pose log".into()))?;
        let d0 = distance_matrix(first);
        self.frames
            .iter()
            .map(|f| delta(&distance_matrix(f), &d0))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,link,x,y,z\n");
        for (t, frame) in self.times.iter().zip(&self.frames) {
            for (name, p) in self.links.iter().zip(frame) {
                let _ = writeln!(s, "{t},{name},{},{},{}", p.x, p.y, p.z);
            }
        }
        s
    }
}

/// Pairwise Euclidean distances.
pub fn distance_matrix(v: &[Vector3<f64>]) -> DMatrix<f64> {
    let n = v.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let x = (v[i] - v[j]).norm();
            d[(i, j)] = x;
            d[(j, i)] = x;
        }
    }
    d
}

/// Sum over the full matrix of `|D_t - D_0|`, so every pair counts twice.
pub fn delta(d_t: &DMatrix<f64>, d_0: &DMatrix<f64>) -> Result<f64> {
    if d_t.shape() != d_0.shape() {
        return Err(Error::Dimension(format!(
            "distance matrices {:?} and {:?}",
            d_t.shape(),
            d_0.shape()
        )));
    }
    Ok(d_t.iter().zip(d_0.iter()).map(|(a, b)| (a - b).abs()).sum())
}

/// Every on/off motor pattern in lexicographic order, motor 0 most significant.
pub fn permutation_actions(m: usize) -> Result<Vec<Vec<f64>>> {
    if m > MAX_SWEEP_MOTORS {
        return Err(Error::TooManyMotors(m));
    }
    Ok((0..1usize << m)
        .map(|bits| {
            (0..m)
                .map(|i| if bits >> (m - 1 - i) & 1 == 1 { 1.0 } else { 0.0 })
                .collect()
        })
        .collect())
}

pub fn action_label(a: &[f64]) -> String {
    a.iter().map(|v| if *v > 0.5 { '1' } else { '0' }).collect()
}

/// Supplies link positions as an episode runs.
pub trait PoseSource {
    fn reset(&mut self) {}
    /// Link positions after step `step` (0 is the reset pose).
    fn poses(&mut self, step: usize) -> Result<Vec<Vector3<f64>>>;
}

/// Hub and motor mounts of the built-in airframe, fixed in the body frame.
#[derive(Debug, Clone)]
pub struct RigidPoseSource {
    links: Vec<Vector3<f64>>,
}

impl RigidPoseSource {
    pub fn from_config(cfg: &AircraftConfig) -> Self {
        let m = cfg.motor_count.max(1);
        let mut links = vec![Vector3::from(cfg.center_of_thrust_offset)];
        for i in 0..m {
            let a = std::f64::consts::FRAC_PI_4 + i as f64 * std::f64::consts::TAU / m as f64;
            links.push(Vector3::new(cfg.arm_length * a.cos(), cfg.arm_length * a.sin(), 0.0));
        }
        Self { links }
    }
}

impl PoseSource for RigidPoseSource {
    fn poses(&mut self, _step: usize) -> Result<Vec<Vector3<f64>>> {
        Ok(self.links.clone())
    }
}

/// Three collinear links 1 m apart; the last one slides outward by `rate`
/// meters per step.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticDrift {
    pub rate: f64,
}

impl PoseSource for SyntheticDrift {
    fn poses(&mut self, step: usize) -> Result<Vec<Vector3<f64>>> {
        Ok(vec![
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0 + self.rate * step as f64, 0.0, 0.0),
        ])
    }
}

impl SyntheticDrift {
    pub fn log(&self, steps: usize, dt: f64) -> PoseLog {
        let mut me = *self;
        PoseLog {
            links: vec!["hub".into(), "mid".into(), "tip".into()],
            times: (0..=steps).map(|k| k as f64 * dt).collect(),
            frames: (0..=steps).map(|k| me.poses(k).expect("infallible")).collect(),
        }
    }
}

/// Replays a recorded log; steps past its end hold the last frame.
#[derive(Debug, Clone)]
pub struct LogPoseSource {
    pub log: PoseLog,
}

impl PoseSource for LogPoseSource {
    fn poses(&mut self, step: usize) -> Result<Vec<Vector3<f64>>> {
        let k = step.min(self.log.frames.len().saturating_sub(1));
        self.log
            .frames
            .get(k)
            .cloned()
            .ok_or_else(|| Error::InsufficientData("empty pose log".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityPoint {
    pub action: String,
    pub t: f64,
    /// True body rate, deg/s.
    pub omega: [f64; 3],
    pub delta: f64,
}

/// Run one fixed-action episode per motor permutation and record the body
/// rate and drift after every step.
pub fn stability_sweep<S: PoseSource + ?Sized>(
    aircraft: &AircraftConfig,
    source: &mut S,
    length: f64,
) -> Result<Vec<StabilityPoint>> {
    let actions = permutation_actions(aircraft.motor_count)?;
    let mut cfg = EnvConfig::new(
        aircraft.clone(),
        TaskSpec::Step {
            setpoint: [0.0; 3],
            length,
        },
    );
    cfg.noise = false;
    let mut env = Env::new(cfg)?;
    let mut out = Vec::new();
    for (i, a) in actions.iter().enumerate() {
        env.reset(i as u64)?;
        source.reset();
        let d0 = distance_matrix(&source.poses(0)?);
        let label = action_label(a);
        let mut step = 0;
        loop {
            let o = env.step(a)?;
            step += 1;
            out.push(StabilityPoint {
                action: label.clone(),
                t: o.obs.t,
                omega: o.info.omega_true,
                delta: delta(&distance_matrix(&source.poses(step)?), &d0)?,
            });
            if o.done {
                break;
            }
        }
    }
    Ok(out)
}

pub fn points_to_csv(points: &[StabilityPoint]) -> String {
    let mut s = String::from("action,t,omega_r,omega_p,omega_y,delta\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p.action, p.t, p.omega[0], p.omega[1], p.omega[2], p.delta
        );
    }
    s
}

#[derive(Debug, serde::Deserialize)]
struct PoseRecord {
    t: f64,
    link: String,
    x: f64,
    y: f64,
    z: f64,
}

pub fn parse_pose_log<R: std::io::Read>(reader: R) -> Result<PoseLog> {
    let mut r = csv::Reader::from_reader(reader);
    let mut times: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<(String, Vector3<f64>)>> = Vec::new();
    for rec in r.deserialize() {
        let rec: PoseRecord = rec?;
        if times.last() != Some(&rec.t) {
            if times.last().is_some_and(|last| rec.t < *last) {
                return Err(Error::Parse(format!("time goes backwards at t = {}", rec.t)));
            }
            times.push(rec.t);
            groups.push(Vec::new());
        }
        groups
            .last_mut()
            .expect("pushed above")
            .push((rec.link, Vector3::new(rec.x, rec.y, rec.z)));
    }
    let first = groups
        .first()
        .ok_or_else(|| Error::Parse("pose log has no rows".into()))?;
    let links: Vec<String> = first.iter().map(|(n, _)| n.clone()).collect();
    let mut sorted = links.clone();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parse(format!("duplicate link at t = {}", times[0])));
    }
    let mut frames = Vec::with_capacity(groups.len());
    for (t, g) in times.iter().zip(&groups) {
        let mut names: Vec<&String> = g.iter().map(|(n, _)| n).collect();
        names.sort();
        if names.len() != sorted.len() || names.iter().zip(&sorted).any(|(a, b)| *a != b) {
            return Err(Error::Parse(format!("ragged link set at t = {t}")));
        }
        let frame = links
            .iter()
            .map(|name| g.iter().find(|(n, _)| n == name).expect("checked").1)
            .collect();
        frames.push(frame);
    }
    Ok(PoseLog {
        links,
        times,
        frames,
    })
}

pub fn ingest_pose_log(path: impl AsRef<Path>) -> Result<PoseLog> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pose_log(std::io::BufReader::new(f))
}
