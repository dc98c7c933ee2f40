//! Aircraft description ("digital twin" parameter file).
//!
//! The on-disk format is TOML. Plain values come first, then the optional
//! `[gyro_noise]` and `[pid]` tables, then one `[[motor]]` section per rotor.
//! Unknown keys are rejected so that typos surface as errors instead of
//! silently falling back to defaults.

use std::fmt;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::control::PidGains;
use crate::error::{ensure_positive, Error, Result};
use crate::propulsion::MotorParams;

const IRIS_CH3: &str = include_str!("../presets/iris-ch3.toml");
const NF1_CH5: &str = include_str!("../presets/nf1-ch5.toml");

/// Names accepted by [`AircraftConfig::preset`].
pub const PRESET_NAMES: [&str; 2] = ["iris-ch3", "nf1-ch5"];

/// Per-axis gyro noise, degrees/second. Axis order is roll, pitch, yaw.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// Mixer rows `[roll, pitch, yaw]`, one per motor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixerTable(pub Vec<[f64; 3]>);

impl MixerTable {
    pub fn rows(&self) -> &[[f64; 3]] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftConfig {
    #[serde(default)]
    pub name: String,
    pub motor_count: usize,
    /// Arm length `l`, meters.
    pub arm_length: f64,
    /// Thrust factor `B`, N/(rad/s)^2.
    pub thrust_factor: f64,
    /// Physics step, seconds.
    pub sim_dt: f64,
    /// Meters. Carried for documentation; the simulator pivots about the center of thrust.
    #[serde(default)]
    pub center_of_thrust_offset: [f64; 3],
    /// Body inertia tensor, kg·m².
    pub inertia: [[f64; 3]; 3],
    pub mixer: MixerTable,
    #[serde(default)]
    pub gyro_noise: NoiseParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pid: Option<PidGains>,
    #[serde(rename = "motor")]
    pub motors: Vec<MotorParams>,
}

/// One failed invariant, addressed by a field path such as `motor[2].k_t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub(crate) fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl AircraftConfig {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        let i = &self.inertia;
        Matrix3::new(
            i[0][0], i[0][1], i[0][2], i[1][0], i[1][1], i[1][2], i[2][0], i[2][1], i[2][2],
        )
    }

    pub fn spin_dirs(&self) -> Vec<f64> {
        self.motors.iter().map(|m| m.spin_dir).collect()
    }

    /// Parse and validate config text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: AircraftConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let violations = validate(&cfg);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        let spin_sum: f64 = cfg.spin_dirs().iter().sum();
        if cfg.motor_count == 4 && spin_sum != 0.0 {
            log::warn!(
                "spin directions of '{}' sum to {spin_sum}; a standard quadcopter balances them",
                cfg.name
            );
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Built-in presets: `iris-ch3` (alias `iris`) and `nf1-ch5` (alias `nf1`).
    pub fn preset(name: &str) -> Option<Self> {
        let text = match name {
            "iris" | "iris-ch3" => IRIS_CH3,
            "nf1" | "nf1-ch5" => NF1_CH5,
            _ => return None,
        };
        Some(Self::from_toml_str(text).expect("shipped presets are valid"))
    }

    /// Preset name if one matches, otherwise a file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::preset(name_or_path) {
            Some(cfg) => Ok(cfg),
            None => load_aircraft_config(name_or_path),
        }
    }
}

pub fn load_aircraft_config(path: impl AsRef<Path>) -> Result<AircraftConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AircraftConfig::from_toml_str(&text)
}

/// Every invariant violation in `cfg`; empty when the config is usable.
pub fn validate(cfg: &AircraftConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = cfg.motor_count;

    if m < 1 {
        out.push(Violation::new("motor_count", "must be at least 1"));
    }
    if cfg.motors.len() != m {
        out.push(Violation::new(
            "motor",
            format!("{} motor sections for motor_count {m}", cfg.motors.len()),
        ));
    }
    if cfg.mixer.len() != m {
        out.push(Violation::new(
            "mixer",
            format!("{} rows for motor_count {m}", cfg.mixer.len()),
        ));
    }
    for (i, row) in cfg.mixer.rows().iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !(-1.0..=1.0).contains(v) {
                out.push(Violation::new(
                    format!("mixer[{i}][{j}]"),
                    format!("{v} outside [-1, 1]"),
                ));
            }
        }
    }
    if !(cfg.sim_dt > 0.0 && cfg.sim_dt.is_finite()) {
        out.push(Violation::new("sim_dt", "must be positive"));
    }
    if !(cfg.arm_length > 0.0 && cfg.arm_length.is_finite()) {
        out.push(Violation::new("arm_length", "must be positive"));
    }
    if !(cfg.thrust_factor > 0.0 && cfg.thrust_factor.is_finite()) {
        out.push(Violation::new("thrust_factor", "must be positive"));
    }
    if let Some(msg) = inertia_problem(&cfg.inertia_matrix()) {
        out.push(Violation::new("inertia", msg));
    }
    for (ax, s) in cfg.gyro_noise.std.iter().enumerate() {
        if !(*s >= 0.0) {
            out.push(Violation::new(
                format!("gyro_noise.std[{ax}]"),
                "must be non-negative",
            ));
        }
    }
    if cfg.gyro_noise.mean.iter().any(|v| !v.is_finite()) {
        out.push(Violation::new("gyro_noise.mean", "must be finite"));
    }
    for (i, motor) in cfg.motors.iter().enumerate() {
        for (field, msg) in motor.violations() {
            out.push(Violation::new(format!("motor[{i}].{field}"), msg));
        }
    }
    out
}

fn inertia_problem(i: &Matrix3<f64>) -> Option<String> {
    if i.iter().any(|v| !v.is_finite()) {
        return Some("entries must be finite".into());
    }
    let asym = (i - i.transpose()).abs().max();
    if asym > 1e-12 * i.abs().max().max(f64::MIN_POSITIVE) {
        return Some("must be symmetric".into());
    }
    if i.cholesky().is_none() {
        return Some("must be positive-definite".into());
    }
    None
}

/// Scale a unit-density mesh inertia into physical units:
/// `I = I_mesh * unit_scale^2 * mass / volume`.
pub fn scale_inertia(
    i_mesh: &Matrix3<f64>,
    unit_scale: f64,
    mass: f64,
    volume: f64,
) -> Result<Matrix3<f64>> {
    ensure_positive("unit_scale", unit_scale)?;
    ensure_positive("mass", mass)?;
    ensure_positive("volume", volume)?;
    Ok(i_mesh * (unit_scale * unit_scale * mass / volume))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nf1() -> AircraftConfig {
        AircraftConfig::preset("nf1").unwrap()
    }

    #[test]
    fn presets_validate_clean() {
        for name in PRESET_NAMES {
            let cfg = AircraftConfig::preset(name).unwrap();
            assert!(validate(&cfg).is_empty(), "{name}");
            assert_eq!(cfg.name, name);
        }
    }

    #[test]
    fn nf1_carries_table_constants() {
        let cfg = nf1();
        assert_eq!(cfg.motor_count, 4);
        for m in &cfg.motors {
            assert_eq!(m.k_t, 9.37e-7);
            assert_eq!(m.k_q, 8.64e-3);
            assert_eq!(m.kp, 1e-4);
            assert_eq!(m.ki, 0.0);
            assert_eq!(m.kd, 0.0);
            assert_eq!(m.throttle_curve, vec![-14229.32, 39125.59, 86.67]);
            assert_eq!(m.omega_max, 25042.0);
        }
        assert_eq!(cfg.gyro_noise.mean, [-0.2546, 0.2419, 0.079]);
        assert_eq!(cfg.gyro_noise.std, [1.3373, 0.9990, 1.4516]);
        let pid = cfg.pid.unwrap();
        assert_eq!(pid.roll, [2.4, 33.24, 0.033]);
        assert_eq!(pid.pitch, [4.2, 64.33, 0.059]);
        assert_eq!(pid.yaw, [2.0, 5.0, 0.0]);
    }

    #[test]
    fn iris_carries_mixer_and_gains() {
        let cfg = AircraftConfig::preset("iris").unwrap();
        let pid = cfg.pid.unwrap();
        assert_eq!(pid.roll, [2.0, 10.0, 0.005]);
        assert_eq!(pid.pitch, [10.0, 10.0, 0.005]);
        assert_eq!(pid.yaw, [4.0, 50.0, 0.0]);
        // rows are the published m2, m3, m0, m1 (see presets/iris-ch3.toml)
        assert_eq!(cfg.mixer.rows()[2], [-1.0, 0.598, -1.0]);
        assert_eq!(cfg.mixer.rows()[3], [-0.927, -0.598, 1.0]);
    }

    #[test]
    fn zero_motors_names_motor_count() {
        let text = NF1_CH5.replace("motor_count = 4", "motor_count = 0");
        match AircraftConfig::from_toml_str(&text) {
            Err(Error::Invalid(v)) => assert!(v.iter().any(|v| v.field == "motor_count")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_gyro_noise_defaults_to_zero() {
        let start = NF1_CH5.find("[gyro_noise]").unwrap();
        let end = start + NF1_CH5[start..].find("\n\n").unwrap();
        let text = format!("{}{}", &NF1_CH5[..start], &NF1_CH5[end..]);
        let cfg = AircraftConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.gyro_noise, NoiseParams::zero());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = NF1_CH5.replace("sim_dt = ", "sim_dtt = 0.001\nsim_dt = ");
        assert!(matches!(
            AircraftConfig::from_toml_str(&text),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(
            AircraftConfig::from_toml_str("motor_count = [oops"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn negative_eigenvalue_is_one_violation() {
        let mut cfg = nf1();
        cfg.inertia[2][2] = -1e-3;
        let v = validate(&cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "inertia");
    }

    #[test]
    fn short_mixer_is_one_violation() {
        let mut cfg = nf1();
        cfg.mixer.0.pop();
        let v = validate(&cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "mixer");
    }

    #[test]
    fn motor_violation_has_field_path() {
        let mut cfg = nf1();
        cfg.motors[2].k_t = 0.0;
        let v = validate(&cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "motor[2].k_t");
    }

    #[test]
    fn load_from_disk_and_reserialize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nf1.toml");
        std::fs::write(&path, nf1().to_toml_string().unwrap()).unwrap();
        let back = load_aircraft_config(&path).unwrap();
        assert_eq!(back, nf1());
        assert!(matches!(
            load_aircraft_config(dir.path().join("missing.toml")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn scale_inertia_cases() {
        let i = Matrix3::new(1.0, 0.1, 0.0, 0.1, 2.0, 0.0, 0.0, 0.0, 3.0);
        assert_eq!(scale_inertia(&i, 1.0, 0.7, 0.7).unwrap(), i);
        assert_eq!(scale_inertia(&i, 2.0, 1.0, 1.0).unwrap(), i * 4.0);
        assert!(scale_inertia(&i, 1.0, 1.0, 0.0).is_err());
        assert!(scale_inertia(&i, -1.0, 1.0, 1.0).is_err());
        assert!(scale_inertia(&i, 1.0, 0.0, 1.0).is_err());
    }

    /// Voxel integration of a uniform cube against the scaled unit-density tensor.
    #[test]
    fn scale_inertia_matches_voxel_integration() {
        let n = 60;
        let h = 1.0 / n as f64;
        let unit = |x: f64, y: f64, z: f64| {
            // unit density, side 1, centered at the origin
            let dv = h * h * h;
            Matrix3::new(
                (y * y + z * z) * dv,
                -x * y * dv,
                -x * z * dv,
                -x * y * dv,
                (x * x + z * z) * dv,
                -y * z * dv,
                -x * z * dv,
                -y * z * dv,
                (x * x + y * y) * dv,
            )
        };
        let mass = 2.5;
        let mut mesh = Matrix3::zeros();
        let mut physical = Matrix3::zeros();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = |q: usize| (q as f64 + 0.5) * h - 0.5;
                    let d = unit(c(i), c(j), c(k));
                    mesh += d;
                    physical += d * mass; // density = mass / volume, volume 1
                }
            }
        }
        let scaled = scale_inertia(&mesh, 1.0, mass, 1.0).unwrap();
        assert!((scaled - physical).abs().max() < 1e-12 * n.pow(3) as f64 * physical.abs().max());
        // midpoint rule on x^2 is exact up to h^2/12 per axis
        let exact = mass / 6.0;
        assert!((scaled[(0, 0)] - exact).abs() < mass * h * h / 6.0 + 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mat() -> impl Strategy<Value = Matrix3<f64>> {
            proptest::array::uniform9(-10.0..10.0f64).prop_map(|a| Matrix3::from_row_slice(&a))
        }

        proptest! {
            #[test]
            fn scale_inertia_is_linear(a in mat(), b in mat(), s in 0.1..5.0f64,
                                       m in 0.1..5.0f64, v in 0.1..5.0f64, k in -3.0..3.0f64) {
                let lhs = scale_inertia(&(a + b * k), s, m, v).unwrap();
                let rhs = scale_inertia(&a, s, m, v).unwrap() + scale_inertia(&b, s, m, v).unwrap() * k;
                prop_assert!((lhs - rhs).abs().max() <= 1e-9 * (1.0 + lhs.abs().max()));
                let doubled = scale_inertia(&a, s, 2.0 * m, v).unwrap();
                prop_assert!((doubled - scale_inertia(&a, s, m, v).unwrap() * 2.0).abs().max() <= 1e-9 * (1.0 + doubled.abs().max()));
            }

            #[test]
            fn numeric_fields_round_trip_bit_identically(
                arm in 1e-3..1.0f64, dt in 1e-5..1e-2f64, kt in 1e-9..1e-5f64,
                noise in proptest::array::uniform3(-2.0..2.0f64),
            ) {
                let mut cfg = nf1();
                cfg.arm_length = arm;
                cfg.sim_dt = dt;
                cfg.thrust_factor = kt;
                cfg.motors[1].k_t = kt;
                cfg.gyro_noise.mean = noise;
                let text = cfg.to_toml_string().unwrap();
                let back = AircraftConfig::from_toml_str(&text).unwrap();
                prop_assert_eq!(back.arm_length.to_bits(), arm.to_bits());
                prop_assert_eq!(back.sim_dt.to_bits(), dt.to_bits());
                prop_assert_eq!(back.motors[1].k_t.to_bits(), kt.to_bits());
                prop_assert_eq!(&back, &cfg);
            }
        }
    }
}
