//! Rotation-only rigid-body dynamics of an airframe pinned at its center of
//! thrust. Translation and gravity do not exist in this world.

use std::f64::consts::FRAC_PI_4;

use nalgebra::{Matrix3, Vector3};

use crate::config::AircraftConfig;
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BodyState {
    /// Body rates `[roll, pitch, yaw]`, rad/s.
    pub omega_body: Vector3<f64>,
    /// Rotor speeds, rad/s.
    pub rotor_omega: Vec<f64>,
    /// Seconds.
    pub t: f64,
}

impl BodyState {
    pub fn at_rest(motor_count: usize) -> Self {
        Self {
            omega_body: Vector3::zeros(),
            rotor_omega: vec![0.0; motor_count],
            t: 0.0,
        }
    }
}

/// Thrust, roll, pitch and yaw effects of the rotor speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroEffects {
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyForces {
    pub effects: AeroEffects,
    /// N·m.
    pub tau_body: Vector3<f64>,
}

const ROLL_SIGNS: [f64; 4] = [1.0, 1.0, -1.0, -1.0];
const PITCH_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, -1.0];
const YAW_SIGNS: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

fn signed_sum(signs: &[f64; 4], v: &[f64]) -> f64 {
    signs.iter().zip(v).map(|(s, x)| s * x).sum()
}

/// Quadcopter effects `U = B * (sign pattern) . omega^2`.
pub fn aero_effects(rotor_omega: &[f64], b: f64) -> Result<AeroEffects> {
    ensure_len(4, rotor_omega.len())?;
    let sq: Vec<f64> = rotor_omega.iter().map(|w| w * w).collect();
    Ok(AeroEffects {
        thrust: b * sq.iter().sum::<f64>(),
        roll: b * signed_sum(&ROLL_SIGNS, &sq),
        pitch: b * signed_sum(&PITCH_SIGNS, &sq),
        yaw: b * signed_sum(&YAW_SIGNS, &sq),
    })
}

/// Body torque from rotor speeds (`B omega^2` per rotor) and rotor reaction torques.
pub fn body_torque(
    rotor_omega: &[f64],
    rotor_torque: &[f64],
    cfg: &AircraftConfig,
) -> Result<Vector3<f64>> {
    let thrusts: Vec<f64> = rotor_omega
        .iter()
        .map(|w| cfg.thrust_factor * w * w)
        .collect();
    body_torque_from_thrust(&thrusts, rotor_torque, cfg)
}

/// Body torque from per-rotor thrust (N) and reaction torque (N·m).
///
/// Roll and pitch act through the X-frame lever `l cos(pi/4)`. Each rotor's
/// reaction torque opposes its spin direction.
pub fn body_torque_from_thrust(
    rotor_thrust: &[f64],
    rotor_torque: &[f64],
    cfg: &AircraftConfig,
) -> Result<Vector3<f64>> {
    ensure_len(cfg.motor_count, rotor_thrust.len())?;
    ensure_len(cfg.motor_count, rotor_torque.len())?;
    ensure_len(4, rotor_thrust.len())?;
    let lever = cfg.arm_length * FRAC_PI_4.cos();
    let yaw: f64 = cfg
        .motors
        .iter()
        .zip(rotor_torque)
        .map(|(m, q)| -m.spin_dir * q)
        .sum();
    Ok(Vector3::new(
        lever * signed_sum(&ROLL_SIGNS, rotor_thrust),
        lever * signed_sum(&PITCH_SIGNS, rotor_thrust),
        yaw,
    ))
}

/// One explicit step of Euler's rotation equation:
/// `Omega' = Omega + dt I^-1 (tau - Omega x I Omega)`.
pub fn angular_step(
    omega: &Vector3<f64>,
    tau: &Vector3<f64>,
    inertia: &Matrix3<f64>,
    dt: f64,
) -> Result<Vector3<f64>> {
    let inv = inertia.try_inverse().ok_or(Error::Singular)?;
    Ok(angular_step_with_inverse(omega, tau, inertia, &inv, dt))
}

fn angular_step_with_inverse(
    omega: &Vector3<f64>,
    tau: &Vector3<f64>,
    inertia: &Matrix3<f64>,
    inertia_inv: &Matrix3<f64>,
    dt: f64,
) -> Vector3<f64> {
    let gyro = omega.cross(&(inertia * omega));
    omega + inertia_inv * (tau - gyro) * dt
}

/// Advance the body rates by one step. Rotor speeds are owned by the
/// propulsion model and pass through untouched.
pub fn step(
    state: &BodyState,
    rotor_thrust: &[f64],
    rotor_torque: &[f64],
    cfg: &AircraftConfig,
    dt: f64,
) -> Result<BodyState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositive { name: "dt", value: dt });
    }
    let tau = body_torque_from_thrust(rotor_thrust, rotor_torque, cfg)?;
    let omega = angular_step(&state.omega_body, &tau, &cfg.inertia_matrix(), dt)?;
    Ok(BodyState {
        omega_body: omega,
        rotor_omega: state.rotor_omega.clone(),
        t: state.t + dt,
    })
}

/// Reusable stepper that caches the inverse inertia.
#[derive(Debug, Clone)]
pub struct RigidBody {
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
}

impl RigidBody {
    pub fn new(inertia: Matrix3<f64>) -> Result<Self> {
        let inertia_inv = inertia.try_inverse().ok_or(Error::Singular)?;
        Ok(Self {
            inertia,
            inertia_inv,
        })
    }

    pub fn advance(&self, omega: &Vector3<f64>, tau: &Vector3<f64>, dt: f64) -> Vector3<f64> {
        angular_step_with_inverse(omega, tau, &self.inertia, &self.inertia_inv, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> AircraftConfig {
        let mut c = AircraftConfig::preset("nf1").unwrap();
        c.arm_length = 1.0;
        c.thrust_factor = 1.0;
        c
    }

    /// Independent sign table: for each effect, which rotors add.
    fn brute_effects(w: &[f64], b: f64) -> [f64; 4] {
        let table = [
            [true, true, true, true],
            [true, true, false, false],
            [true, false, true, false],
            [true, false, false, true],
        ];
        let mut out = [0.0; 4];
        for (k, row) in table.iter().enumerate() {
            for i in 0..4 {
                let v = b * w[i] * w[i];
                out[k] += if row[i] { v } else { -v };
            }
        }
        out
    }

    #[test]
    fn aero_effect_examples() {
        let e = aero_effects(&[1.0; 4], 1.0).unwrap();
        assert_eq!((e.thrust, e.roll, e.pitch, e.yaw), (4.0, 0.0, 0.0, 0.0));
        let e = aero_effects(&[1.0, 1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!((e.thrust, e.roll, e.pitch, e.yaw), (2.0, 2.0, 0.0, 0.0));
        let e = aero_effects(&[1.0, 0.0, 0.0, 1.0], 2.0).unwrap();
        assert_eq!((e.thrust, e.roll, e.pitch, e.yaw), (4.0, 0.0, 0.0, 4.0));
        assert_eq!(brute_effects(&[1.0, 0.0, 0.0, 1.0], 2.0), [4.0, 0.0, 0.0, 4.0]);
        assert!(matches!(aero_effects(&[1.0; 3], 1.0), Err(Error::Length { .. })));
    }

    #[test]
    fn body_torque_examples() {
        let c = cfg();
        let tau = body_torque(&[1.0, 1.0, 0.0, 0.0], &[0.0; 4], &c).unwrap();
        assert_relative_eq!(tau, Vector3::new(2f64.sqrt(), 0.0, 0.0), epsilon = 1e-15);

        let mut c = cfg();
        for (m, s) in c.motors.iter_mut().zip([1.0, -1.0, -1.0, 1.0]) {
            m.spin_dir = s;
        }
        let tau = body_torque(&[0.0; 4], &[0.05; 4], &c).unwrap();
        assert_eq!(tau[2], 0.0);

        let q = 0.03;
        for (m, s) in c.motors.iter_mut().zip([1.0, 1.0, -1.0, -1.0]) {
            m.spin_dir = s;
        }
        assert_eq!(body_torque(&[0.0; 4], &[q; 4], &c).unwrap()[2], 0.0);
        for (m, s) in c.motors.iter_mut().zip([1.0, 1.0, 1.0, -1.0]) {
            m.spin_dir = s;
        }
        let signed: f64 = [1.0, 1.0, 1.0, -1.0].iter().map(|s: &f64| -s * q).sum();
        assert_relative_eq!(body_torque(&[0.0; 4], &[q; 4], &c).unwrap()[2], signed);
        assert_relative_eq!(signed, -2.0 * q);

        assert!(body_torque(&[0.0; 3], &[0.0; 4], &c).is_err());
        assert!(body_torque(&[0.0; 4], &[0.0; 5], &c).is_err());
    }

    #[test]
    fn principal_axis_spin_is_steady() {
        let i = Matrix3::from_diagonal(&Vector3::new(1e-3, 2e-3, 3e-3));
        let w = Vector3::new(0.0, 7.0, 0.0);
        assert_eq!(angular_step(&w, &Vector3::zeros(), &i, 1e-3).unwrap(), w);
    }

    #[test]
    fn decoupled_first_step() {
        let (a, b, c) = (1e-3, 2e-3, 3e-3);
        let i = Matrix3::from_diagonal(&Vector3::new(a, b, c));
        let w = angular_step(&Vector3::zeros(), &Vector3::new(0.02, 0.0, 0.0), &i, 1e-3).unwrap();
        assert_relative_eq!(w, Vector3::new(1e-3 * 0.02 / a, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn singular_inertia_is_error() {
        assert!(matches!(
            angular_step(&Vector3::zeros(), &Vector3::zeros(), &Matrix3::zeros(), 1e-3),
            Err(Error::Singular)
        ));
    }

    fn rhs(w: &Vector3<f64>, tau: &Vector3<f64>, i: &Matrix3<f64>, inv: &Matrix3<f64>) -> Vector3<f64> {
        inv * (tau - w.cross(&(i * w)))
    }

    /// Fine RK4 reference at dt/10 per sub-step.
    fn reference(w0: Vector3<f64>, tau: Vector3<f64>, i: &Matrix3<f64>, dt: f64, steps: usize) -> Vector3<f64> {
        let inv = i.try_inverse().unwrap();
        let h = dt / 10.0;
        let mut w = w0;
        for _ in 0..steps * 10 {
            let k1 = rhs(&w, &tau, i, &inv);
            let k2 = rhs(&(w + k1 * (h / 2.0)), &tau, i, &inv);
            let k3 = rhs(&(w + k2 * (h / 2.0)), &tau, i, &inv);
            let k4 = rhs(&(w + k3 * h), &tau, i, &inv);
            w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        w
    }

    #[test]
    fn converges_to_refined_reference_at_first_order() {
        let i = Matrix3::new(1.2e-3, 1e-5, -2e-5, 1e-5, 1.3e-3, 3e-5, -2e-5, 3e-5, 2.2e-3);
        let w0 = Vector3::new(3.0, -2.0, 1.5);
        let tau = Vector3::new(1e-3, -5e-4, 2e-4);
        let horizon = 0.1;
        let err = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            let mut w = w0;
            for _ in 0..steps {
                w = angular_step(&w, &tau, &i, dt).unwrap();
            }
            (w - reference(w0, tau, &i, dt, steps)).norm()
        };
        let e1 = err(1e-3);
        let e2 = err(5e-4);
        assert!(e1 < 1e-2 * w0.norm(), "{e1}");
        let ratio = e1 / e2;
        assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn step_examples() {
        let c = AircraftConfig::preset("nf1").unwrap();
        let s0 = BodyState::at_rest(4);
        let s1 = step(&s0, &[0.0; 4], &[0.0; 4], &c, 1e-3).unwrap();
        assert_eq!(s1.omega_body, s0.omega_body);
        assert_eq!(s1.rotor_omega, s0.rotor_omega);
        assert_eq!(s1.t, 1e-3);

        // constant roll torque from rest accumulates linearly
        let thrust = [0.5, 0.5, 0.0, 0.0];
        let tau = body_torque_from_thrust(&thrust, &[0.0; 4], &c).unwrap();
        let n = 200;
        let mut s = s0.clone();
        for _ in 0..n {
            s = step(&s, &thrust, &[0.0; 4], &c, 1e-3).unwrap();
        }
        let expected = n as f64 * 1e-3 * tau[0] / c.inertia[0][0];
        assert_relative_eq!(s.omega_body[0], expected, max_relative = 1e-12);
        assert_eq!(s.omega_body[1], 0.0);

        assert!(step(&s0, &[0.0; 4], &[0.0; 4], &c, 0.0).is_err());
    }

    #[test]
    fn long_run_stays_finite() {
        let c = AircraftConfig::preset("nf1").unwrap();
        let mut s = BodyState::at_rest(4);
        for k in 0..10_000 {
            // zero-mean torque oscillation, as a controller holding attitude would produce
            let a = 3.0 + 3.0 * (k as f64 * 0.01).sin();
            let thrust = [a, 6.0 - a, 6.0 - a, a];
            let torque: Vec<f64> = thrust.iter().map(|t| t * 8.64e-3).collect();
            s = step(&s, &thrust, &torque, &c, 1e-3).unwrap();
        }
        assert!(s.omega_body.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn torque_free_energy_and_momentum() {
        let i = Matrix3::from_diagonal(&Vector3::new(1.2e-3, 1.3e-3, 2.2e-3));
        let body = RigidBody::new(i).unwrap();
        let mut w = Vector3::new(4.0, -3.0, 2.0);
        let e0 = 0.5 * w.dot(&(i * w));
        let l0 = (i * w).norm();
        let mut prev_e = e0;
        for _ in 0..1000 {
            w = body.advance(&w, &Vector3::zeros(), 1e-3);
            let e = 0.5 * w.dot(&(i * w));
            // per-step change is second order in dt
            assert!((e - prev_e).abs() < 1e-3 * 1e-3 * 100.0 * e0);
            prev_e = e;
        }
        let l1 = (i * w).norm();
        assert!((l1 - l0).abs() / l0 < 1e-3, "{}", (l1 - l0).abs() / l0);
    }

    proptest! {
        #[test]
        fn effect_identities(w in proptest::array::uniform4(0.0..3000.0f64), b in 1e-8..1e-5f64) {
            let e = aero_effects(&w, b).unwrap();
            prop_assert!(e.thrust >= 0.0);
            let brute = brute_effects(&w, b);
            let scale = e.thrust.max(1e-300);
            prop_assert!((e.roll - brute[1]).abs() <= 1e-12 * scale);
            prop_assert!((e.pitch - brute[2]).abs() <= 1e-12 * scale);
            prop_assert!((e.yaw - brute[3]).abs() <= 1e-12 * scale);
            let roll_swapped = aero_effects(&[w[2], w[3], w[0], w[1]], b).unwrap();
            prop_assert!((roll_swapped.roll + e.roll).abs() <= 1e-12 * scale);
            let pitch_swapped = aero_effects(&[w[1], w[0], w[3], w[2]], b).unwrap();
            prop_assert!((pitch_swapped.pitch + e.pitch).abs() <= 1e-12 * scale);
        }

        #[test]
        fn step_is_pure(w in proptest::array::uniform3(-20.0..20.0f64),
                        thrust in proptest::array::uniform4(0.0..6.0f64)) {
            let c = AircraftConfig::preset("nf1").unwrap();
            let s = BodyState { omega_body: Vector3::from(w), rotor_omega: vec![100.0; 4], t: 0.25 };
            let q: Vec<f64> = thrust.iter().map(|t| t * 8.64e-3).collect();
            let a = step(&s, &thrust, &q, &c, 1e-3).unwrap();
            let b = step(&s, &thrust, &q, &c, 1e-3).unwrap();
            prop_assert_eq!(a.omega_body.map(f64::to_bits), b.omega_body.map(f64::to_bits));
            prop_assert_eq!(a.t.to_bits(), b.t.to_bits());
        }
    }
}
