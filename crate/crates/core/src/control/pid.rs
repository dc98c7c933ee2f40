use serde::{Deserialize, Serialize};

use crate::config::MixerTable;
use crate::error::{ensure_positive, Result};

/// `[K_P, K_I, K_D]` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub roll: [f64; 3],
    pub pitch: [f64; 3],
    pub yaw: [f64; 3],
}

impl PidGains {
    pub fn from_axes(roll: AxisGains, pitch: AxisGains, yaw: AxisGains) -> Self {
        Self {
            roll: roll.into(),
            pitch: pitch.into(),
            yaw: yaw.into(),
        }
    }

    pub fn axis(&self, axis: usize) -> AxisGains {
        let g = match axis {
            0 => self.roll,
            1 => self.pitch,
            _ => self.yaw,
        };
        AxisGains {
            kp: g[0],
            ki: g[1],
            kd: g[2],
        }
    }

    pub fn uniform(kp: f64, ki: f64, kd: f64) -> Self {
        let g = [kp, ki, kd];
        Self {
            roll: g,
            pitch: g,
            yaw: g,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl From<AxisGains> for [f64; 3] {
    fn from(g: AxisGains) -> Self {
        [g.kp, g.ki, g.kd]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: [f64; 3],
    pub prev_error: [f64; 3],
}

/// `y = K_P e + K_I sum(e dt) + K_D (e - e_prev) / dt` per axis.
pub fn pid_eval(state: &mut PidState, e: &[f64; 3], gains: &PidGains, dt: f64) -> [f64; 3] {
    let mut y = [0.0; 3];
    for ax in 0..3 {
        let g = gains.axis(ax);
        state.integral[ax] += e[ax] * dt;
        let derivative = (e[ax] - state.prev_error[ax]) / dt;
        state.prev_error[ax] = e[ax];
        y[ax] = g.kp * e[ax] + g.ki * state.integral[ax] + g.kd * derivative;
    }
    y
}

/// `u_i = T + m_i . y` before saturation.
pub fn mix_unclamped(y: &[f64; 3], throttle: f64, mixer: &MixerTable) -> Vec<f64> {
    mixer
        .rows()
        .iter()
        .map(|m| throttle + m[0] * y[0] + m[1] * y[1] + m[2] * y[2])
        .collect()
}

/// Mixer output saturated to `[0, 1]`.
pub fn mix(y: &[f64; 3], throttle: f64, mixer: &MixerTable) -> Vec<f64> {
    mix_unclamped(y, throttle, mixer)
        .into_iter()
        .map(|u| if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) })
        .collect()
}

/// Classic Ziegler–Nichols PID rule from ultimate gain and period.
pub fn zn_tune(k_u: f64, t_u: f64) -> Result<AxisGains> {
    ensure_positive("K_u", k_u)?;
    ensure_positive("T_u", t_u)?;
    Ok(AxisGains {
        kp: 0.6 * k_u,
        ki: 1.2 * k_u / t_u,
        kd: 0.075 * k_u * t_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn iris_reference_mixer() -> MixerTable {
        MixerTable(vec![
            [-1.0, 0.598, -1.0],
            [-0.927, -0.598, 1.0],
            [1.0, 0.598, 1.0],
            [0.927, -0.598, -1.0],
        ])
    }

    #[test]
    fn pid_examples() {
        let mut s = PidState::default();
        let g = PidGains::uniform(1.0, 0.0, 0.0);
        assert_eq!(pid_eval(&mut s, &[0.0; 3], &g, 1e-3), [0.0; 3]);
        assert_eq!(pid_eval(&mut s, &[2.0, -1.0, 0.5], &g, 1e-3), [2.0, -1.0, 0.5]);

        let mut s = PidState::default();
        let g = PidGains::uniform(0.0, 1.0, 0.0);
        let mut y = [0.0; 3];
        for _ in 0..3 {
            y = pid_eval(&mut s, &[1.0; 3], &g, 0.001);
        }
        assert_relative_eq!(y[0], 0.003, max_relative = 1e-12);
    }

    #[test]
    fn derivative_acts_on_error_change() {
        let mut s = PidState::default();
        let g = PidGains::uniform(0.0, 0.0, 0.5);
        pid_eval(&mut s, &[1.0; 3], &g, 0.01);
        let y = pid_eval(&mut s, &[3.0; 3], &g, 0.01);
        assert_relative_eq!(y[1], 0.5 * 2.0 / 0.01);
    }

    #[test]
    fn mix_examples() {
        let m = iris_reference_mixer();
        assert_eq!(mix(&[0.0; 3], 0.3, &m), vec![0.3; 4]);
        assert_eq!(mix_unclamped(&[1.0, 0.0, 0.0], 0.0, &m), vec![-1.0, -0.927, 1.0, 0.927]);
        assert_eq!(mix_unclamped(&[0.0, 0.0, 1.0], 0.0, &m), vec![-1.0, 1.0, 1.0, -1.0]);
        assert_eq!(mix(&[1.0, 0.0, 0.0], 0.0, &m), vec![0.0, 0.0, 1.0, 0.927]);
        // idle with no command never spins up
        assert_eq!(mix(&[0.0; 3], 0.0, &m), vec![0.0; 4]);
    }

    #[test]
    fn zn_examples() {
        let g = zn_tune(10.0, 1.0).unwrap();
        assert_relative_eq!(g.kp, 6.0);
        assert_relative_eq!(g.ki, 12.0);
        assert_relative_eq!(g.kd, 0.75);
        let g = zn_tune(1.0, 2.0).unwrap();
        assert_relative_eq!(g.kp, 0.6);
        assert_relative_eq!(g.ki, 0.6);
        assert_relative_eq!(g.kd, 0.15);
        assert!(zn_tune(0.0, 1.0).is_err());
        assert!(zn_tune(1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn zn_is_linear_in_ku(ku in 0.01..100.0f64, tu in 0.01..10.0f64) {
            let a = zn_tune(ku, tu).unwrap();
            let b = zn_tune(2.0 * ku, tu).unwrap();
            prop_assert!((b.kp - 2.0 * a.kp).abs() <= 1e-12 * b.kp);
            prop_assert!((b.ki - 2.0 * a.ki).abs() <= 1e-12 * b.ki);
            prop_assert!((b.kd - 2.0 * a.kd).abs() <= 1e-12 * b.kd);
        }

        #[test]
        fn proportional_only_is_memoryless(history in proptest::collection::vec(proptest::array::uniform3(-100.0..100.0f64), 0..20),
                                           e in proptest::array::uniform3(-100.0..100.0f64)) {
            let g = PidGains::uniform(1.7, 0.0, 0.0);
            let mut fresh = PidState::default();
            let mut used = PidState::default();
            for h in &history {
                pid_eval(&mut used, h, &g, 1e-3);
            }
            prop_assert_eq!(pid_eval(&mut fresh, &e, &g, 1e-3), pid_eval(&mut used, &e, &g, 1e-3));
        }

        #[test]
        fn mix_stays_in_unit_interval(y in proptest::array::uniform3(-5.0..5.0f64), t in 0.0..1.0f64) {
            prop_assert!(mix(&y, t, &iris_reference_mixer()).iter().all(|u| (0.0..=1.0).contains(u)));
        }
    }
}
