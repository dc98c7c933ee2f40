//! Gyro channel emulation and noise-parameter fitting.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::NoiseParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroSample {
    pub t: f64,
    /// Degrees/second, roll, pitch, yaw.
    pub rate: [f64; 3],
}

/// Measure `omega_true` (rad/s) in degrees/second with additive Gaussian noise.
pub fn sample<R: Rng + ?Sized>(
    omega_true: &Vector3<f64>,
    noise: &NoiseParams,
    rng: &mut R,
) -> Vector3<f64> {
    Vector3::from_fn(|ax, _| {
        let z: f64 = rng.sample(StandardNormal);
        omega_true[ax].to_degrees() + noise.mean[ax] + noise.std[ax] * z
    })
}

/// Per-axis sample mean and unbiased standard deviation.
pub fn fit_noise(samples: &[GyroSample]) -> Result<NoiseParams> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 gyro samples, got {}",
            samples.len()
        )));
    }
    // Welford: a constant stream yields exactly mean = c and std = 0.
    let mut mean = [0.0; 3];
    let mut m2 = [0.0; 3];
    for (k, s) in samples.iter().enumerate() {
        let n = (k + 1) as f64;
        for ax in 0..3 {
            let delta = s.rate[ax] - mean[ax];
            mean[ax] += delta / n;
            m2[ax] += delta * (s.rate[ax] - mean[ax]);
        }
    }
    let denom = (samples.len() - 1) as f64;
    Ok(NoiseParams {
        mean,
        std: m2.map(|v| (v / denom).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TABLE: NoiseParams = NoiseParams {
        mean: [-0.2546, 0.2419, 0.079],
        std: [1.3373, 0.999, 1.4516],
    };

    fn draw(n: usize, noise: &NoiseParams, seed: u64) -> Vec<GyroSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| GyroSample {
                t: k as f64 * 1e-3,
                rate: sample(&Vector3::zeros(), noise, &mut rng).into(),
            })
            .collect()
    }

    #[test]
    fn zero_sigma_adds_exact_offsets() {
        let noise = NoiseParams { mean: TABLE.mean, std: [0.0; 3] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Vector3::new(1.0, -0.5, 0.25);
        let m = sample(&w, &noise, &mut rng);
        for ax in 0..3 {
            assert_eq!(m[ax], w[ax].to_degrees() + TABLE.mean[ax]);
        }
        let m = sample(&w, &NoiseParams::zero(), &mut rng);
        assert_eq!(m, w.map(f64::to_degrees));
    }

    #[test]
    fn table_parameters_reproduce_at_recorded_sample_count() {
        let fit = fit_noise(&draw(26_777, &TABLE, 11)).unwrap();
        for ax in 0..3 {
            assert!((fit.std[ax] - TABLE.std[ax]).abs() / TABLE.std[ax] < 0.02);
            // means are small, so compare against the spread
            assert!((fit.mean[ax] - TABLE.mean[ax]).abs() < 0.02 * TABLE.std[ax] * 2.0);
        }
    }

    #[test]
    fn seeded_sampling_replays() {
        assert_eq!(draw(100, &TABLE, 3), draw(100, &TABLE, 3));
        assert_ne!(draw(100, &TABLE, 3), draw(100, &TABLE, 4));
    }

    #[test]
    fn fit_constant_and_pair() {
        let c: Vec<GyroSample> = (0..50).map(|k| GyroSample { t: k as f64, rate: [0.1, -3.7, 2.2] }).collect();
        let fit = fit_noise(&c).unwrap();
        assert_eq!(fit.mean, [0.1, -3.7, 2.2]);
        assert_eq!(fit.std, [0.0; 3]);

        let pair = [
            GyroSample { t: 0.0, rate: [1.0, 4.0, -2.0] },
            GyroSample { t: 1.0, rate: [3.0, 1.0, -2.0] },
        ];
        let fit = fit_noise(&pair).unwrap();
        assert_relative_eq!(fit.mean[0], 2.0);
        assert_relative_eq!(fit.std[0], 2.0 / 2f64.sqrt());
        assert_relative_eq!(fit.std[1], 3.0 / 2f64.sqrt());
        assert_eq!(fit.std[2], 0.0);

        assert!(matches!(fit_noise(&pair[..1]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zero_sigma_stream_fits_zero_sigma() {
        let noise = NoiseParams { mean: TABLE.mean, std: [0.0; 3] };
        let fit = fit_noise(&draw(1000, &noise, 5)).unwrap();
        assert_eq!(fit.std, [0.0; 3]);
        assert_eq!(fit.mean, TABLE.mean);
    }

    #[test]
    fn generator_oracle_recovers_normal() {
        let noise = NoiseParams { mean: [0.25; 3], std: [1.0; 3] };
        let fit = fit_noise(&draw(26_777, &noise, 8)).unwrap();
        for ax in 0..3 {
            assert!((fit.mean[ax] - 0.25).abs() / 0.25 < 0.1);
            assert!((fit.std[ax] - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn estimation_error_shrinks_like_inverse_sqrt_n() {
        // average absolute std error over many seeds, per sample size
        let noise = NoiseParams { mean: [0.0; 3], std: [1.0; 3] };
        let err = |n: usize| {
            let reps = 40;
            (0..reps)
                .map(|s| {
                    let fit = fit_noise(&draw(n, &noise, 1000 + s)).unwrap();
                    (fit.mean[0].abs() + (fit.std[0] - 1.0).abs()) / 2.0
                })
                .sum::<f64>()
                / reps as f64
        };
        let e = [err(100), err(1000), err(10_000)];
        for k in 0..2 {
            let ratio = e[k] / e[k + 1];
            // sqrt(10) ~ 3.16
            assert!((2.0..5.0).contains(&ratio), "{e:?}");
        }
    }
}
