use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};

use fcbench_core::dyno::{self, DynoTrace, ReferenceMotor};
use fcbench_core::propulsion::MotorParams;

use crate::{emit, parse_list, ConfigArg};

#[derive(Subcommand)]
pub enum DynoCommand {
    /// One second at each throttle level, then one second off.
    Step(StepArgs),
    /// Triangular throttle ramp, 0 to 1 over 20 s and back.
    Ramp(RampArgs),
    /// Fit the throttle curve to plateau RPMs of step traces.
    Fit(FitArgs),
    /// Coefficients and model constants from peak thrust and torque.
    Derive(DeriveArgs),
    /// Compare a simulated trace against a reference trace.
    Validate(ValidateArgs),
    /// Linear load-cell calibration from applied,reading,phase points.
    Calibrate(CalibrateArgs),
    /// RPM from a tachometer voltage trace (t,v).
    Rpm(RpmArgs),
    /// Fit the motor response gain and clamps to reference step traces.
    FitResponse(FitResponseArgs),
}

#[derive(Args)]
pub struct MotorArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Motor index in the aircraft config.
    #[arg(long, default_value_t = 0)]
    motor: usize,
    /// Run the built-in noisy reference motor instead of the config's model.
    #[arg(long)]
    reference: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
}

impl MotorArgs {
    fn motor(&self) -> Result<MotorParams> {
        let ac = self.config.load()?;
        ac.motors
            .get(self.motor)
            .cloned()
            .with_context(|| format!("motor {} out of range ({} motors)", self.motor, ac.motors.len()))
    }

    fn reference_motor(&self) -> Result<ReferenceMotor> {
        let m = self.motor()?;
        Ok(ReferenceMotor::racing(m.throttle_curve, m.k_t, m.k_q))
    }
}

#[derive(Args)]
pub struct StepArgs {
    #[command(flatten)]
    motor: MotorArgs,
    #[arg(long, default_value = "0.25,0.5,0.75,1")]
    levels: String,
    /// Directory for step_<percent>.csv files.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
pub struct RampArgs {
    #[command(flatten)]
    motor: MotorArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// Step traces, one per level.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value = "0.25,0.5,0.75,1")]
    levels: String,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    /// Plateau RPM at zero throttle, added as an extra point.
    #[arg(long)]
    idle_rpm: Option<f64>,
}

#[derive(Args)]
pub struct DeriveArgs {
    /// N.
    #[arg(long)]
    max_thrust: f64,
    /// N m.
    #[arg(long)]
    max_torque: f64,
    #[arg(long)]
    max_rpm: f64,
    /// kg/m^3.
    #[arg(long, default_value_t = dyno::DEFAULT_RHO)]
    rho: f64,
    /// Propeller diameter, m.
    #[arg(long, default_value_t = dyno::DEFAULT_DIAMETER)]
    diameter: f64,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long)]
    sim: PathBuf,
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Args)]
pub struct CalibrateArgs {
    points: PathBuf,
    /// Hysteresis flag threshold as a fraction of the reading span.
    #[arg(long, default_value_t = 0.01)]
    hysteresis_tol: f64,
}

#[derive(Args)]
pub struct RpmArgs {
    pulses: PathBuf,
    #[arg(long, default_value_t = 1)]
    blades: usize,
    #[arg(long, default_value_t = 2.5)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitResponseArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Reference step traces, one per level.
    #[arg(required = true)]
    references: Vec<PathBuf>,
    #[arg(long, default_value = "0.25,0.5,0.75,1")]
    levels: String,
    /// Write the aircraft config with every motor updated.
    #[arg(long)]
    write_config: Option<PathBuf>,
}

fn levels(s: &str) -> Result<Vec<f64>> {
    let v = parse_list(s).map_err(anyhow::Error::msg)?;
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        bail!("throttle levels must lie in [0, 1]");
    }
    Ok(v)
}

fn read_traces(paths: &[PathBuf]) -> Result<Vec<DynoTrace>> {
    paths
        .iter()
        .map(|p| DynoTrace::read_csv(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

pub fn run(cmd: DynoCommand) -> Result<()> {
    match cmd {
        DynoCommand::Step(a) => {
            let lv = levels(&a.levels)?;
            let traces = if a.motor.reference {
                a.motor.reference_motor()?.step_experiment(&lv, a.motor.dt, a.motor.seed)?
            } else {
                dyno::step_experiment(&a.motor.motor()?, &lv, a.motor.dt)?
            };
            std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
            for (l, t) in lv.iter().zip(&traces) {
                let path = a.out_dir.join(format!("step_{:03}.csv", (l * 100.0).round() as u32));
                t.write_csv(&path).with_context(|| format!("writing {}", path.display()))?;
                println!("{} plateau {:.1} RPM", path.display(), dyno::steady_rpm(t, dyno::STEP_ON)?);
            }
        }
        DynoCommand::Ramp(a) => {
            let t = if a.motor.reference {
                let steps = (2.0 * dyno::RAMP_HALF / a.motor.dt).round() as usize;
                a.motor.reference_motor()?.run(a.motor.dt, steps, dyno::ramp_command, a.motor.seed)?
            } else {
                dyno::ramp_experiment(&a.motor.motor()?, a.motor.dt)?
            };
            t.write_csv(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
            println!("{} rows, max {:.1} RPM", t.rows.len(), t.max_rpm());
        }
        DynoCommand::Fit(a) => {
            let lv = levels(&a.levels)?;
            if lv.len() != a.traces.len() {
                bail!("{} levels for {} traces", lv.len(), a.traces.len());
            }
            let mut pts: Vec<(f64, f64)> = a.idle_rpm.map(|r| (0.0, r)).into_iter().collect();
            for (l, t) in lv.iter().zip(read_traces(&a.traces)?) {
                pts.push((*l, dyno::steady_rpm(&t, dyno::STEP_ON)?));
            }
            let c = dyno::fit_throttle_curve(&pts, a.degree)?;
            let shown: Vec<String> = c.iter().map(|x| format!("{x}")).collect();
            println!("throttle_curve = [{}]", shown.join(", "));
        }
        DynoCommand::Derive(a) => {
            let c = dyno::derive_constants(a.max_thrust, a.max_torque, a.max_rpm, a.rho, a.diameter)?;
            println!("c_t = {}", c.c_t);
            println!("c_q = {}", c.c_q);
            println!("k_t = {}", c.k_t);
            println!("k_q = {}", c.k_q);
        }
        DynoCommand::Validate(a) => {
            let sim = DynoTrace::read_csv(&a.sim).with_context(|| format!("reading {}", a.sim.display()))?;
            let r = DynoTrace::read_csv(&a.reference).with_context(|| format!("reading {}", a.reference.display()))?;
            let v = dyno::validate_model(&sim, &r)?;
            println!("rpm_mae {:.3}", v.rpm_mae);
            println!("rpm_pct {:.3}", v.rpm_pct);
            println!("thrust_mae {:.6}", v.thrust_mae);
            println!("torque_mae {:.8}", v.torque_mae);
        }
        DynoCommand::Calibrate(a) => {
            let pts = dyno::read_calibration_csv(&a.points)?;
            let c = dyno::calibrate_linear(&pts, a.hysteresis_tol)?;
            println!("slope {}", c.slope);
            println!("intercept {}", c.intercept);
            let worst = c.residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            println!("max_residual {worst}");
            println!("max_hysteresis {:.4}", c.max_hysteresis);
            if c.hysteresis {
                eprintln!("warning: load/unload hysteresis above {}", a.hysteresis_tol);
            }
        }
        DynoCommand::Rpm(a) => {
            let text = std::fs::read_to_string(&a.pulses).with_context(|| format!("reading {}", a.pulses.display()))?;
            let mut samples = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') || line.starts_with(|c: char| c.is_ascii_alphabetic()) {
                    continue;
                }
                let v = parse_list(line).map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1))?;
                match v.as_slice() {
                    [t, x] => samples.push((*t, *x)),
                    _ => bail!("line {}: expected t,v", i + 1),
                }
            }
            let rpm = dyno::rpm_from_pulses(&samples, a.blades, a.threshold)?;
            let mut s = String::from("t,rpm\n");
            for (t, r) in rpm {
                s.push_str(&format!("{t},{r}\n"));
            }
            emit(a.out.as_deref(), &s)?;
        }
        DynoCommand::FitResponse(a) => {
            let mut ac = a.config.load()?;
            let lv = levels(&a.levels)?;
            let refs = read_traces(&a.references)?;
            let fit = dyno::fit_motor_response(&ac.motors[0], &lv, &refs)?;
            println!("response_scale = {}", fit.motor.response_scale);
            println!("f_min = {}", fit.motor.f_min);
            println!("f_max = {}", fit.motor.f_max);
            for (l, e) in lv.iter().zip(&fit.pct_errors) {
                println!("# {:>3.0}% throttle: {e:.2}% RPM error", l * 100.0);
            }
            if let Some(out) = &a.write_config {
                for m in &mut ac.motors {
                    m.response_scale = fit.motor.response_scale;
                    m.f_min = fit.motor.f_min;
                    m.f_max = fit.motor.f_max;
                }
                emit(Some(out), &ac.to_toml_string()?)?;
            }
        }
    }
    Ok(())
}
