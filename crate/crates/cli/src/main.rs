use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fcbench_core::config::{AircraftConfig, NoiseParams};
use fcbench_core::control::{
    self, Controller, EnvAxisLoop, GainSearch, MlpPolicy, NeuralController, OscillationDetector, PidController,
    ReplayController, ZeroController,
};
use fcbench_core::env::{self, Env, EnvConfig, RewardKind, TaskSpec};
use fcbench_core::gyro::{self, GyroSample};
use fcbench_core::io::write_atomic;
use fcbench_core::metrics::{self, EnvelopeParams};
use fcbench_core::server::{Server, ServerCore};
use fcbench_core::stability::{self, LogPoseSource, RigidPoseSource, SyntheticDrift};
use fcbench_core::trace::EpisodeTrace;

mod dyno;

#[derive(Parser)]
#[command(name = "fcbench", version, about = "Quadcopter attitude-control workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trace CSV.
    Simulate(SimulateArgs),
    /// Compute the metrics report for one or more trace CSVs.
    Evaluate(EvaluateArgs),
    /// Flight-envelope scan over random step setpoints.
    Envelope(EnvelopeArgs),
    /// Ziegler-Nichols search for the ultimate gain on each axis.
    TunePid(TuneArgs),
    /// Virtual dynamometer experiments and fits.
    Dyno {
        #[command(subcommand)]
        command: dyno::DynoCommand,
    },
    /// Body-drift sweep over motor permutations, or the drift of a pose log.
    Stability(StabilityArgs),
    /// Fit gyro noise mean and standard deviation from stationary samples.
    FitNoise(FitNoiseArgs),
    /// Serve the environment over the lockstep UDP protocol.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Preset name (nf1, iris) or path to an aircraft TOML.
    #[arg(long, env = "GFC2_CONFIG", default_value = "nf1")]
    config: String,
}

impl ConfigArg {
    fn load(&self) -> Result<AircraftConfig> {
        AircraftConfig::resolve(&self.config).with_context(|| format!("loading aircraft config '{}'", self.config))
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum TaskKind {
    Pulse,
    PulseFixed,
    Episodic,
    Continuous,
    Step,
}

#[derive(Args, Clone)]
struct TaskArgs {
    #[arg(long, value_enum, default_value = "pulse")]
    task: TaskKind,
    /// Setpoint for pulse-fixed and step tasks, "roll,pitch,yaw" in deg/s.
    #[arg(long, default_value = "50,0,0")]
    setpoint: Triple,
    /// Pulse setpoint standard deviation, deg/s.
    #[arg(long, default_value_t = 100.0)]
    sigma: f64,
    /// Episodic and continuous setpoint bound, deg/s.
    #[arg(long, default_value_t = 250.0)]
    bound: f64,
    /// Episode length in seconds for step and continuous tasks.
    #[arg(long)]
    length: Option<f64>,
    /// Continuous-task hold interval "lo,hi" in seconds.
    #[arg(long, default_value = "0.1,1.0")]
    interval: Pair,
}

impl TaskArgs {
    fn spec(&self) -> TaskSpec {
        match self.task {
            TaskKind::Pulse => TaskSpec::Pulse { sigma: self.sigma },
            TaskKind::PulseFixed => TaskSpec::PulseFixed { setpoint: self.setpoint.0 },
            TaskKind::Episodic => TaskSpec::Episodic {
                omega_bound: self.bound.to_radians(),
            },
            TaskKind::Continuous => TaskSpec::Continuous {
                omega_bound: self.bound.to_radians(),
                interval: (self.interval.0, self.interval.1),
                length: self.length.unwrap_or(fcbench_core::task::CONTINUOUS_LENGTH),
            },
            TaskKind::Step => TaskSpec::Step {
                setpoint: self.setpoint.0,
                length: self.length.unwrap_or(1.0),
            },
        }
    }
}

#[derive(Args, Clone)]
struct EnvArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value = "v3")]
    reward: RewardKind,
    /// Disable gyro noise.
    #[arg(long)]
    no_noise: bool,
}

impl EnvArgs {
    fn env_config(&self) -> Result<EnvConfig> {
        let mut cfg = EnvConfig::new(self.config.load()?, self.task.spec());
        cfg.reward = self.reward;
        cfg.noise = !self.no_noise;
        Ok(cfg)
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ControllerKind {
    Pid,
    Nn,
    Replay,
    Zero,
}

#[derive(Args, Clone)]
struct ControllerArgs {
    #[arg(long, value_enum, default_value = "pid")]
    controller: ControllerKind,
    /// Network weights file for the nn controller.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Command file for the replay controller.
    #[arg(long)]
    commands: Option<PathBuf>,
    /// Base throttle mixed under the pid and nn controllers.
    #[arg(long)]
    throttle: Option<f64>,
}

impl ControllerArgs {
    fn build(&self, ac: &AircraftConfig) -> Result<Box<dyn Controller>> {
        Ok(match self.controller {
            ControllerKind::Pid => {
                let gains = ac.pid.clone().context("aircraft config has no [pid] gains")?;
                let c = PidController::new(gains, ac.mixer.clone(), ac.sim_dt)
                    .with_throttle(self.throttle.unwrap_or(control::PID_DEFAULT_THROTTLE));
                Box::new(c)
            }
            ControllerKind::Nn => {
                let path = self.policy.as_ref().context("--policy is required for the nn controller")?;
                let policy = MlpPolicy::load(path).with_context(|| format!("loading policy {}", path.display()))?;
                if policy.output_dim() != ac.motor_count {
                    bail!("policy has {} outputs, aircraft has {} motors", policy.output_dim(), ac.motor_count);
                }
                let mut c = NeuralController::new(policy);
                c.throttle = self.throttle.unwrap_or(0.0);
                Box::new(c)
            }
            ControllerKind::Replay => {
                let path = self.commands.as_ref().context("--commands is required for the replay controller")?;
                let commands = env::read_commands(path).with_context(|| format!("reading {}", path.display()))?;
                Box::new(ReplayController::new(commands, ac.motor_count))
            }
            ControllerKind::Zero => Box::new(ZeroController {
                motor_count: ac.motor_count,
            }),
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[command(flatten)]
    controller: ControllerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnvelopeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    controller: ControllerArgs,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Setpoint standard deviation, deg/s.
    #[arg(long, default_value_t = 300.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_noise: bool,
    /// Per-episode CSV of setpoints, MAE and band membership.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value_t = 0.01)]
    k_start: f64,
    #[arg(long, default_value_t = 1.1)]
    k_factor: f64,
    #[arg(long, default_value_t = 100.0)]
    k_cap: f64,
    /// Step setpoint on the tuned axis, deg/s.
    #[arg(long, default_value_t = 50.0)]
    setpoint: f64,
    /// Seconds per trial.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = control::PID_DEFAULT_THROTTLE)]
    throttle: f64,
    /// Command transport delay in ms. The rigid simulator never sustains a
    /// P-only oscillation without some latency.
    #[arg(long, default_value_t = 4.0)]
    delay_ms: f64,
    /// Write the tuned gains as a [pid] TOML table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Seconds per permutation.
    #[arg(long, default_value_t = stability::DEFAULT_SWEEP_LENGTH)]
    length: f64,
    /// Meters per step the tip of a synthetic three-link body drifts.
    #[arg(long, conflicts_with = "pose_log")]
    synthetic_drift: Option<f64>,
    /// Steps in the synthetic log.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Pose log CSV (t,link,x,y,z).
    #[arg(long)]
    pose_log: Option<PathBuf>,
    /// Replay the pose log under the permutation sweep instead of reporting it directly.
    #[arg(long, requires = "pose_log")]
    sweep: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitNoiseArgs {
    /// CSV with gyro_r,gyro_p,gyro_y (trace format) or roll,pitch,yaw columns, deg/s.
    samples: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 9000)]
    port: u16,
    /// Seed for RESET requests that carry none.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write each finished episode's trace as episode_<n>.csv here.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Exit after this many finished episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Triple([f64; 3]);

impl FromStr for Triple {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v = parse_list(s)?;
        let a: [f64; 3] = v.try_into().map_err(|_| format!("expected three values, got '{s}'"))?;
        Ok(Triple(a))
    }
}

#[derive(Clone, Copy, Debug)]
struct Pair(f64, f64);

impl FromStr for Pair {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match parse_list(s)?.as_slice() {
            [a, b] => Ok(Pair(*a, *b)),
            _ => Err(format!("expected two values, got '{s}'")),
        }
    }
}

pub(crate) fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}")))
        .collect()
}

pub(crate) fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = a.env.env_config()?;
    let mut c = a.controller.build(&cfg.aircraft)?;
    let mut e = Env::new(cfg)?;
    let trace = env::run_episode(&mut e, c.as_mut(), a.seed)?;
    trace.write_csv(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let total: f64 = trace.rows.iter().map(|r| r.reward).sum();
    eprintln!("{} steps, total reward {total:.3} -> {}", trace.len(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let traces = a
        .traces
        .iter()
        .map(|p| EpisodeTrace::read_csv(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let r = metrics::report(&traces)?;
    let text = match a.format {
        ReportFormat::Text => r.to_text(),
        ReportFormat::Csv => r.to_csv(),
    };
    emit(a.out.as_deref(), &text)
}

fn envelope(a: EnvelopeArgs) -> Result<()> {
    let ac = a.config.load()?;
    let mut c = a.controller.build(&ac)?;
    let p = EnvelopeParams {
        n: a.n,
        sigma: a.sigma,
        seed: a.seed,
        ..EnvelopeParams::default()
    };
    let noise = !a.no_noise;
    let scan = metrics::envelope_scan(
        |task| {
            let mut cfg = EnvConfig::new(ac.clone(), task);
            cfg.noise = noise;
            Env::new(cfg)
        },
        c.as_mut(),
        &p,
    )?;
    if let Some(out) = &a.out {
        emit(Some(out), &scan.to_csv())?;
    }
    println!("episodes {}", scan.points.len());
    println!("band_fraction {:.4}", scan.band_fraction());
    println!("mean_mae {:.4}", scan.mean_mae());
    Ok(())
}

fn tune_pid(a: TuneArgs) -> Result<()> {
    let ac = a.config.load()?;
    let search = GainSearch {
        k_start: a.k_start,
        k_factor: a.k_factor,
        k_cap: a.k_cap,
    };
    let mut axes = Vec::new();
    for (axis, name) in metrics::AXES.iter().enumerate() {
        let mut plant = EnvAxisLoop::new(ac.clone(), axis);
        plant.setpoint = a.setpoint;
        plant.duration = a.duration;
        plant.throttle = a.throttle;
        plant.command_delay = (a.delay_ms * 1e-3 / ac.sim_dt).round() as usize;
        let ku = control::ultimate_gain_search(&mut plant, search, &OscillationDetector::default())
            .with_context(|| format!("{name} axis"))?;
        let g = control::zn_tune(ku.ku, ku.tu)?;
        println!(
            "{name:<5} Ku {:.5} Tu {:.4} s -> kp {:.5} ki {:.5} kd {:.6}",
            ku.ku, ku.tu, g.kp, g.ki, g.kd
        );
        axes.push(g);
    }
    if let Some(out) = &a.out {
        let mut text = String::from("[pid]\n");
        for (name, g) in metrics::AXES.iter().zip(&axes) {
            text.push_str(&format!("{name} = [{}, {}, {}]\n", g.kp, g.ki, g.kd));
        }
        emit(Some(out), &text)?;
    }
    Ok(())
}

fn stability_cmd(a: StabilityArgs) -> Result<()> {
    let series = |log: &stability::PoseLog| -> Result<String> {
        let d = log.delta_series()?;
        let mut s = String::from("t,delta,half_delta\n");
        for (t, v) in log.times.iter().zip(&d) {
            s.push_str(&format!("{t},{v},{}\n", v / 2.0));
        }
        Ok(s)
    };
    let text = if let Some(rate) = a.synthetic_drift {
        let ac = a.config.load()?;
        series(&SyntheticDrift { rate }.log(a.steps, ac.sim_dt))?
    } else if let Some(path) = &a.pose_log {
        let log = stability::ingest_pose_log(path).with_context(|| format!("reading {}", path.display()))?;
        if a.sweep {
            let ac = a.config.load()?;
            let mut src = LogPoseSource { log };
            stability::points_to_csv(&stability::stability_sweep(&ac, &mut src, a.length)?)
        } else {
            series(&log)?
        }
    } else {
        let ac = a.config.load()?;
        let mut src = RigidPoseSource::from_config(&ac);
        let pts = stability::stability_sweep(&ac, &mut src, a.length)?;
        let max = pts.iter().map(|p| p.delta).fold(0.0, f64::max);
        eprintln!("{} rows, max delta {max}", pts.len());
        stability::points_to_csv(&pts)
    };
    emit(a.out.as_deref(), &text)
}

fn read_gyro_samples(path: &Path) -> Result<Vec<GyroSample>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines.next().context("empty samples file")?.split(',').map(str::trim).collect();
    let find = |names: &[&str]| header.iter().position(|h| names.contains(h));
    let cols = [
        find(&["gyro_r", "roll"]).context("no gyro_r or roll column")?,
        find(&["gyro_p", "pitch"]).context("no gyro_p or pitch column")?,
        find(&["gyro_y", "yaw"]).context("no gyro_y or yaw column")?,
    ];
    let tcol = find(&["t"]);
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |c: usize| -> Result<f64> {
                f.get(c)
                    .context("short row")?
                    .parse::<f64>()
                    .with_context(|| format!("row {}", i + 2))
            };
            Ok(GyroSample {
                t: tcol.map(get).transpose()?.unwrap_or(i as f64),
                rate: [get(cols[0])?, get(cols[1])?, get(cols[2])?],
            })
        })
        .collect()
}

fn fit_noise(a: FitNoiseArgs) -> Result<()> {
    let samples = read_gyro_samples(&a.samples)?;
    let NoiseParams { mean, std } = gyro::fit_noise(&samples)?;
    let text = format!(
        "# fitted from {} samples\n[gyro_noise]\nmean = [{}, {}, {}]\nstd = [{}, {}, {}]\n",
        samples.len(),
        mean[0],
        mean[1],
        mean[2],
        std[0],
        std[1],
        std[2]
    );
    emit(a.out.as_deref(), &text)
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = a.env.env_config()?;
    let core = ServerCore::new(Env::new(cfg)?, a.seed);
    let mut server = Server::bind((a.host.as_str(), a.port), core)?;
    eprintln!("listening on {}", server.local_addr()?);
    if let Some(dir) = &a.trace_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let stop = AtomicBool::new(false);
    let mut finished = 0usize;
    let mut recorded = false;
    let mut failure: Option<anyhow::Error> = None;
    server.serve(&stop, |core| {
        let env = core.env();
        if !env.is_done() {
            recorded = false;
            return;
        }
        if recorded || core.trace().len() as u64 != env.total_steps() {
            return;
        }
        recorded = true;
        finished += 1;
        if let Some(dir) = &a.trace_dir {
            let path = dir.join(format!("episode_{finished}.csv"));
            if let Err(e) = core.trace().write_csv(&path) {
                failure = Some(anyhow::Error::new(e).context(format!("writing {}", path.display())));
                stop.store(true, Ordering::Relaxed);
            }
        }
        if a.episodes.is_some_and(|n| finished >= n) {
            stop.store(true, Ordering::Relaxed);
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Envelope(a) => envelope(a),
        Command::TunePid(a) => tune_pid(a),
        Command::Dyno { command } => dyno::run(command),
        Command::Stability(a) => stability_cmd(a),
        Command::FitNoise(a) => fit_noise(a),
        Command::Serve(a) => serve(a),
    }
}
