use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::clock::Clock;
use super::trace::{parse_sample_line, PowerSample, PowerTrace, DEFAULT_METER_RATE_HZ};
use super::{dynamic_energy, EnergyReading};
use crate::config::{Configuration, Workload};
use crate::error::{Error, Result};

/// What is being measured.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub workload: &'a Workload,
    pub config: Configuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeasurement {
    pub time_s: f64,
    pub dynamic_energy_j: f64,
    /// Present when the energy came from power samples.
    pub reading: Option<EnergyReading>,
    /// Seconds spent by the source outside the run window.
    pub overhead_s: f64,
}

/// Something that can report the dynamic energy of one run.
///
/// Implementations hold an exclusive guard for the duration of a measurement
/// so that at most one measurement per source is in flight.
pub trait EnergySource: Send + Sync {
    fn describe(&self) -> String;

    fn measure(
        &self,
        clock: &dyn Clock,
        ctx: &RunContext<'_>,
        run: &mut dyn FnMut() -> Result<()>,
    ) -> Result<EnergyMeasurement>;
}

/// Run `run` under `source`, returning `(time_s, dynamic_energy_j)`.
pub fn energy_source_measure(
    source: &dyn EnergySource,
    clock: &dyn Clock,
    ctx: &RunContext<'_>,
    run: &mut dyn FnMut() -> Result<()>,
) -> Result<(f64, f64)> {
    let m = source.measure(clock, ctx, run)?;
    Ok((m.time_s, m.dynamic_energy_j))
}

fn window_error(e: Error) -> Error {
    match e {
        Error::OutOfRange(msg) => Error::Measurement(format!("run window not covered: {msg}")),
        other => other,
    }
}

/// Replays a recorded power log. Trace time zero corresponds to clock time
/// `origin_s`.
#[derive(Debug)]
pub struct ReplaySource {
    trace: PowerTrace,
    static_power_w: f64,
    origin_s: f64,
    guard: Mutex<()>,
}

impl ReplaySource {
    pub fn new(trace: PowerTrace, static_power_w: f64, origin_s: f64) -> Result<Self> {
        if trace.is_empty() {
            return Err(Error::Measurement("replay trace has no samples".into()));
        }
        Ok(ReplaySource {
            trace,
            static_power_w,
            origin_s,
            guard: Mutex::new(()),
        })
    }

    pub fn open(path: &std::path::Path, static_power_w: f64, origin_s: f64) -> Result<Self> {
        let trace = PowerTrace::load_csv(path).map_err(|e| match e {
            Error::Io(io) => {
                Error::Measurement(format!("cannot read replay log {}: {io}", path.display()))
            }
            other => other,
        })?;
        ReplaySource::new(trace, static_power_w, origin_s)
    }
}

impl EnergySource for ReplaySource {
    fn describe(&self) -> String {
        format!("replay ({} samples)", self.trace.samples().len())
    }

    fn measure(
        &self,
        clock: &dyn Clock,
        _ctx: &RunContext<'_>,
        run: &mut dyn FnMut() -> Result<()>,
    ) -> Result<EnergyMeasurement> {
        let _guard = self.guard.lock().unwrap_or_else(|p| p.into_inner());
        let start = clock.now();
        run()?;
        let end = clock.now();
        let reading = dynamic_energy(
            &self.trace,
            start - self.origin_s,
            end - self.origin_s,
            self.static_power_w,
        )
        .map_err(window_error)?;
        Ok(EnergyMeasurement {
            time_s: end - start,
            dynamic_energy_j: reading.dynamic_energy_j,
            reading: Some(reading),
            overhead_s: 0.0,
        })
    }
}

/// Launches a sampling command that prints `timestamp_s,power_w` lines, with
/// timestamps in seconds since the command started.
#[derive(Debug)]
pub struct CommandSource {
    argv: Vec<String>,
    static_power_w: f64,
    /// How long to wait for the first sample, and for a sample at or past the
    /// end of the run window.
    pub settle_timeout: Duration,
    guard: Mutex<()>,
}

impl CommandSource {
    pub fn new(argv: Vec<String>, static_power_w: f64) -> Result<Self> {
        if argv.is_empty() {
            return Err(Error::invalid("sampling command must not be empty"));
        }
        Ok(CommandSource {
            argv,
            static_power_w,
            settle_timeout: Duration::from_secs_f64(3.0 / DEFAULT_METER_RATE_HZ),
            guard: Mutex::new(()),
        })
    }

    fn spawn(&self) -> Result<Child> {
        Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Measurement(format!("cannot launch `{}`: {e}", self.argv[0])))
    }
}

fn terminate(child: &mut Child) {
    if let Ok(None) = child.try_wait() {
        // SAFETY: plain kill(2) on a pid we own and have not yet reaped.
        unsafe {
            libc::kill(child.id() as libc::pid_t, libc::SIGTERM);
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = child.kill();
    }
    let _ = child.wait();
}

impl EnergySource for CommandSource {
    fn describe(&self) -> String {
        format!("command `{}`", self.argv.join(" "))
    }

    fn measure(
        &self,
        clock: &dyn Clock,
        _ctx: &RunContext<'_>,
        run: &mut dyn FnMut() -> Result<()>,
    ) -> Result<EnergyMeasurement> {
        let _guard = self.guard.lock().unwrap_or_else(|p| p.into_inner());
        let launched = clock.now();
        let mut child = self.spawn()?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel::<Result<PowerSample>>();
        let reader = thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                if tx.send(parse_sample_line(&line)).is_err() {
                    break;
                }
            }
        });

        let result = (|| {
            let mut samples = Vec::new();
            let recv = |samples: &mut Vec<PowerSample>| -> Result<bool> {
                match rx.recv_timeout(self.settle_timeout) {
                    Ok(sample) => {
                        samples.push(sample?);
                        Ok(true)
                    }
                    Err(RecvTimeoutError::Timeout) => Ok(false),
                    Err(RecvTimeoutError::Disconnected) => Ok(false),
                }
            };
            if !recv(&mut samples)? {
                return Err(Error::Measurement(format!(
                    "sampling command `{}` produced no samples",
                    self.argv.join(" ")
                )));
            }
            let start = clock.now();
            run()?;
            let end = clock.now();
            let window = (start - launched, end - launched);
            while samples.last().is_some_and(|s| s.timestamp_s < window.1) {
                if !recv(&mut samples)? {
                    break;
                }
            }
            while let Ok(sample) = rx.try_recv() {
                samples.push(sample?);
            }
            let trace = PowerTrace::new(samples, DEFAULT_METER_RATE_HZ)
                .map_err(|e| Error::Measurement(format!("bad samples from command: {e}")))?;
            let reading = dynamic_energy(&trace, window.0, window.1, self.static_power_w)
                .map_err(window_error)?;
            let finished = clock.now();
            Ok(EnergyMeasurement {
                time_s: end - start,
                dynamic_energy_j: reading.dynamic_energy_j,
                reading: Some(reading),
                overhead_s: (finished - launched) - (end - start),
            })
        })();

        terminate(&mut child);
        drop(rx);
        let _ = reader.join();
        result
    }
}

/// Closed-form energy functions for the synthetic source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticExpr {
    /// `g + t` joules.
    Unit,
    /// `g * t` joules.
    Product,
    /// One joule regardless of configuration.
    Constant,
}

impl SyntheticExpr {
    pub fn evaluate(&self, _workload: &Workload, config: &Configuration) -> f64 {
        let (g, t) = (config.groups as f64, config.threads_per_group as f64);
        match self {
            SyntheticExpr::Unit => g + t,
            SyntheticExpr::Product => g * t,
            SyntheticExpr::Constant => 1.0,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            SyntheticExpr::Unit => "unit",
            SyntheticExpr::Product => "product",
            SyntheticExpr::Constant => "constant",
        }
    }
}

impl FromStr for SyntheticExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(SyntheticExpr::Unit),
            "product" => Ok(SyntheticExpr::Product),
            "constant" => Ok(SyntheticExpr::Constant),
            _ => Err(Error::invalid(format!(
                "unknown synthetic expression `{s}`"
            ))),
        }
    }
}

type EnergyFn = Box<dyn Fn(&Workload, &Configuration) -> f64 + Send + Sync>;

/// Computes energy from a deterministic function of the workload and
/// configuration; time is still measured around the run.
pub struct SyntheticSource {
    label: String,
    energy: EnergyFn,
    noise: Option<(f64, Mutex<ChaCha8Rng>)>,
    guard: Mutex<()>,
}

impl SyntheticSource {
    pub fn new(expr: SyntheticExpr) -> Self {
        SyntheticSource {
            label: expr.id().to_string(),
            energy: Box::new(move |w, c| expr.evaluate(w, c)),
            noise: None,
            guard: Mutex::new(()),
        }
    }

    pub fn from_fn<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&Workload, &Configuration) -> f64 + Send + Sync + 'static,
    {
        SyntheticSource {
            label: label.into(),
            energy: Box::new(f),
            noise: None,
            guard: Mutex::new(()),
        }
    }

    /// Multiply each reading by `1 + N(0, rel_sd)`, drawn from a seeded stream.
    pub fn with_noise(mut self, rel_sd: f64, seed: u64) -> Self {
        if rel_sd > 0.0 {
            self.noise = Some((rel_sd, Mutex::new(ChaCha8Rng::seed_from_u64(seed))));
        }
        self
    }
}

impl std::fmt::Debug for SyntheticSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticSource")
            .field("label", &self.label)
            .finish()
    }
}

impl EnergySource for SyntheticSource {
    fn describe(&self) -> String {
        format!("synthetic:{}", self.label)
    }

    fn measure(
        &self,
        clock: &dyn Clock,
        ctx: &RunContext<'_>,
        run: &mut dyn FnMut() -> Result<()>,
    ) -> Result<EnergyMeasurement> {
        let _guard = self.guard.lock().unwrap_or_else(|p| p.into_inner());
        let start = clock.now();
        run()?;
        let end = clock.now();
        let mut energy = (self.energy)(ctx.workload, &ctx.config);
        if let Some((rel_sd, rng)) = &self.noise {
            let normal = Normal::new(0.0, *rel_sd).expect("positive standard deviation");
            energy *= 1.0 + normal.sample(&mut *rng.lock().unwrap());
        }
        if !energy.is_finite() {
            return Err(Error::Measurement(format!(
                "synthetic energy for {} is not finite",
                ctx.config
            )));
        }
        if energy < 0.0 {
            return Err(Error::AnomalousMeasurement {
                dynamic_energy_j: energy,
            });
        }
        Ok(EnergyMeasurement {
            time_s: end - start,
            dynamic_energy_j: energy,
            reading: None,
            overhead_s: 0.0,
        })
    }
}

/// Serializable choice of energy source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "energy_source", rename_all = "snake_case")]
pub enum EnergySourceConfig {
    Replay { replay_path: PathBuf },
    Command { command_argv: Vec<String> },
    Synthetic { synthetic_expr_id: SyntheticExpr },
}

impl EnergySourceConfig {
    /// Build the source. `origin_s` aligns replay logs with the clock.
    pub fn build(
        &self,
        static_power_w: f64,
        origin_s: f64,
        noise: Option<(f64, u64)>,
    ) -> Result<Box<dyn EnergySource>> {
        Ok(match self {
            EnergySourceConfig::Replay { replay_path } => {
                Box::new(ReplaySource::open(replay_path, static_power_w, origin_s)?)
            }
            EnergySourceConfig::Command { command_argv } => {
                Box::new(CommandSource::new(command_argv.clone(), static_power_w)?)
            }
            EnergySourceConfig::Synthetic { synthetic_expr_id } => {
                let mut s = SyntheticSource::new(*synthetic_expr_id);
                if let Some((rel_sd, seed)) = noise {
                    s = s.with_noise(rel_sd, seed);
                }
                Box::new(s)
            }
        })
    }
}

impl FromStr for EnergySourceConfig {
    type Err = Error;

    /// `synthetic:<id>`, `replay:<path>` or `command:<argv...>` (argv split on
    /// whitespace).
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "synthetic" => Ok(EnergySourceConfig::Synthetic {
                synthetic_expr_id: if rest.is_empty() {
                    SyntheticExpr::Unit
                } else {
                    rest.parse()?
                },
            }),
            "replay" if !rest.is_empty() => Ok(EnergySourceConfig::Replay {
                replay_path: PathBuf::from(rest),
            }),
            "command" if !rest.trim().is_empty() => Ok(EnergySourceConfig::Command {
                command_argv: rest.split_whitespace().map(String::from).collect(),
            }),
            _ => Err(Error::invalid(format!(
                "energy source `{s}` is not one of synthetic:<id>, replay:<path>, command:<argv>"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KernelId;
    use crate::measure::{MonotonicClock, VirtualClock};

    fn ctx(workload: &Workload, g: usize, t: usize) -> RunContext<'_> {
        RunContext {
            workload,
            config: Configuration::new(g, t).unwrap(),
        }
    }

    #[test]
    fn synthetic_sum() {
        let w = Workload::new(KernelId::Stub, 1);
        let clock = VirtualClock::new();
        let src = SyntheticSource::new(SyntheticExpr::Unit);
        let (time, energy) = energy_source_measure(&src, &clock, &ctx(&w, 3, 16), &mut || {
            clock.advance(0.5);
            Ok(())
        })
        .unwrap();
        assert_eq!((time, energy), (0.5, 19.0));
    }

    #[test]
    fn synthetic_noise_is_reproducible() {
        let w = Workload::new(KernelId::Stub, 1);
        let clock = VirtualClock::new();
        let draw = |seed| {
            let src = SyntheticSource::new(SyntheticExpr::Product).with_noise(0.05, seed);
            (0..5)
                .map(|_| {
                    src.measure(&clock, &ctx(&w, 2, 2), &mut || Ok(()))
                        .unwrap()
                        .dynamic_energy_j
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn replay_on_virtual_clock() {
        let w = Workload::new(KernelId::Stub, 1);
        let clock = VirtualClock::new();
        clock.advance(100.0);
        let trace = PowerTrace::from_pairs(&[(0.0, 100.0), (10.0, 100.0)]).unwrap();
        let src = ReplaySource::new(trace, 60.0, 100.0).unwrap();
        clock.advance(1.0);
        let m = src
            .measure(&clock, &ctx(&w, 1, 1), &mut || {
                clock.advance(2.0);
                Ok(())
            })
            .unwrap();
        assert_eq!(m.time_s, 2.0);
        assert_eq!(m.dynamic_energy_j, 80.0);

        clock.advance(20.0);
        let err = src
            .measure(&clock, &ctx(&w, 1, 1), &mut || {
                clock.advance(1.0);
                Ok(())
            })
            .unwrap_err();
        assert!(matches!(err, Error::Measurement(_)), "{err:?}");
    }

    #[test]
    fn replay_around_real_sleep() {
        let w = Workload::new(KernelId::Stub, 1);
        let clock = MonotonicClock::new();
        let trace = PowerTrace::from_pairs(&[(0.0, 100.0), (60.0, 100.0)]).unwrap();
        let src = ReplaySource::new(trace, 60.0, clock.now()).unwrap();
        let m = src
            .measure(&clock, &ctx(&w, 1, 1), &mut || {
                thread::sleep(Duration::from_millis(200));
                Ok(())
            })
            .unwrap();
        assert!((m.dynamic_energy_j - 40.0 * m.time_s).abs() < 1e-9);
        assert!((m.time_s - 0.2).abs() < 0.1);
    }

    #[test]
    fn command_without_output_fails() {
        let w = Workload::new(KernelId::Stub, 1);
        let src = CommandSource::new(vec!["true".into()], 0.0).unwrap();
        let err = src
            .measure(&MonotonicClock::new(), &ctx(&w, 1, 1), &mut || Ok(()))
            .unwrap_err();
        assert!(matches!(err, Error::Measurement(_)));
    }

    #[test]
    fn command_that_cannot_launch() {
        let w = Workload::new(KernelId::Stub, 1);
        let src = CommandSource::new(vec!["/nonexistent/meter".into()], 0.0).unwrap();
        assert!(src
            .measure(&MonotonicClock::new(), &ctx(&w, 1, 1), &mut || Ok(()))
            .is_err());
    }

    #[test]
    fn command_with_garbage_output_fails() {
        let w = Workload::new(KernelId::Stub, 1);
        let argv = ["sh", "-c", "echo not-a-sample; exec sleep 5"]
            .map(String::from)
            .to_vec();
        let src = CommandSource::new(argv, 0.0).unwrap();
        let err = src
            .measure(&MonotonicClock::new(), &ctx(&w, 1, 1), &mut || Ok(()))
            .unwrap_err();
        assert!(matches!(err, Error::Measurement(_)), "{err:?}");
    }

    #[test]
    fn parse_source_specs() {
        assert_eq!(
            "synthetic:unit".parse::<EnergySourceConfig>().unwrap(),
            EnergySourceConfig::Synthetic {
                synthetic_expr_id: SyntheticExpr::Unit
            }
        );
        assert_eq!(
            "command:meter --interval=1"
                .parse::<EnergySourceConfig>()
                .unwrap(),
            EnergySourceConfig::Command {
                command_argv: vec!["meter".into(), "--interval=1".into()]
            }
        );
        assert!("replay:".parse::<EnergySourceConfig>().is_err());
        assert!("wattsup".parse::<EnergySourceConfig>().is_err());
        assert!("synthetic:quadratic".parse::<EnergySourceConfig>().is_err());
    }
}
