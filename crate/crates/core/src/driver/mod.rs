//! Sweep orchestration: enumerate configurations, measure time and dynamic
//! energy of each to statistical confidence, and fold the means into the
//! Pareto front.

pub mod cli;
mod host;
mod kernel;
mod report;

use std::path::PathBuf;
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{
    enumerate_configurations, Configuration, KernelId, ObjectiveSample, Precision, Workload,
};
use crate::error::{Error, Result};
use crate::gemm::PmmtgOptions;
use crate::measure::{
    Clock, EnergySource, EnergySourceConfig, MonotonicClock, RunContext, VirtualClock,
};
use crate::pareto::{front_build, ParetoFront};
use crate::stats::{mean_using_ttest, TtestResult};

pub use host::{physical_cores, HostInfo};
pub use kernel::{FftKernel, GemmKernel, Kernel, StubKernel};
pub use report::{
    emit_report, load_samples_csv, pareto_report, plotdata_lines, ReportFormat, SAMPLE_CSV_HEADER,
};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable holding the seed for input data and synthetic noise.
pub const SEED_ENV: &str = "BIOBJ_TUNE_SEED";

/// Read [`SEED_ENV`], defaulting to 0.
pub fn seed_from_env() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::invalid(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))
        }),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub workload: Workload,
    pub cores_l: usize,
    pub precision: Precision,
    #[serde(flatten)]
    pub energy_source: EnergySourceConfig,
    pub static_power_w: f64,
    pub output_path: Option<PathBuf>,
    /// Configurations allowed to end without convergence before the sweep
    /// aborts; `None` means unlimited.
    pub failure_budget: Option<usize>,
    /// Re-measurements allowed per observation after a negative dynamic
    /// energy reading.
    pub anomaly_retries: usize,
    pub seed: u64,
    /// Relative standard deviation of multiplicative noise on synthetic
    /// energy readings.
    pub synthetic_noise: f64,
    pub copy_panels: bool,
    /// Run once before the sweep with `BIOBJ_TUNE_PID` set, e.g. to pin the
    /// process to cores.
    pub pre_exec_hook: Option<Vec<String>>,
}

impl SweepSpec {
    pub fn new(workload: Workload, cores_l: usize, energy_source: EnergySourceConfig) -> Self {
        SweepSpec {
            workload,
            cores_l,
            precision: Precision::default(),
            energy_source,
            static_power_w: 0.0,
            output_path: None,
            failure_budget: None,
            anomaly_retries: 3,
            seed: 0,
            synthetic_noise: 0.0,
            copy_panels: false,
            pre_exec_hook: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cores_l == 0 {
            return Err(Error::invalid("cores_l must be at least 1"));
        }
        if !self.static_power_w.is_finite() || self.static_power_w < 0.0 {
            return Err(Error::invalid(format!(
                "static power must be finite and non-negative, got {}",
                self.static_power_w
            )));
        }
        if self.synthetic_noise.is_nan() || self.synthetic_noise < 0.0 {
            return Err(Error::invalid("synthetic noise must be non-negative"));
        }
        self.workload.validate()?;
        self.precision.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SweepStatus {
    Complete,
    Incomplete { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(flatten)]
    pub sample: ObjectiveSample,
    pub time_stats: Option<TtestResult>,
    pub energy_stats: Option<TtestResult>,
    pub anomalies_retried: usize,
    /// Total seconds the energy source spent outside run windows.
    pub source_overhead_s: f64,
}

impl SampleRecord {
    pub fn bare(sample: ObjectiveSample) -> Self {
        SampleRecord {
            sample,
            time_stats: None,
            energy_stats: None,
            anomalies_retried: 0,
            source_overhead_s: 0.0,
        }
    }

    pub fn converged(&self) -> bool {
        self.time_stats.as_ref().is_none_or(|t| t.converged)
            && self.energy_stats.as_ref().is_none_or(|t| t.converged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedConfig {
    pub config: Configuration,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub host: HostInfo,
    pub energy_source: String,
    pub spec: Option<SweepSpec>,
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub status: SweepStatus,
    pub samples: Vec<SampleRecord>,
    pub skipped: Vec<SkippedConfig>,
    pub front: ParetoFront,
    pub provenance: Provenance,
}

impl SweepReport {
    pub fn is_complete(&self) -> bool {
        self.status == SweepStatus::Complete
    }

    pub fn objective_samples(&self) -> Vec<ObjectiveSample> {
        self.samples.iter().map(|r| r.sample).collect()
    }

    /// Front rebuilt from the report's own samples.
    pub fn recompute_front(&self) -> ParetoFront {
        front_build(self.samples.iter().map(|r| &r.sample))
    }
}

pub(crate) fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn run_hook(argv: &[String]) -> Result<()> {
    let Some((program, args)) = argv.split_first() else {
        return Ok(());
    };
    let status = Command::new(program)
        .args(args)
        .env("BIOBJ_TUNE_PID", std::process::id().to_string())
        .status()
        .map_err(|e| Error::invalid(format!("cannot run pre-exec hook `{program}`: {e}")))?;
    if !status.success() {
        return Err(Error::invalid(format!(
            "pre-exec hook `{program}` failed with {status}"
        )));
    }
    Ok(())
}

/// Run a full sweep with the kernel, clock and energy source implied by
/// `spec`. Invalid specs fail before anything runs; failures during the
/// sweep yield a report marked incomplete.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    if let Some(hook) = &spec.pre_exec_hook {
        run_hook(hook)?;
    }
    let noise = (spec.synthetic_noise > 0.0).then_some((spec.synthetic_noise, spec.seed));
    match spec.workload.kernel_id {
        KernelId::Stub => {
            let clock = VirtualClock::new();
            let mut kernel = StubKernel::new(clock.clone());
            let source = spec
                .energy_source
                .build(spec.static_power_w, clock.now(), noise)?;
            run_sweep_with(spec, &clock, &mut kernel, source.as_ref())
        }
        id => {
            let clock = MonotonicClock::new();
            let mut kernel: Box<dyn Kernel> = if id.is_gemm() {
                Box::new(GemmKernel::new(
                    &spec.workload,
                    spec.seed,
                    PmmtgOptions {
                        copy_panels: spec.copy_panels,
                    },
                ))
            } else {
                Box::new(FftKernel::new(&spec.workload, spec.seed))
            };
            let source = spec
                .energy_source
                .build(spec.static_power_w, clock.now(), noise)?;
            run_sweep_with(spec, &clock, kernel.as_mut(), source.as_ref())
        }
    }
}

/// Sweep driver with injected collaborators.
pub fn run_sweep_with(
    spec: &SweepSpec,
    clock: &dyn Clock,
    kernel: &mut dyn Kernel,
    source: &dyn EnergySource,
) -> Result<SweepReport> {
    spec.validate()?;
    let started = unix_now();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut front = ParetoFront::new();
    let mut unconverged = 0usize;
    let mut status = SweepStatus::Complete;

    for config in enumerate_configurations(spec.cores_l)? {
        if let Some(reason) = spec.workload.incompatibility(&config) {
            info!("skipping {config}: {reason}");
            skipped.push(SkippedConfig { config, reason });
            continue;
        }
        match measure_configuration(spec, clock, kernel, source, config) {
            Ok(record) => {
                if !record.converged() {
                    unconverged += 1;
                    warn!("{config} stopped before reaching the requested precision");
                }
                info!(
                    "{config}: {:.6} s, {:.6} J",
                    record.sample.time_s, record.sample.dynamic_energy_j
                );
                front.insert(&record.sample);
                samples.push(record);
                if spec
                    .failure_budget
                    .is_some_and(|budget| unconverged > budget)
                {
                    status = SweepStatus::Incomplete {
                        reason: format!(
                            "{unconverged} configurations failed to converge, over the budget of {}",
                            spec.failure_budget.unwrap_or_default()
                        ),
                    };
                    break;
                }
            }
            Err(e) => {
                warn!("aborting sweep at {config}: {e}");
                status = SweepStatus::Incomplete {
                    reason: format!("{config}: {e}"),
                };
                break;
            }
        }
    }

    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        status,
        samples,
        skipped,
        front,
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: started,
            finished_unix_s: unix_now(),
            host: HostInfo::detect(),
            energy_source: source.describe(),
            spec: Some(spec.clone()),
            input: None,
        },
    })
}

/// Time loop, then a separate energy loop, for one configuration.
fn measure_configuration(
    spec: &SweepSpec,
    clock: &dyn Clock,
    kernel: &mut dyn Kernel,
    source: &dyn EnergySource,
    config: Configuration,
) -> Result<SampleRecord> {
    let time_stats = mean_using_ttest(
        || {
            kernel.setup()?;
            let start = clock.now();
            kernel.run(config)?;
            Ok(clock.now() - start)
        },
        &spec.precision,
        clock,
    )?;

    let ctx = RunContext {
        workload: &spec.workload,
        config,
    };
    let mut anomalies = 0;
    let mut overhead = 0.0;
    let energy_stats = mean_using_ttest(
        || {
            let mut attempt = 0;
            loop {
                kernel.setup()?;
                match source.measure(clock, &ctx, &mut || kernel.run(config)) {
                    Ok(m) => {
                        overhead += m.overhead_s;
                        return Ok(m.dynamic_energy_j);
                    }
                    Err(Error::AnomalousMeasurement { dynamic_energy_j })
                        if attempt < spec.anomaly_retries =>
                    {
                        attempt += 1;
                        anomalies += 1;
                        warn!(
                            "{config}: negative dynamic energy {dynamic_energy_j} J, re-measuring"
                        );
                    }
                    Err(e) => return Err(e),
                }
            }
        },
        &spec.precision,
        clock,
    )?;

    Ok(SampleRecord {
        sample: ObjectiveSample::new(config, time_stats.mean, energy_stats.mean)?,
        time_stats: Some(time_stats),
        energy_stats: Some(energy_stats),
        anomalies_retried: anomalies,
        source_overhead_s: overhead,
    })
}
