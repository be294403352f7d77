use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{
    emit_report, load_samples_csv, pareto_report, physical_cores, run_sweep, seed_from_env,
    ReportFormat, SweepSpec,
};
use crate::config::{enumerate_configurations, Configuration, KernelId, Precision, Workload};
use crate::energymodel::{fit_report, load_pmc_csv};
use crate::error::{Error, Result};
use crate::fft::{dft2d_naive, pffttg, transpose_block, Direction, FftVariant, SignalMatrix};
use crate::gemm::{gemm_naive, pmmtg, Matrix, Variant};
use crate::measure::EnergySourceConfig;

#[derive(Debug, Parser)]
#[command(
    name = "biobj-tune",
    version,
    about = "Time/dynamic-energy Pareto tuning of threadgroup-parallel kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure every configuration and report the Pareto front.
    Sweep(Box<SweepArgs>),
    /// Pareto front of previously measured samples.
    Pareto {
        /// CSV with columns g,t,time_s,dynamic_energy_j.
        #[arg(long)]
        input: PathBuf,
        /// Also write report files into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        format: ReportFormat,
    },
    /// Fit the nonnegative dTLB energy model to a counter CSV.
    FitEnergy {
        #[arg(long)]
        input: PathBuf,
        /// Write the fit, per-row predictions and rank correlation as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Kernel maintenance commands.
    Kernels {
        #[command(subcommand)]
        action: KernelsAction,
    },
    /// List the configurations for a core count.
    Configs {
        /// Defaults to the number of physical cores.
        #[arg(long)]
        cores: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum KernelsAction {
    /// Compare every kernel variant against its naive reference.
    Selftest,
}

/// Sweep settings. Every field can also be given in the `--config` TOML
/// file under the same name (with underscores); flags take precedence.
#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepArgs {
    /// TOML file with sweep settings.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// gemm_h, gemm_v, gemm_s, fft_h, fft_v or stub.
    #[arg(long)]
    kernel: Option<KernelId>,
    /// Workload dimension.
    #[arg(long)]
    n: Option<usize>,
    /// Core budget l; defaults to the number of physical cores.
    #[arg(long)]
    cores: Option<usize>,
    /// `methodology` (default) or `meter_api`.
    #[arg(long)]
    preset: Option<String>,
    /// Confidence level.
    #[arg(long)]
    cl: Option<f64>,
    /// Target relative error of the mean.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_reps: Option<usize>,
    #[arg(long)]
    max_reps: Option<usize>,
    #[arg(long)]
    max_elapsed_s: Option<f64>,
    /// synthetic:<unit|product|constant>, replay:<csv> or command:<argv>.
    #[arg(long)]
    energy: Option<String>,
    #[arg(long)]
    static_power_w: Option<f64>,
    /// Output directory; defaults to `sweep-report`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json, csv, plotdata or all (default).
    #[arg(long)]
    format: Option<ReportFormat>,
    /// Transpose tile edge for the FFT kernels.
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// forward or inverse.
    #[arg(long)]
    sign: Option<Direction>,
    /// Copy B column panels into contiguous buffers.
    #[arg(long)]
    #[serde(default)]
    copy_panels: bool,
    /// Unconverged configurations tolerated before aborting.
    #[arg(long)]
    failure_budget: Option<usize>,
    /// Re-measurements after a negative dynamic-energy reading.
    #[arg(long)]
    anomaly_retries: Option<usize>,
    /// Command run once before measuring, with BIOBJ_TUNE_PID set.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    pre_exec_hook: Option<Vec<String>>,
    /// Relative noise added to synthetic energy readings.
    #[arg(long)]
    synthetic_noise: Option<f64>,
}

impl SweepArgs {
    fn merged_with_file(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)?;
        let file: SweepArgs = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })?;
        macro_rules! fill {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = file.$f; } )* };
        }
        fill!(
            kernel,
            n,
            cores,
            preset,
            cl,
            eps,
            min_reps,
            max_reps,
            max_elapsed_s,
            energy,
            static_power_w,
            out,
            format,
            block,
            alpha,
            beta,
            sign,
            failure_budget,
            anomaly_retries,
            pre_exec_hook,
            synthetic_noise
        );
        self.copy_panels |= file.copy_panels;
        Ok(self)
    }

    fn into_spec(self) -> Result<(SweepSpec, PathBuf, ReportFormat)> {
        let kernel = self
            .kernel
            .ok_or_else(|| Error::invalid("--kernel is required"))?;
        let n = match (self.n, kernel) {
            (Some(n), _) => n,
            (None, KernelId::Stub) => 1,
            (None, _) => return Err(Error::invalid("--n is required")),
        };
        let mut workload = Workload::new(kernel, n);
        if let Some(v) = self.alpha {
            workload.scalar_alpha = v;
        }
        if let Some(v) = self.beta {
            workload.scalar_beta = v;
        }
        if let Some(v) = self.sign {
            workload.fft_sign = v;
        }
        if let Some(v) = self.block {
            workload.transpose_block = v;
        }

        let mut precision = match self.preset.as_deref() {
            None | Some("methodology") => Precision::METHODOLOGY,
            Some("meter_api") => Precision::METER_API,
            Some(other) => {
                return Err(Error::invalid(format!(
                    "unknown preset `{other}` (expected methodology or meter_api)"
                )))
            }
        };
        if let Some(v) = self.cl {
            precision.confidence_level = v;
        }
        if let Some(v) = self.eps {
            precision.target_rel_error = v;
        }
        if let Some(v) = self.min_reps {
            precision.min_reps = v;
        }
        if let Some(v) = self.max_reps {
            precision.max_reps = v;
        }
        if let Some(v) = self.max_elapsed_s {
            precision.max_elapsed_s = v;
        }

        let energy: EnergySourceConfig =
            self.energy.as_deref().unwrap_or("synthetic:unit").parse()?;
        let mut spec = SweepSpec::new(workload, self.cores.unwrap_or_else(physical_cores), energy);
        spec.precision = precision;
        spec.static_power_w = self.static_power_w.unwrap_or(0.0);
        spec.failure_budget = self.failure_budget;
        if let Some(v) = self.anomaly_retries {
            spec.anomaly_retries = v;
        }
        spec.seed = seed_from_env()?;
        spec.synthetic_noise = self.synthetic_noise.unwrap_or(0.0);
        spec.copy_panels = self.copy_panels;
        spec.pre_exec_hook = self.pre_exec_hook;
        let out = self.out.unwrap_or_else(|| PathBuf::from("sweep-report"));
        spec.output_path = Some(out.clone());
        Ok((spec, out, self.format.unwrap_or(ReportFormat::All)))
    }
}

/// Run the command line `argv` (including the program name) and return the
/// process exit code: 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Configs { cores } => {
            for c in enumerate_configurations(cores.unwrap_or_else(physical_cores))? {
                writeln!(out, "{},{}", c.groups, c.threads_per_group)?;
            }
            Ok(0)
        }
        Command::Pareto {
            input,
            out: dir,
            format,
        } => {
            let samples = load_samples_csv(&input)?;
            let report = pareto_report(&samples, Some(&input));
            print_front(out, &report.front)?;
            if let Some(dir) = dir {
                emit_report(&report, format, &dir)?;
            }
            Ok(0)
        }
        Command::FitEnergy { input, report } => {
            let records = load_pmc_csv(&input)?;
            let fit = fit_report(&records)?;
            let m = &fit.model;
            writeln!(
                out,
                "beta1 {}\nbeta2 {}\nbeta3 {}\nresidual_norm {}",
                m.beta1, m.beta2, m.beta3, m.residual_norm
            )?;
            match fit.spearman {
                Some(rho) => writeln!(out, "spearman {rho}")?,
                None => writeln!(out, "spearman undefined")?,
            }
            if let Some(path) = report {
                write_json(&path, &fit)?;
            }
            Ok(0)
        }
        Command::Kernels {
            action: KernelsAction::Selftest,
        } => {
            let mut failed = 0;
            for check in selftest() {
                let ok = check.error <= check.tolerance;
                failed += usize::from(!ok);
                writeln!(
                    out,
                    "{} {} error={:e} tolerance={:e}",
                    if ok { "ok  " } else { "FAIL" },
                    check.name,
                    check.error,
                    check.tolerance
                )?;
            }
            if failed > 0 {
                return Err(Error::Kernel(format!("{failed} self-test checks failed")));
            }
            Ok(0)
        }
        Command::Sweep(args) => {
            let (spec, dir, format) = (*args).merged_with_file()?.into_spec()?;
            let report = run_sweep(&spec)?;
            print_front(out, &report.front)?;
            if !report.samples.is_empty() {
                for path in emit_report(&report, format, &dir)? {
                    log::info!("wrote {}", path.display());
                }
            }
            match &report.status {
                super::SweepStatus::Complete => Ok(0),
                super::SweepStatus::Incomplete { reason } => {
                    eprintln!("error: sweep incomplete: {reason}");
                    Ok(2)
                }
            }
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn print_front(out: &mut dyn Write, front: &crate::pareto::ParetoFront) -> Result<()> {
    writeln!(out, "time_s,dynamic_energy_j,configurations")?;
    for e in front.entries() {
        let configs: Vec<String> = e.configs.iter().map(Configuration::to_string).collect();
        writeln!(
            out,
            "{},{},{}",
            e.time_s(),
            e.dynamic_energy_j(),
            configs.join(" ")
        )?;
    }
    Ok(())
}

struct Check {
    name: String,
    error: f64,
    tolerance: f64,
}

fn selftest() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from_env().unwrap_or(0));
    let mut checks = Vec::new();
    for n in [6, 64, 65] {
        let (a, b, c) = (
            Matrix::random(n, &mut rng),
            Matrix::random(n, &mut rng),
            Matrix::random(n, &mut rng),
        );
        let want = gemm_naive(&a, &b, &c, 1.5, -0.5).expect("square inputs");
        for variant in [Variant::H, Variant::V, Variant::S] {
            for g in [1, 2, 4] {
                for t in [1, 2] {
                    let config = Configuration {
                        groups: g,
                        threads_per_group: t,
                    };
                    let error = match pmmtg(&a, &b, &c, 1.5, -0.5, variant, config) {
                        Ok(got) => got.max_abs_diff(&want) / want.max_abs(),
                        Err(_) if variant == Variant::S && g == 2 => continue,
                        Err(_) => f64::INFINITY,
                    };
                    checks.push(Check {
                        name: format!(
                            "gemm_{} n={n} {config}",
                            format!("{variant:?}").to_lowercase()
                        ),
                        error,
                        tolerance: 1e-9,
                    });
                }
            }
        }
    }
    let n = 8;
    let input = SignalMatrix::random(n, &mut rng);
    for sign in [Direction::Forward, Direction::Inverse] {
        let want = dft2d_naive(&input, sign);
        for variant in [FftVariant::H, FftVariant::V] {
            for g in [1, 2, 4] {
                for t in [1, 2] {
                    let config = Configuration {
                        groups: g,
                        threads_per_group: t,
                    };
                    let mut got = input.clone();
                    let error = match pffttg(&mut got, sign, variant, config, 4) {
                        Ok(()) => got.max_abs_diff(&want),
                        Err(_) => f64::INFINITY,
                    };
                    checks.push(Check {
                        name: format!(
                            "fft_{} {sign:?} n={n} {config}",
                            format!("{variant:?}").to_lowercase()
                        ),
                        error,
                        tolerance: 1e-9,
                    });
                }
            }
        }
    }
    for n in [1, 2, 64, 129] {
        for block in [1, 64] {
            let data: Vec<u32> = (0..(n * n) as u32).collect();
            let mut got = data.clone();
            transpose_block(&mut got, n, block);
            let mismatches = (0..n * n)
                .filter(|&k| got[k] != data[(k % n) * n + k / n])
                .count();
            checks.push(Check {
                name: format!("transpose n={n} block={block}"),
                error: mismatches as f64,
                tolerance: 0.0,
            });
        }
    }
    checks
}
