//! Python bindings: configurations, Pareto fronts, the parallel kernels,
//! the energy model, the repetition loop and sweeps.

use std::path::PathBuf;

use biobj_tune::config::{Precision, Workload};
use biobj_tune::driver::{self, SweepSpec};
use biobj_tune::energymodel::{self, EnergyModel, PmcRecord};
use biobj_tune::fft::{self, Direction, FftVariant, SignalMatrix};
use biobj_tune::gemm::{self as gemm_ops, Matrix, Variant};
use biobj_tune::measure::{self, EnergySourceConfig, MonotonicClock, PowerTrace};
use biobj_tune::{pareto, stats, Error, KernelId, ObjectiveSample};
use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e @ (Error::InvalidInput(_)
        | Error::OutOfRange(_)
        | Error::Parse { .. }
        | Error::InsufficientData(_)
        | Error::Json(_)) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// `groups` threadgroups of `threads_per_group` threads each.
#[pyclass(
    name = "Configuration",
    module = "biobj_tune",
    frozen,
    eq,
    hash,
    from_py_object
)]
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct PyConfiguration(biobj_tune::Configuration);

#[pymethods]
impl PyConfiguration {
    #[new]
    fn new(groups: usize, threads_per_group: usize) -> PyResult<Self> {
        biobj_tune::Configuration::new(groups, threads_per_group)
            .map(PyConfiguration)
            .map_err(to_py)
    }

    #[getter]
    fn groups(&self) -> usize {
        self.0.groups
    }

    #[getter]
    fn threads_per_group(&self) -> usize {
        self.0.threads_per_group
    }

    fn total_threads(&self) -> usize {
        self.0.total_threads()
    }

    fn __repr__(&self) -> String {
        format!("Configuration{}", self.0)
    }

    fn __iter__(slf: PyRef<'_, Self>) -> PyResult<Py<PyAny>> {
        let py = slf.py();
        let pair = (slf.0.groups, slf.0.threads_per_group).into_pyobject(py)?;
        Ok(pair.try_iter()?.into_any().unbind())
    }
}

#[pyfunction]
fn enumerate_configurations(cores: usize) -> PyResult<Vec<PyConfiguration>> {
    let configs = biobj_tune::enumerate_configurations(cores).map_err(to_py)?;
    Ok(configs.into_iter().map(PyConfiguration).collect())
}

/// Whether objective vector `a` Pareto-dominates `b` (minimization).
#[pyfunction]
fn dominates(a: Vec<f64>, b: Vec<f64>) -> PyResult<bool> {
    pareto::dominates(&a, &b).map_err(to_py)
}

type FrontRow = (f64, f64, Vec<PyConfiguration>);

fn front_rows(front: &pareto::ParetoFront) -> Vec<FrontRow> {
    front
        .entries()
        .iter()
        .map(|e| {
            (
                e.time_s(),
                e.dynamic_energy_j(),
                e.configs.iter().copied().map(PyConfiguration).collect(),
            )
        })
        .collect()
}

/// Pareto front of `(g, t, time_s, dynamic_energy_j)` tuples as
/// `(time_s, dynamic_energy_j, [Configuration, ...])`, fastest first.
#[pyfunction]
fn front_build(samples: Vec<(usize, usize, f64, f64)>) -> PyResult<Vec<FrontRow>> {
    let samples = samples
        .into_iter()
        .map(|(g, t, time, energy)| {
            let config = biobj_tune::Configuration::new(g, t)?;
            ObjectiveSample::new(config, time, energy)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    Ok(front_rows(&pareto::front_build(&samples)))
}

/// Pareto front of a samples CSV (`g,t,time_s,dynamic_energy_j` columns).
#[pyfunction]
fn front_from_csv(path: PathBuf) -> PyResult<Vec<FrontRow>> {
    let samples = driver::load_samples_csv(&path).map_err(to_py)?;
    Ok(front_rows(&pareto::front_build(&samples)))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.as_slice()
        .chunks(m.n().max(1))
        .map(<[f64]>::to_vec)
        .collect()
}

/// `alpha*A*B + beta*C` with the "h", "v" or "s" decomposition over
/// `groups` threadgroups of `threads` threads.
#[pyfunction]
#[pyo3(signature = (a, b, c, alpha=1.0, beta=1.0, variant="h", groups=1, threads=1))]
#[allow(clippy::too_many_arguments)]
fn gemm(
    py: Python<'_>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    alpha: f64,
    beta: f64,
    variant: &str,
    groups: usize,
    threads: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let (a, b, c) = (matrix(a)?, matrix(b)?, matrix(c)?);
    let variant: Variant = variant.parse().map_err(to_py)?;
    let config = biobj_tune::Configuration::new(groups, threads).map_err(to_py)?;
    let out = py
        .detach(|| gemm_ops::pmmtg(&a, &b, &c, alpha, beta, variant, config))
        .map_err(to_py)?;
    Ok(rows(&out))
}

/// Reference triple-loop `alpha*A*B + beta*C`.
#[pyfunction]
#[pyo3(signature = (a, b, c, alpha=1.0, beta=1.0))]
fn gemm_naive(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    alpha: f64,
    beta: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let out =
        gemm_ops::gemm_naive(&matrix(a)?, &matrix(b)?, &matrix(c)?, alpha, beta).map_err(to_py)?;
    Ok(rows(&out))
}

fn signal(rows: Vec<Vec<Complex64>>) -> PyResult<SignalMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(
            "signal must be a square list of rows",
        ));
    }
    SignalMatrix::from_vec(n, rows.into_iter().flatten().collect()).map_err(to_py)
}

fn signal_rows(m: &SignalMatrix) -> Vec<Vec<Complex64>> {
    m.as_slice()
        .chunks(m.n().max(1))
        .map(<[Complex64]>::to_vec)
        .collect()
}

fn direction(sign: &str) -> PyResult<Direction> {
    sign.parse().map_err(to_py)
}

/// Parallel 2D FFT ("h" or "v" variant); the inverse is normalized.
#[pyfunction]
#[pyo3(signature = (data, sign="forward", variant="h", groups=1, threads=1, block=fft::DEFAULT_TRANSPOSE_BLOCK))]
fn fft2d(
    py: Python<'_>,
    data: Vec<Vec<Complex64>>,
    sign: &str,
    variant: &str,
    groups: usize,
    threads: usize,
    block: usize,
) -> PyResult<Vec<Vec<Complex64>>> {
    let mut m = signal(data)?;
    let sign = direction(sign)?;
    let variant = match variant.to_ascii_lowercase().as_str() {
        "h" => FftVariant::H,
        "v" => FftVariant::V,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown FFT variant `{other}`"
            )))
        }
    };
    let config = biobj_tune::Configuration::new(groups, threads).map_err(to_py)?;
    py.detach(|| fft::pffttg(&mut m, sign, variant, config, block))
        .map_err(to_py)?;
    Ok(signal_rows(&m))
}

/// Direct O(n^4) 2D DFT.
#[pyfunction]
#[pyo3(signature = (data, sign="forward"))]
fn dft2d_naive(data: Vec<Vec<Complex64>>, sign: &str) -> PyResult<Vec<Vec<Complex64>>> {
    Ok(signal_rows(&fft::dft2d_naive(
        &signal(data)?,
        direction(sign)?,
    )))
}

fn record((g, t, e, time, l, s): (usize, usize, f64, f64, f64, f64)) -> PyResult<PmcRecord> {
    Ok(PmcRecord {
        config: biobj_tune::Configuration::new(g, t).map_err(to_py)?,
        dynamic_energy_j: e,
        time_s: time,
        dtlb_load_walk_cycles: l,
        dtlb_store_walk_cycles: s,
    })
}

/// Nonnegative fit of `E = b1*T + b2*L + b3*S` to rows of
/// `(g, t, dynamic_energy_j, time_s, load_walk, store_walk)`; returns
/// `(b1, b2, b3, residual_norm)`.
#[pyfunction]
fn nnls_fit(rows: Vec<(usize, usize, f64, f64, f64, f64)>) -> PyResult<(f64, f64, f64, f64)> {
    let records = rows.into_iter().map(record).collect::<PyResult<Vec<_>>>()?;
    let m = energymodel::nnls_fit(&records).map_err(to_py)?;
    Ok((m.beta1, m.beta2, m.beta3, m.residual_norm))
}

/// Fit a counter CSV; returns `(b1, b2, b3, residual_norm, spearman)`.
#[pyfunction]
fn fit_energy_csv(path: PathBuf) -> PyResult<(f64, f64, f64, f64, Option<f64>)> {
    let records = energymodel::load_pmc_csv(&path).map_err(to_py)?;
    let fit = energymodel::fit_report(&records).map_err(to_py)?;
    let m = fit.model;
    Ok((m.beta1, m.beta2, m.beta3, m.residual_norm, fit.spearman))
}

/// `b1*time_s + b2*load_walk + b3*store_walk`.
#[pyfunction]
fn predict(coefficients: (f64, f64, f64), time_s: f64, load_walk: f64, store_walk: f64) -> f64 {
    let model = EnergyModel {
        beta1: coefficients.0,
        beta2: coefficients.1,
        beta3: coefficients.2,
        residual_norm: 0.0,
    };
    let rec = PmcRecord {
        config: biobj_tune::Configuration {
            groups: 1,
            threads_per_group: 1,
        },
        dynamic_energy_j: 0.0,
        time_s,
        dtlb_load_walk_cycles: load_walk,
        dtlb_store_walk_cycles: store_walk,
    };
    energymodel::predict(&model, &rec)
}

/// One-sided Student t quantile.
#[pyfunction]
fn t_quantile(cl: f64, df: u64) -> PyResult<f64> {
    stats::t_quantile(cl, df).map_err(to_py)
}

/// Call `observe()` until the mean is known to `eps` relative precision at
/// confidence `cl`, or a cap is hit. Returns a dict of diagnostics.
#[pyfunction]
#[pyo3(signature = (observe, min_reps=15, max_reps=100_000, max_elapsed_s=3600.0, cl=0.95, eps=0.025))]
fn mean_using_ttest<'py>(
    py: Python<'py>,
    observe: Bound<'py, PyAny>,
    min_reps: usize,
    max_reps: usize,
    max_elapsed_s: f64,
    cl: f64,
    eps: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let precision = Precision {
        min_reps,
        max_reps,
        max_elapsed_s,
        confidence_level: cl,
        target_rel_error: eps,
    };
    let mut raised: Option<PyErr> = None;
    let result = stats::mean_using_ttest(
        || {
            observe
                .call0()
                .and_then(|v| v.extract::<f64>())
                .map_err(|e| {
                    let msg = e.to_string();
                    raised = Some(e);
                    Error::Measurement(msg)
                })
        },
        &precision,
        &MonotonicClock::new(),
    );
    let r = match (result, raised) {
        (Ok(r), _) => r,
        (Err(_), Some(e)) => return Err(e),
        (Err(e), None) => return Err(to_py(e)),
    };
    let d = PyDict::new(py);
    d.set_item("mean", r.mean)?;
    d.set_item("sd", r.sd)?;
    d.set_item("reps", r.reps_out)?;
    d.set_item("rel_error", r.achieved_rel_error)?;
    d.set_item("half_width", r.achieved_half_width)?;
    d.set_item("elapsed_s", r.elapsed_s)?;
    d.set_item("converged", r.converged)?;
    d.set_item("stop_reason", format!("{:?}", r.stop_reason).to_lowercase())?;
    Ok(d)
}

/// `(total_energy_j, dynamic_energy_j)` over `[t_start, t_end]` of a trace
/// given as `(timestamp_s, power_w)` pairs.
#[pyfunction]
fn dynamic_energy(
    trace: Vec<(f64, f64)>,
    t_start: f64,
    t_end: f64,
    static_power_w: f64,
) -> PyResult<(f64, f64)> {
    let trace = PowerTrace::from_pairs(&trace).map_err(to_py)?;
    let r = measure::dynamic_energy(&trace, t_start, t_end, static_power_w).map_err(to_py)?;
    Ok((r.total_energy_j, r.dynamic_energy_j))
}

/// Run a full sweep and return the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (kernel, cores, n=1, energy="synthetic:unit", static_power_w=0.0, min_reps=15, max_reps=100_000, eps=0.025))]
#[allow(clippy::too_many_arguments)]
fn run_sweep(
    py: Python<'_>,
    kernel: &str,
    cores: usize,
    n: usize,
    energy: &str,
    static_power_w: f64,
    min_reps: usize,
    max_reps: usize,
    eps: f64,
) -> PyResult<String> {
    let kernel: KernelId = kernel.parse().map_err(to_py)?;
    let source: EnergySourceConfig = energy.parse().map_err(to_py)?;
    let mut spec = SweepSpec::new(Workload::new(kernel, n), cores, source);
    spec.static_power_w = static_power_w;
    spec.precision.min_reps = min_reps;
    spec.precision.max_reps = max_reps;
    spec.precision.target_rel_error = eps;
    let report = py.detach(|| driver::run_sweep(&spec)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "biobj_tune")]
pub fn biobj_tune_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfiguration>()?;
    m.add_function(wrap_pyfunction!(enumerate_configurations, m)?)?;
    m.add_function(wrap_pyfunction!(dominates, m)?)?;
    m.add_function(wrap_pyfunction!(front_build, m)?)?;
    m.add_function(wrap_pyfunction!(front_from_csv, m)?)?;
    m.add_function(wrap_pyfunction!(gemm, m)?)?;
    m.add_function(wrap_pyfunction!(gemm_naive, m)?)?;
    m.add_function(wrap_pyfunction!(fft2d, m)?)?;
    m.add_function(wrap_pyfunction!(dft2d_naive, m)?)?;
    m.add_function(wrap_pyfunction!(nnls_fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_energy_csv, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(t_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(mean_using_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_energy, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
