//! Linear dynamic-energy model over dTLB page-walk counters,
//! `E = b1*T + b2*L + b3*S` with `b >= 0`, where `T` is execution time and
//! `L`, `S` are the load- and store-miss page-walk durations.
//!
//! `b1` is sometimes described as the average CPU utilization; here it is
//! fitted like the other two coefficients.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Configuration;
use crate::error::{Error, Result};

/// Performance-counter and energy data for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmcRecord {
    pub config: Configuration,
    pub dynamic_energy_j: f64,
    pub time_s: f64,
    pub dtlb_load_walk_cycles: f64,
    pub dtlb_store_walk_cycles: f64,
}

pub const PMC_CSV_HEADER: [&str; 6] = [
    "g",
    "t",
    "dynamic_energy_j",
    "time_s",
    "dtlb_load_walk_cycles",
    "dtlb_store_walk_cycles",
];

pub fn load_pmc_csv(path: &Path) -> Result<Vec<PmcRecord>> {
    read_pmc_csv(std::fs::File::open(path)?, path)
}

/// Parse PMC rows; `label` names the input in errors.
pub fn read_pmc_csv<R: Read>(reader: R, label: &Path) -> Result<Vec<PmcRecord>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: label.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.iter().ne(PMC_CSV_HEADER) {
        return Err(parse_err(
            1,
            format!("expected header `{}`", PMC_CSV_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record
            .map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    parse_err(
                        line,
                        format!(
                            "`{}` value `{raw}` is not a finite number",
                            PMC_CSV_HEADER[i]
                        ),
                    )
                })
        };
        let count = |i: usize| -> Result<usize> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| {
                parse_err(
                    line,
                    format!(
                        "`{}` value `{raw}` is not a positive integer",
                        PMC_CSV_HEADER[i]
                    ),
                )
            })
        };
        let rec = PmcRecord {
            config: Configuration {
                groups: count(0)?,
                threads_per_group: count(1)?,
            },
            dynamic_energy_j: num(2)?,
            time_s: num(3)?,
            dtlb_load_walk_cycles: num(4)?,
            dtlb_store_walk_cycles: num(5)?,
        };
        if rec.time_s <= 0.0 || rec.dtlb_load_walk_cycles < 0.0 || rec.dtlb_store_walk_cycles < 0.0
        {
            return Err(parse_err(
                line,
                "time must be positive and cycle counts non-negative".into(),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Euclidean norm of the training residual, joules.
    pub residual_norm: f64,
}

impl EnergyModel {
    pub fn coefficients(&self) -> [f64; 3] {
        [self.beta1, self.beta2, self.beta3]
    }

    /// Coefficients reported for OpenBLAS DGEMM on a 24-core Haswell server
    /// at N = 16384 and N = 17408. Kept as reference values only; their
    /// training units are not documented.
    pub fn reference(size: usize) -> Option<EnergyModel> {
        let [beta1, beta2, beta3] = match size {
            16384 => [253.680, 39.536, 13.647],
            17408 => [137.953, 12.564, 3.835],
            _ => return None,
        };
        Some(EnergyModel {
            beta1,
            beta2,
            beta3,
            residual_norm: f64::NAN,
        })
    }
}

pub fn predict(model: &EnergyModel, record: &PmcRecord) -> f64 {
    model.beta1 * record.time_s
        + model.beta2 * record.dtlb_load_walk_cycles
        + model.beta3 * record.dtlb_store_walk_cycles
}

fn design(records: &[PmcRecord]) -> (DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(records.len(), 3, |i, j| {
        let r = &records[i];
        [r.time_s, r.dtlb_load_walk_cycles, r.dtlb_store_walk_cycles][j]
    });
    let b = DVector::from_iterator(records.len(), records.iter().map(|r| r.dynamic_energy_j));
    (a, b)
}

/// Nonnegative least-squares fit of the three coefficients.
pub fn nnls_fit(records: &[PmcRecord]) -> Result<EnergyModel> {
    if records.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 records to fit 3 coefficients, got {}",
            records.len()
        )));
    }
    let (a, b) = design(records);
    if a.column_iter().all(|c| c.iter().all(|&v| v == 0.0)) {
        return Err(Error::invalid("all design-matrix columns are zero"));
    }
    let (x, residual_norm) = nnls(&a, &b)?;
    Ok(EnergyModel {
        beta1: x[0],
        beta2: x[1],
        beta3: x[2],
        residual_norm,
    })
}

/// Lawson-Hanson active-set solver for `min ||Ax - b||` subject to `x >= 0`.
/// Returns the solution and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::invalid(format!(
            "right-hand side has {} rows, matrix has {m}",
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("NNLS inputs must be finite"));
    }
    let tol = 10.0
        * f64::EPSILON
        * a.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max)
        * m.max(n) as f64;
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_iter = 30 * n.max(1);
    let mut iter = 0;

    loop {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate.filter(|&j| w[j] > tol) else {
            break;
        };
        passive[j] = true;

        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::InsufficientData(
                    "NNLS did not terminate; the problem is badly conditioned".into(),
                ));
            }
            let z = solve_passive(a, b, &passive);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > tol) {
                x = z;
                break;
            }
            let alpha = (0..n)
                .filter(|&i| passive[i] && z[i] <= tol)
                .map(|i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x += (&z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    let residual = (b - a * &x).norm();
    Ok((x, residual))
}

/// Unconstrained least squares over the passive columns; zero elsewhere.
fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let sub = a.select_columns(&cols);
    let sol = sub
        .svd(true, true)
        .solve(b, 1e-12)
        .expect("SVD was computed with both factors");
    let mut z = DVector::zeros(passive.len());
    for (k, &c) in cols.iter().enumerate() {
        z[c] = sol[k];
    }
    z
}

/// Spearman rank correlation (average ranks for ties). `None` when either
/// side has no variation or the lengths differ.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub config: Configuration,
    pub measured_j: f64,
    pub predicted_j: f64,
}

/// Output of `fit-energy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: EnergyModel,
    pub rows: Vec<PredictionRow>,
    pub spearman: Option<f64>,
}

pub fn fit_report(records: &[PmcRecord]) -> Result<FitReport> {
    let model = nnls_fit(records)?;
    let rows: Vec<PredictionRow> = records
        .iter()
        .map(|r| PredictionRow {
            config: r.config,
            measured_j: r.dynamic_energy_j,
            predicted_j: predict(&model, r),
        })
        .collect();
    let measured: Vec<f64> = rows.iter().map(|r| r.measured_j).collect();
    let predicted: Vec<f64> = rows.iter().map(|r| r.predicted_j).collect();
    Ok(FitReport {
        spearman: spearman(&predicted, &measured),
        model,
        rows,
    })
}
