//! Threadgroup-parallel 2D FFT by row-column decomposition.
//!
//! Forward transforms are unnormalized; inverse transforms divide by `n` per
//! 1D pass, so a 2D inverse divides by `n^2`.

mod transpose;

use std::f64::consts::PI;
use std::ops::Range;
use std::str::FromStr;
use std::thread;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Configuration;
use crate::error::{Error, Result};
use crate::gemm::band_ranges;

pub use transpose::{transpose_block, transpose_block_parallel};

/// Tile edge used by the transposes unless configured otherwise.
pub const DEFAULT_TRANSPOSE_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn exponent_sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "inverse" => Ok(Direction::Inverse),
            _ => Err(Error::invalid(format!("unknown FFT direction `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FftVariant {
    /// Row FFTs, transpose, row FFTs, transpose.
    H,
    /// Column FFTs first; realized as transpose, row FFTs, transpose, row FFTs.
    V,
}

/// Square row-major matrix of complex samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl SignalMatrix {
    pub fn zeros(n: usize) -> Self {
        SignalMatrix {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "signal of dimension {n} needs {} samples, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(SignalMatrix { n, data })
    }

    /// Real and imaginary parts drawn uniformly from `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let data = (0..n * n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        SignalMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.n + col]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs_diff(&self, other: &SignalMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    /// In-place transpose on one thread.
    pub fn transpose(&mut self, block: usize) {
        transpose_block(&mut self.data, self.n, block);
    }
}

/// Direct double-sum 2D DFT, `O(n^4)`. Any `n >= 1`.
pub fn dft2d_naive(m: &SignalMatrix, sign: Direction) -> SignalMatrix {
    let n = m.n;
    let roots = unit_roots(n, sign);
    let mut out = SignalMatrix::zeros(n);
    for u in 0..n {
        for v in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    acc += m.data[i * n + j] * roots[(u * i + v * j) % n];
                }
            }
            out.data[u * n + v] = acc;
        }
    }
    if sign == Direction::Inverse {
        let scale = 1.0 / (n * n) as f64;
        out.data.iter_mut().for_each(|z| *z *= scale);
    }
    out
}

/// Direct `O(n^2)` 1D DFT, same conventions as [`fft1d`].
pub fn dft1d_naive(x: &[Complex64], sign: Direction) -> Vec<Complex64> {
    let n = x.len();
    let roots = unit_roots(n, sign);
    let scale = match sign {
        Direction::Forward => 1.0,
        Direction::Inverse => 1.0 / n as f64,
    };
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| v * roots[(k * j) % n])
                .sum::<Complex64>()
                * scale
        })
        .collect()
}

fn unit_roots(n: usize, sign: Direction) -> Vec<Complex64> {
    let s = sign.exponent_sign();
    (0..n)
        .map(|k| Complex64::from_polar(1.0, s * 2.0 * PI * k as f64 / n as f64))
        .collect()
}

/// Precomputed twiddles for radix-2 transforms of one length.
#[derive(Debug, Clone)]
pub struct Plan {
    n: usize,
    sign: Direction,
    twiddles: Vec<Complex64>,
}

impl Plan {
    pub fn new(n: usize, sign: Direction) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "radix-2 FFT needs a power-of-two length, got {n}"
            )));
        }
        let s = sign.exponent_sign();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, s * 2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Plan { n, sign, twiddles })
    }

    /// Iterative radix-2 transform of one row in place.
    pub fn execute(&self, x: &mut [Complex64]) {
        let n = self.n;
        debug_assert_eq!(x.len(), n);
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                x.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = x[start + k];
                    let b = x[start + k + half] * w;
                    x[start + k] = a + b;
                    x[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
        if self.sign == Direction::Inverse {
            let scale = 1.0 / n as f64;
            x.iter_mut().for_each(|z| *z *= scale);
        }
    }
}

/// 1D FFT of a power-of-two length slice.
pub fn fft1d(x: &mut [Complex64], sign: Direction) -> Result<()> {
    Plan::new(x.len(), sign)?.execute(x);
    Ok(())
}

/// Replace each row in `rows` with its 1D FFT.
pub fn fft1d_rows(m: &mut SignalMatrix, rows: Range<usize>, sign: Direction) -> Result<()> {
    let plan = Plan::new(m.n, sign)?;
    if rows.start > rows.end || rows.end > m.n {
        return Err(Error::OutOfRange(format!(
            "row range {rows:?} outside 0..{}",
            m.n
        )));
    }
    let n = m.n;
    for r in rows {
        plan.execute(&mut m.data[r * n..(r + 1) * n]);
    }
    Ok(())
}

/// Row FFTs across the whole matrix: group `i` owns row band `i`, whose rows
/// are dealt round-robin to the group's threads.
fn grouped_row_phase(data: &mut [Complex64], plan: &Plan, config: Configuration) {
    let n = plan.n;
    let t = config.threads_per_group;
    let mut rows = data.chunks_mut(n);
    thread::scope(|scope| {
        for band in band_ranges(n, config.groups) {
            let mut per_thread: Vec<Vec<&mut [Complex64]>> = (0..t).map(|_| Vec::new()).collect();
            for (i, row) in rows.by_ref().take(band.len()).enumerate() {
                per_thread[i % t].push(row);
            }
            for mine in per_thread {
                if mine.is_empty() {
                    continue;
                }
                scope.spawn(move || {
                    for row in mine {
                        plan.execute(row);
                    }
                });
            }
        }
    });
}

/// Parallel 2D FFT of `m` in place.
pub fn pffttg(
    m: &mut SignalMatrix,
    sign: Direction,
    variant: FftVariant,
    config: Configuration,
    block: usize,
) -> Result<()> {
    let n = m.n;
    let plan = Plan::new(n, sign)?;
    if config.groups == 0 || config.threads_per_group == 0 {
        return Err(Error::invalid("configuration components must be positive"));
    }
    if config.groups > n {
        return Err(Error::invalid(format!(
            "{} threadgroups exceed signal dimension {n}",
            config.groups
        )));
    }
    if block == 0 {
        return Err(Error::invalid("transpose block must be at least 1"));
    }
    let threads = config.total_threads();
    match variant {
        FftVariant::H => {
            grouped_row_phase(&mut m.data, &plan, config);
            transpose_block_parallel(&mut m.data, n, block, threads);
            grouped_row_phase(&mut m.data, &plan, config);
            transpose_block_parallel(&mut m.data, n, block, threads);
        }
        FftVariant::V => {
            transpose_block_parallel(&mut m.data, n, block, threads);
            grouped_row_phase(&mut m.data, &plan, config);
            transpose_block_parallel(&mut m.data, n, block, threads);
            grouped_row_phase(&mut m.data, &plan, config);
        }
    }
    Ok(())
}
