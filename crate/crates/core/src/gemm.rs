//! Threadgroup-parallel dense matrix multiplication, `C = alpha*A*B + beta*C`.
//!
//! The `g` threadgroups each own a disjoint region of `C`:
//!
//! * [`Variant::H`]: a band of rows of `A` and `C`,
//! * [`Variant::V`]: a band of columns of `B` and `C`,
//! * [`Variant::S`]: one block of a `sqrt(g) x sqrt(g)` grid over all three
//!   matrices.
//!
//! Inside a group, the rows of its region are dealt round-robin to the
//! group's `t` threads. Every element of `C` is accumulated over `k` in
//! ascending order, so all variants and configurations produce exactly the
//! same bits as [`gemm_naive`].

use std::ops::Range;
use std::str::FromStr;
use std::thread;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{integer_sqrt, is_perfect_square, Configuration};
use crate::error::{Error, Result};

/// Square row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "matrix of dimension {n} needs {} values, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Matrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("rows must form a square matrix"));
        }
        Matrix::from_vec(n, data)
    }

    /// Entries drawn uniformly from `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let data = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Horizontal row bands.
    H,
    /// Vertical column bands.
    V,
    /// Square grid of blocks.
    S,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "H" => Ok(Variant::H),
            "V" => Ok(Variant::V),
            "S" => Ok(Variant::S),
            _ => Err(Error::invalid(format!(
                "unknown decomposition variant `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PmmtgOptions {
    /// Copy each group's column panel of `B` into a contiguous buffer before
    /// multiplying. Only affects groups that do not own full rows.
    pub copy_panels: bool,
}

/// Split `0..n` into `parts` contiguous bands of `n / parts` elements; the
/// last band absorbs the remainder.
pub fn band_ranges(n: usize, parts: usize) -> Vec<Range<usize>> {
    assert!(parts >= 1, "at least one band required");
    let width = n / parts;
    (0..parts)
        .map(|i| {
            let start = i * width;
            let end = if i + 1 == parts { n } else { start + width };
            start..end
        })
        .collect()
}

/// Region of `C` owned by one threadgroup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

/// Assignment of regions of an `n x n` output to threadgroups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub n: usize,
    pub blocks: Vec<Block>,
}

impl PartitionPlan {
    pub fn new(n: usize, variant: Variant, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::invalid("at least one threadgroup required"));
        }
        if groups > n {
            return Err(Error::invalid(format!(
                "{groups} threadgroups exceed matrix dimension {n}"
            )));
        }
        let blocks = match variant {
            Variant::H => band_ranges(n, groups)
                .into_iter()
                .map(|rows| Block { rows, cols: 0..n })
                .collect(),
            Variant::V => band_ranges(n, groups)
                .into_iter()
                .map(|cols| Block { rows: 0..n, cols })
                .collect(),
            Variant::S => {
                if !is_perfect_square(groups) {
                    return Err(Error::invalid(format!(
                        "variant S needs a square number of threadgroups, got {groups}"
                    )));
                }
                let side = integer_sqrt(groups);
                let bands = band_ranges(n, side);
                let mut blocks = Vec::with_capacity(groups);
                for rows in &bands {
                    for cols in &bands {
                        blocks.push(Block {
                            rows: rows.clone(),
                            cols: cols.clone(),
                        });
                    }
                }
                blocks
            }
        };
        Ok(PartitionPlan { n, blocks })
    }

    /// Number of groups owning each element; 1 everywhere for a valid plan.
    pub fn coverage(&self) -> Vec<usize> {
        let mut hits = vec![0; self.n * self.n];
        for b in &self.blocks {
            for r in b.rows.clone() {
                for c in b.cols.clone() {
                    hits[r * self.n + c] += 1;
                }
            }
        }
        hits
    }
}

fn check_dims(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<()> {
    if a.n != b.n || a.n != c.n {
        return Err(Error::invalid(format!(
            "matrix dimensions differ: A {}, B {}, C {}",
            a.n, b.n, c.n
        )));
    }
    Ok(())
}

/// Textbook triple loop on one thread.
pub fn gemm_naive(a: &Matrix, b: &Matrix, c: &Matrix, alpha: f64, beta: f64) -> Result<Matrix> {
    check_dims(a, b, c)?;
    let n = a.n;
    let mut out = c.clone();
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for k in 0..n {
                sum += a.data[i * n + k] * b.data[k * n + j];
            }
            out.data[i * n + j] = alpha * sum + beta * c.data[i * n + j];
        }
    }
    Ok(out)
}

/// `alpha*A*B + beta*C` computed by `config.groups` threadgroups.
pub fn pmmtg(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    alpha: f64,
    beta: f64,
    variant: Variant,
    config: Configuration,
) -> Result<Matrix> {
    let mut out = c.clone();
    pmmtg_in_place(
        a,
        b,
        &mut out,
        alpha,
        beta,
        variant,
        config,
        PmmtgOptions::default(),
    )?;
    Ok(out)
}

/// In-place form of [`pmmtg`]; `c` is overwritten with the result.
#[allow(clippy::too_many_arguments)]
pub fn pmmtg_in_place(
    a: &Matrix,
    b: &Matrix,
    c: &mut Matrix,
    alpha: f64,
    beta: f64,
    variant: Variant,
    config: Configuration,
    options: PmmtgOptions,
) -> Result<()> {
    check_dims(a, b, c)?;
    if config.threads_per_group == 0 {
        return Err(Error::invalid("threads per group must be at least 1"));
    }
    let n = a.n;
    let plan = PartitionPlan::new(n, variant, config.groups)?;
    let mut work = split_output(&plan, &mut c.data);
    let t = config.threads_per_group;

    thread::scope(|scope| {
        for (block, segments) in plan.blocks.iter().zip(work.iter_mut()) {
            let panel =
                (options.copy_panels && block.cols.len() != n).then(|| copy_panel(b, &block.cols));
            let mut per_thread: Vec<Vec<RowSegment<'_>>> = (0..t).map(|_| Vec::new()).collect();
            for (i, seg) in segments.drain(..).enumerate() {
                per_thread[i % t].push(seg);
            }
            for rows in per_thread {
                let panel = panel.clone();
                let cols = block.cols.clone();
                scope.spawn(move || {
                    let b_view = match &panel {
                        Some(p) => PanelView {
                            data: p,
                            stride: cols.len(),
                            offset: 0,
                        },
                        None => PanelView {
                            data: &b.data,
                            stride: n,
                            offset: cols.start,
                        },
                    };
                    let mut acc = vec![0.0; cols.len()];
                    for seg in rows {
                        multiply_segment(a, &b_view, seg, &mut acc, alpha, beta);
                    }
                });
            }
        }
    });
    Ok(())
}

struct RowSegment<'a> {
    row: usize,
    out: &'a mut [f64],
}

struct PanelView<'a> {
    data: &'a [f64],
    stride: usize,
    offset: usize,
}

fn copy_panel(b: &Matrix, cols: &Range<usize>) -> std::sync::Arc<Vec<f64>> {
    let mut panel = Vec::with_capacity(b.n * cols.len());
    for k in 0..b.n {
        panel.extend_from_slice(&b.data[k * b.n + cols.start..k * b.n + cols.end]);
    }
    std::sync::Arc::new(panel)
}

fn multiply_segment(
    a: &Matrix,
    b: &PanelView<'_>,
    seg: RowSegment<'_>,
    acc: &mut [f64],
    alpha: f64,
    beta: f64,
) {
    let n = a.n;
    let width = seg.out.len();
    let acc = &mut acc[..width];
    acc.fill(0.0);
    let a_row = &a.data[seg.row * n..(seg.row + 1) * n];
    for (k, &aik) in a_row.iter().enumerate() {
        let start = k * b.stride + b.offset;
        let b_row = &b.data[start..start + width];
        for (s, &bkj) in acc.iter_mut().zip(b_row) {
            *s += aik * bkj;
        }
    }
    for (o, &s) in seg.out.iter_mut().zip(acc.iter()) {
        *o = alpha * s + beta * *o;
    }
}

/// Hand each group mutable row segments of exactly the region it owns.
fn split_output<'a>(plan: &PartitionPlan, data: &'a mut [f64]) -> Vec<Vec<RowSegment<'a>>> {
    let n = plan.n;
    let mut work: Vec<Vec<RowSegment<'a>>> = plan.blocks.iter().map(|_| Vec::new()).collect();
    for (row, mut rest) in data.chunks_mut(n).enumerate() {
        let mut owners: Vec<usize> = (0..plan.blocks.len())
            .filter(|&g| plan.blocks[g].rows.contains(&row))
            .collect();
        owners.sort_by_key(|&g| plan.blocks[g].cols.start);
        let mut consumed = 0;
        for g in owners {
            let cols = &plan.blocks[g].cols;
            let (_, tail) = rest.split_at_mut(cols.start - consumed);
            let (seg, tail) = tail.split_at_mut(cols.len());
            rest = tail;
            consumed = cols.end;
            work[g].push(RowSegment { row, out: seg });
        }
    }
    work
}
