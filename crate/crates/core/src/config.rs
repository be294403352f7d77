//! Shared domain types: decision variables, objective samples, precision
//! settings and workload descriptors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Direction;

/// A runtime configuration: `groups` threadgroups of `threads_per_group`
/// threads each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub groups: usize,
    pub threads_per_group: usize,
}

impl Configuration {
    pub fn new(groups: usize, threads_per_group: usize) -> Result<Self> {
        if groups == 0 || threads_per_group == 0 {
            return Err(Error::invalid(format!(
                "configuration ({groups},{threads_per_group}) must have positive components"
            )));
        }
        Ok(Configuration {
            groups,
            threads_per_group,
        })
    }

    /// Total number of worker threads, `g * t`.
    pub fn total_threads(&self) -> usize {
        self.groups * self.threads_per_group
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.groups, self.threads_per_group)
    }
}

/// Every `(g, t)` with `g * t <= cores`, ordered by `g` then `t`.
pub fn enumerate_configurations(cores: usize) -> Result<Vec<Configuration>> {
    if cores == 0 {
        return Err(Error::invalid("core count must be at least 1"));
    }
    let mut out = Vec::new();
    for groups in 1..=cores {
        for threads_per_group in 1..=cores / groups {
            out.push(Configuration {
                groups,
                threads_per_group,
            });
        }
    }
    Ok(out)
}

/// Measured objective vector for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSample {
    pub config: Configuration,
    pub time_s: f64,
    pub dynamic_energy_j: f64,
}

impl ObjectiveSample {
    pub fn new(config: Configuration, time_s: f64, dynamic_energy_j: f64) -> Result<Self> {
        if !time_s.is_finite() || time_s <= 0.0 {
            return Err(Error::invalid(format!(
                "time for {config} must be finite and positive, got {time_s}"
            )));
        }
        if !dynamic_energy_j.is_finite() {
            return Err(Error::invalid(format!(
                "dynamic energy for {config} must be finite, got {dynamic_energy_j}"
            )));
        }
        Ok(ObjectiveSample {
            config,
            time_s,
            dynamic_energy_j,
        })
    }

    pub fn objective(&self) -> [f64; 2] {
        [self.time_s, self.dynamic_energy_j]
    }
}

/// Stopping criteria for the repetition loop in [`crate::stats::mean_using_ttest`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub min_reps: usize,
    pub max_reps: usize,
    pub max_elapsed_s: f64,
    pub confidence_level: f64,
    pub target_rel_error: f64,
}

impl Precision {
    /// Experimental-methodology preset: 15..100000 repetitions, one hour,
    /// 95% confidence, 2.5% precision.
    pub const METHODOLOGY: Precision = Precision {
        min_reps: 15,
        max_reps: 100_000,
        max_elapsed_s: 3600.0,
        confidence_level: 0.95,
        target_rel_error: 0.025,
    };

    /// Power-meter API preset: at most 1000 repetitions, otherwise as
    /// [`Precision::METHODOLOGY`]. The API does not name a minimum, so the
    /// methodology minimum is kept.
    pub const METER_API: Precision = Precision {
        min_reps: 15,
        max_reps: 1000,
        max_elapsed_s: 3600.0,
        confidence_level: 0.95,
        target_rel_error: 0.025,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(Error::invalid(format!(
                "confidence level must lie in (0,1), got {}",
                self.confidence_level
            )));
        }
        if !(self.target_rel_error > 0.0 && self.target_rel_error < 1.0) {
            return Err(Error::invalid(format!(
                "target relative error must lie in (0,1), got {}",
                self.target_rel_error
            )));
        }
        if self.min_reps >= self.max_reps {
            return Err(Error::invalid(format!(
                "min_reps ({}) must be below max_reps ({})",
                self.min_reps, self.max_reps
            )));
        }
        if self.max_elapsed_s.is_nan() || self.max_elapsed_s < 0.0 {
            return Err(Error::invalid("max_elapsed_s must be non-negative"));
        }
        Ok(())
    }
}

impl Default for Precision {
    fn default() -> Self {
        Precision::METHODOLOGY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelId {
    GemmH,
    GemmV,
    GemmS,
    FftH,
    FftV,
    /// Does no work; advances a virtual clock by a configured time. Used for
    /// deterministic end-to-end runs.
    Stub,
}

impl KernelId {
    pub const ALL: [KernelId; 6] = [
        KernelId::GemmH,
        KernelId::GemmV,
        KernelId::GemmS,
        KernelId::FftH,
        KernelId::FftV,
        KernelId::Stub,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelId::GemmH => "gemm_h",
            KernelId::GemmV => "gemm_v",
            KernelId::GemmS => "gemm_s",
            KernelId::FftH => "fft_h",
            KernelId::FftV => "fft_v",
            KernelId::Stub => "stub",
        }
    }

    pub fn is_gemm(&self) -> bool {
        matches!(self, KernelId::GemmH | KernelId::GemmV | KernelId::GemmS)
    }

    pub fn is_fft(&self) -> bool {
        matches!(self, KernelId::FftH | KernelId::FftV)
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelId::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown kernel `{s}`")))
    }
}

/// What to run and at which size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub kernel_id: KernelId,
    pub n: usize,
    pub scalar_alpha: f64,
    pub scalar_beta: f64,
    pub fft_sign: Direction,
    pub transpose_block: usize,
}

impl Workload {
    pub fn new(kernel_id: KernelId, n: usize) -> Self {
        Workload {
            kernel_id,
            n,
            scalar_alpha: 1.0,
            scalar_beta: 1.0,
            fft_sign: Direction::Forward,
            transpose_block: crate::fft::DEFAULT_TRANSPOSE_BLOCK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("problem dimension n must be at least 1"));
        }
        if self.kernel_id.is_fft() && !self.n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "FFT kernels need a power-of-two dimension, got {}",
                self.n
            )));
        }
        if self.transpose_block == 0 {
            return Err(Error::invalid("transpose block must be at least 1"));
        }
        Ok(())
    }

    /// Reason this workload cannot run under `config`, if any.
    pub fn incompatibility(&self, config: &Configuration) -> Option<String> {
        if self.kernel_id == KernelId::Stub {
            return None;
        }
        if config.groups > self.n {
            return Some(format!(
                "{} threadgroups exceed the {} rows of the problem",
                config.groups, self.n
            ));
        }
        if self.kernel_id == KernelId::GemmS && !is_perfect_square(config.groups) {
            return Some(format!(
                "gemm_s needs a square number of threadgroups, got {}",
                config.groups
            ));
        }
        None
    }
}

pub(crate) fn integer_sqrt(v: usize) -> usize {
    let mut r = (v as f64).sqrt() as usize;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

pub(crate) fn is_perfect_square(v: usize) -> bool {
    let r = integer_sqrt(v);
    r * r == v
}
