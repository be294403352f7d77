//! Repeat a measurement until its sample mean is known to a requested
//! precision, using Student's t confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::config::Precision;
use crate::error::{Error, Result};
use crate::measure::Clock;

/// `|F^-1(cl)|` for Student's t with `df` degrees of freedom.
pub fn t_quantile(cl: f64, df: u64) -> Result<f64> {
    if !(cl > 0.0 && cl < 1.0) {
        return Err(Error::invalid(format!(
            "quantile level must lie in (0,1), got {cl}"
        )));
    }
    if df == 0 {
        return Err(Error::invalid("degrees of freedom must be at least 1"));
    }
    if cl == 0.5 {
        return Ok(0.0);
    }
    let p = cl.max(1.0 - cl);
    let df = df as f64;
    // Upper tail beyond x >= 0 is I_{df/(df+x^2)}(df/2, 1/2) / 2.
    let upper_tail = |x: f64| 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x * x));
    let target = 1.0 - p;

    let mut hi = 1.0;
    while upper_tail(hi) > target {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::invalid(format!("t quantile at {cl} overflows")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if upper_tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Why the repetition loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxReps,
    MaxElapsed,
}

/// Pearson chi-squared goodness-of-fit of the observations against a normal
/// distribution with their own mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub bins: usize,
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtestResult {
    pub reps_out: usize,
    /// Confidence-interval half width, in observation units.
    pub achieved_half_width: f64,
    pub achieved_rel_error: f64,
    pub elapsed_s: f64,
    pub mean: f64,
    pub sd: f64,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub normality: Option<NormalityReport>,
}

/// Running mean and squared-deviation sum (Welford). Exact for constant
/// input: every update then has a zero delta.
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn sd(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2.max(0.0) / (self.count - 1) as f64).sqrt()
    }
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_sd(xs: &[f64]) -> f64 {
    let mut r = Running::default();
    for &x in xs {
        r.push(x);
    }
    r.sd()
}

/// Equiprobable-bin chi-squared normality check; `None` when there are too
/// few observations (fewer than five expected per bin over four bins) or no
/// spread.
pub fn normality_check(xs: &[f64]) -> Option<NormalityReport> {
    let bins = (xs.len() / 5).min(20);
    if bins < 4 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = sample_sd(xs);
    if sd.is_nan() || sd <= 0.0 {
        return None;
    }
    let normal = Normal::new(mean, sd).ok()?;
    let edges: Vec<f64> = (1..bins)
        .map(|k| normal.inverse_cdf(k as f64 / bins as f64))
        .collect();
    let mut counts = vec![0usize; bins];
    for &x in xs {
        counts[edges.partition_point(|&e| e <= x)] += 1;
    }
    let expected = xs.len() as f64 / bins as f64;
    let statistic: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // Two parameters were estimated from the data.
    let degrees_of_freedom = bins - 3;
    let p_value = 1.0
        - ChiSquared::new(degrees_of_freedom as f64)
            .ok()?
            .cdf(statistic);
    Some(NormalityReport {
        bins,
        statistic,
        degrees_of_freedom,
        p_value,
    })
}

/// Repeat `observe` until the relative half width of the `cl` confidence
/// interval drops below the target, or a repetition or time cap is hit.
///
/// Observations must be positive. Each call to `observe` is timed with
/// `clock` and counted toward `precision.max_elapsed_s`; the convergence and
/// time checks run only once more than `min_reps` observations exist.
pub fn mean_using_ttest<F>(
    mut observe: F,
    precision: &Precision,
    clock: &dyn Clock,
) -> Result<TtestResult>
where
    F: FnMut() -> Result<f64>,
{
    precision.validate()?;
    let mut observations: Vec<f64> = Vec::new();
    let mut running = Running::default();
    let mut sum = 0.0;
    let mut elapsed = 0.0;
    let mut half_width = 0.0;
    let mut stop = None;

    while observations.len() < precision.max_reps && stop.is_none() {
        let started = clock.now();
        let value = observe().map_err(|source| Error::ObservationFailed {
            reps: observations.len(),
            elapsed_s: elapsed,
            source: Box::new(source),
        })?;
        let finished = clock.now();
        elapsed += finished - started;
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::ObservationFailed {
                reps: observations.len(),
                elapsed_s: elapsed,
                source: Box::new(Error::invalid(format!(
                    "observation {value} is not a positive number"
                ))),
            });
        }
        observations.push(value);
        running.push(value);
        sum += value;
        let reps = observations.len();
        if reps > precision.min_reps {
            half_width = t_quantile(precision.confidence_level, (reps - 1) as u64)? * running.sd()
                / (reps as f64).sqrt();
            if half_width * reps as f64 / sum < precision.target_rel_error {
                stop = Some(StopReason::Converged);
            } else if elapsed > precision.max_elapsed_s {
                stop = Some(StopReason::MaxElapsed);
            }
        }
    }

    let reps = observations.len();
    Ok(TtestResult {
        reps_out: reps,
        achieved_half_width: half_width,
        achieved_rel_error: half_width * reps as f64 / sum,
        elapsed_s: elapsed,
        mean: sum / reps as f64,
        sd: running.sd(),
        converged: stop == Some(StopReason::Converged),
        stop_reason: stop.unwrap_or(StopReason::MaxReps),
        normality: normality_check(&observations),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::VirtualClock;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist};
    use statrs::function::gamma::ln_gamma;

    /// Independent oracle: Simpson integration of the t density from 0 to x.
    fn t_cdf_by_quadrature(x: f64, df: f64) -> f64 {
        let log_norm = ln_gamma((df + 1.0) / 2.0)
            - ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |u: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + u * u / df).ln()).exp();
        let steps = 20_000;
        let h = x / steps as f64;
        let mut acc = pdf(0.0) + pdf(x);
        for i in 1..steps {
            acc += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn quantile_table_values() {
        assert_eq!(t_quantile(0.5, 7).unwrap(), 0.0);
        assert!((t_quantile(0.95, 14).unwrap() - 1.7613).abs() < 1e-4);
        assert!((t_quantile(0.975, 1).unwrap() - 12.7062).abs() < 1e-4);
        assert!((t_quantile(0.05, 14).unwrap() - 1.7613).abs() < 1e-4);
    }

    #[test]
    fn quantile_inverts_quadrature_cdf() {
        for df in [1u64, 2, 5, 14, 30, 120] {
            for cl in [0.6, 0.9, 0.95, 0.975, 0.99] {
                let x = t_quantile(cl, df).unwrap();
                let back = t_cdf_by_quadrature(x, df as f64);
                assert!((back - cl).abs() < 1e-7, "df={df} cl={cl}: {back}");
            }
        }
    }

    #[test]
    fn quantile_rejects_bad_input() {
        assert!(t_quantile(0.0, 3).is_err());
        assert!(t_quantile(1.0, 3).is_err());
        assert!(t_quantile(0.9, 0).is_err());
    }

    fn precision(min: usize, max: usize) -> Precision {
        Precision {
            min_reps: min,
            max_reps: max,
            ..Precision::METHODOLOGY
        }
    }

    #[test]
    fn constant_observations_stop_after_min_reps() {
        let clock = VirtualClock::new();
        for min in [1, 2, 15, 40] {
            let r = mean_using_ttest(|| Ok(5.0), &precision(min, 1000), &clock).unwrap();
            assert_eq!(r.reps_out, min + 1);
            assert_eq!(r.mean, 5.0);
            assert_eq!(r.achieved_rel_error, 0.0);
            assert!(r.converged);
        }
    }

    #[test]
    fn extreme_variance_hits_rep_cap() {
        let clock = VirtualClock::new();
        let mut flip = false;
        let r = mean_using_ttest(
            || {
                flip = !flip;
                Ok(if flip { 1.0 } else { 1e6 })
            },
            &precision(15, 20),
            &clock,
        )
        .unwrap();
        assert_eq!(r.reps_out, 20);
        assert!(!r.converged);
        assert_eq!(r.stop_reason, StopReason::MaxReps);
    }

    #[test]
    fn time_cap() {
        let clock = VirtualClock::new();
        let mut flip = false;
        let p = Precision {
            max_elapsed_s: 0.0,
            ..precision(15, 1000)
        };
        let r = mean_using_ttest(
            || {
                clock.advance(1e-9);
                flip = !flip;
                Ok(if flip { 1.0 } else { 3.0 })
            },
            &p,
            &clock,
        )
        .unwrap();
        assert_eq!(r.reps_out, 16);
        assert!(!r.converged);
        assert_eq!(r.stop_reason, StopReason::MaxElapsed);
        assert!((r.elapsed_s - 16e-9).abs() < 1e-15);
    }

    #[test]
    fn observation_error_aborts_with_partial_state() {
        let clock = VirtualClock::new();
        let mut n = 0;
        let err = mean_using_ttest(
            || {
                n += 1;
                if n == 4 {
                    Err(Error::Kernel("boom".into()))
                } else {
                    Ok(1.0)
                }
            },
            &precision(15, 100),
            &clock,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ObservationFailed { reps: 3, .. }));
    }

    #[test]
    fn relative_error_identity() {
        let clock = VirtualClock::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = NormalDist::<f64>::new(10.0, 2.0).unwrap();
        let r = mean_using_ttest(
            || Ok(normal.sample(&mut rng).abs()),
            &precision(15, 5000),
            &clock,
        )
        .unwrap();
        let sum = r.mean * r.reps_out as f64;
        assert!(
            (r.achieved_rel_error - r.achieved_half_width * r.reps_out as f64 / sum).abs() < 1e-15
        );
        assert!(r.reps_out <= 5000);
    }

    #[test]
    fn coverage_on_normal_observations() {
        let clock = VirtualClock::new();
        let normal = NormalDist::<f64>::new(10.0, 0.1).unwrap();
        let mut covered = 0;
        let mut converged = 0;
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = mean_using_ttest(
                || Ok(normal.sample(&mut rng)),
                &Precision::METHODOLOGY,
                &clock,
            )
            .unwrap();
            if r.converged {
                converged += 1;
                if (r.mean - 10.0).abs() <= 3.0 * r.achieved_half_width {
                    covered += 1;
                }
            }
        }
        assert_eq!(converged, 1000);
        assert!(
            covered as f64 >= 0.99 * converged as f64,
            "{covered}/{converged}"
        );
    }

    #[test]
    fn normality_report() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = NormalDist::<f64>::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..500).map(|_| normal.sample(&mut rng)).collect();
        let r = normality_check(&xs).unwrap();
        assert_eq!(r.bins, 20);
        assert!(r.p_value > 0.001);
        let skewed: Vec<f64> = (0..500).map(|i| ((i % 50) as f64).exp()).collect();
        assert!(normality_check(&skewed).unwrap().p_value < 1e-6);
        assert!(normality_check(&[1.0; 10]).is_none());
    }
}
