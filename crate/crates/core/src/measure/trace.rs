use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub timestamp_s: f64,
    pub power_w: f64,
}

/// Instantaneous power readings with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    samples: Vec<PowerSample>,
    meter_rate_hz: f64,
}

/// Result of integrating a trace over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub joules: f64,
    /// Number of consecutive sample pairs overlapping the window.
    pub segments: usize,
}

/// Nominal sampling rate of the meters the replay format was designed for.
pub const DEFAULT_METER_RATE_HZ: f64 = 1.0;

impl PowerTrace {
    pub fn new(samples: Vec<PowerSample>, meter_rate_hz: f64) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !s.timestamp_s.is_finite() || !s.power_w.is_finite() || s.power_w < 0.0 {
                return Err(Error::invalid(format!(
                    "sample {i} ({}, {}) must have a finite timestamp and finite non-negative power",
                    s.timestamp_s, s.power_w
                )));
            }
        }
        if let Some(i) = samples
            .windows(2)
            .position(|w| w[1].timestamp_s <= w[0].timestamp_s)
        {
            return Err(Error::invalid(format!(
                "timestamps must increase strictly (sample {} at {} s)",
                i + 1,
                samples[i + 1].timestamp_s
            )));
        }
        Ok(PowerTrace {
            samples,
            meter_rate_hz,
        })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let samples = pairs
            .iter()
            .map(|&(timestamp_s, power_w)| PowerSample {
                timestamp_s,
                power_w,
            })
            .collect();
        PowerTrace::new(samples, DEFAULT_METER_RATE_HZ)
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn meter_rate_hz(&self) -> f64 {
        self.meter_rate_hz
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First and last timestamps.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((
            self.samples.first()?.timestamp_s,
            self.samples.last()?.timestamp_s,
        ))
    }

    /// Read a `timestamp_s,power_w` CSV file.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, path)
    }

    pub fn read_csv<R: Read>(reader: R, label: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let parse_err = |line: usize, message: String| Error::Parse {
            path: label.to_path_buf(),
            line,
            message,
        };
        let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
        if headers != vec!["timestamp_s", "power_w"] {
            return Err(parse_err(
                1,
                format!(
                    "expected header `timestamp_s,power_w`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize, name: &str| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| parse_err(line, format!("`{name}` is not a number")))
            };
            samples.push(PowerSample {
                timestamp_s: field(0, "timestamp_s")?,
                power_w: field(1, "power_w")?,
            });
        }
        PowerTrace::new(samples, DEFAULT_METER_RATE_HZ)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "timestamp_s,power_w")?;
        for s in &self.samples {
            writeln!(out, "{},{}", s.timestamp_s, s.power_w)?;
        }
        Ok(())
    }

    fn power_at(a: &PowerSample, b: &PowerSample, t: f64) -> f64 {
        let frac = (t - a.timestamp_s) / (b.timestamp_s - a.timestamp_s);
        a.power_w + frac * (b.power_w - a.power_w)
    }

    /// Trapezoidal integral over `[t_start, t_end]`, interpolating linearly
    /// at window edges that fall between samples.
    pub fn integrate(&self, t_start: f64, t_end: f64) -> Result<Integral> {
        let (first, last) = self
            .span()
            .ok_or_else(|| Error::invalid("cannot integrate an empty power trace"))?;
        if t_start.is_nan() || t_end.is_nan() || t_start >= t_end {
            return Err(Error::invalid(format!(
                "window start {t_start} must precede end {t_end}"
            )));
        }
        if t_start < first || t_end > last {
            return Err(Error::OutOfRange(format!(
                "window [{t_start}, {t_end}] s not covered by trace span [{first}, {last}] s"
            )));
        }
        let mut joules = 0.0;
        let mut segments = 0;
        for w in self.samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let lo = a.timestamp_s.max(t_start);
            let hi = b.timestamp_s.min(t_end);
            if hi <= lo {
                continue;
            }
            let p_lo = if lo == a.timestamp_s {
                a.power_w
            } else {
                Self::power_at(a, b, lo)
            };
            let p_hi = if hi == b.timestamp_s {
                b.power_w
            } else {
                Self::power_at(a, b, hi)
            };
            joules += 0.5 * (p_lo + p_hi) * (hi - lo);
            segments += 1;
        }
        Ok(Integral { joules, segments })
    }

    /// Time-weighted mean power over the whole trace; for an idle trace this
    /// is the static power of the platform.
    pub fn mean_power(&self) -> Result<f64> {
        let (first, last) = self
            .span()
            .ok_or_else(|| Error::invalid("cannot average an empty power trace"))?;
        if first == last {
            return Ok(self.samples[0].power_w);
        }
        Ok(self.integrate(first, last)?.joules / (last - first))
    }
}

/// Trapezoidal energy in joules over `[t_start, t_end]`.
pub fn integrate_power(trace: &PowerTrace, t_start: f64, t_end: f64) -> Result<f64> {
    Ok(trace.integrate(t_start, t_end)?.joules)
}

/// Parse one `timestamp_s,power_w` line as written by a sampling command.
pub fn parse_sample_line(line: &str) -> Result<PowerSample> {
    let bad = || Error::Measurement(format!("unparsable power sample line `{line}`"));
    let (ts, pw) = line.trim().split_once(',').ok_or_else(bad)?;
    let timestamp_s: f64 = ts.trim().parse().map_err(|_| bad())?;
    let power_w: f64 = pw.trim().parse().map_err(|_| bad())?;
    if !timestamp_s.is_finite() || !power_w.is_finite() || power_w < 0.0 {
        return Err(bad());
    }
    Ok(PowerSample {
        timestamp_s,
        power_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp() -> PowerTrace {
        PowerTrace::from_pairs(&[(0.0, 0.0), (10.0, 100.0)]).unwrap()
    }

    #[test]
    fn constant_and_ramp() {
        let flat = PowerTrace::from_pairs(&[(0.0, 300.0), (10.0, 300.0)]).unwrap();
        assert_eq!(integrate_power(&flat, 0.0, 10.0).unwrap(), 3000.0);
        assert_eq!(integrate_power(&ramp(), 0.0, 10.0).unwrap(), 500.0);
    }

    #[test]
    fn piecewise_by_hand() {
        let t = PowerTrace::from_pairs(&[(0.0, 100.0), (1.0, 200.0), (3.0, 200.0)]).unwrap();
        // 0.5 * (100 + 200) * 1 + 200 * 2
        assert_eq!(integrate_power(&t, 0.0, 3.0).unwrap(), 550.0);
    }

    #[test]
    fn partial_window_interpolates() {
        // Power on [2.5, 7.5] of the ramp: average 50 W over 5 s.
        assert!((integrate_power(&ramp(), 2.5, 7.5).unwrap() - 250.0).abs() < 1e-12);
    }

    #[test]
    fn window_errors() {
        assert!(matches!(
            ramp().integrate(-1.0, 5.0),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            ramp().integrate(5.0, 11.0),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            ramp().integrate(5.0, 5.0),
            Err(Error::InvalidInput(_))
        ));
        let empty = PowerTrace::new(vec![], 1.0).unwrap();
        assert!(matches!(
            empty.integrate(0.0, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rejects_unordered_or_negative() {
        assert!(PowerTrace::from_pairs(&[(0.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(PowerTrace::from_pairs(&[(0.0, -1.0)]).is_err());
    }

    #[test]
    fn one_hertz_trace_uses_one_trapezoid_per_second() {
        let pairs: Vec<(f64, f64)> = (0..=20).map(|s| (s as f64, 50.0 + s as f64)).collect();
        let t = PowerTrace::from_pairs(&pairs).unwrap();
        for k in 1..=10 {
            assert_eq!(t.integrate(3.0, 3.0 + k as f64).unwrap().segments, k);
        }
    }

    #[test]
    fn mean_power_of_idle_trace() {
        let t = PowerTrace::from_pairs(&[(0.0, 90.0), (1.0, 110.0), (2.0, 90.0)]).unwrap();
        assert_eq!(t.mean_power().unwrap(), 100.0);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let text = "timestamp_s,power_w\n0,100\n0.5,120.5\n1,99\n";
        let t = PowerTrace::read_csv(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(t.samples().len(), 3);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(PowerTrace::read_csv(&out[..], Path::new("mem")).unwrap(), t);

        let bad = "timestamp_s,power_w\n0,100\n1,lots\n";
        match PowerTrace::read_csv(bad.as_bytes(), Path::new("mem")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(PowerTrace::read_csv("time,watts\n".as_bytes(), Path::new("mem")).is_err());
    }

    #[test]
    fn sample_lines() {
        assert_eq!(
            parse_sample_line("1.5, 200\n").unwrap(),
            PowerSample {
                timestamp_s: 1.5,
                power_w: 200.0
            }
        );
        assert!(parse_sample_line("garbage").is_err());
        assert!(parse_sample_line("1,x").is_err());
    }

    proptest! {
        #[test]
        fn integration_is_additive(
            powers in prop::collection::vec(0.0f64..500.0, 2..40),
            cut_a in 0.0f64..1.0,
            cut_b in 0.0f64..1.0,
            cut_c in 0.0f64..1.0,
        ) {
            let pairs: Vec<(f64, f64)> = powers.iter().enumerate().map(|(i, &p)| (i as f64 * 0.7, p)).collect();
            let trace = PowerTrace::from_pairs(&pairs).unwrap();
            let end = pairs.last().unwrap().0;
            let mut cuts = [cut_a * end, cut_b * end, cut_c * end];
            cuts.sort_by(f64::total_cmp);
            let [a, b, c] = cuts;
            prop_assume!(a < b && b < c);
            let whole = integrate_power(&trace, a, c).unwrap();
            let parts = integrate_power(&trace, a, b).unwrap() + integrate_power(&trace, b, c).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12 * whole.abs().max(1e-300));
        }
    }
}
