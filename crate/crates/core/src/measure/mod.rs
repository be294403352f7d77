//! Timing, energy sources and dynamic-energy accounting.
//!
//! Dynamic energy is what remains of the total energy drawn over a run once
//! the platform's static (idle) power is subtracted:
//! `E_D = E_T - P_S * T_E`.

mod clock;
mod source;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clock::{Clock, MonotonicClock, VirtualClock};
pub use source::{
    energy_source_measure, CommandSource, EnergyMeasurement, EnergySource, EnergySourceConfig,
    ReplaySource, RunContext, SyntheticExpr, SyntheticSource,
};
pub use trace::{
    integrate_power, parse_sample_line, Integral, PowerSample, PowerTrace, DEFAULT_METER_RATE_HZ,
};

/// The quantities a power-meter measurement can report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MeasureKind {
    /// Execution time, seconds.
    Time,
    /// Average dynamic power, watts.
    DPower,
    /// Total energy, joules.
    TEnergy,
    /// Dynamic energy, joules.
    DEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReading {
    pub total_energy_j: f64,
    pub elapsed_s: f64,
    pub static_power_w: f64,
    pub dynamic_energy_j: f64,
}

impl EnergyReading {
    pub fn new(total_energy_j: f64, elapsed_s: f64, static_power_w: f64) -> Self {
        EnergyReading {
            total_energy_j,
            elapsed_s,
            static_power_w,
            dynamic_energy_j: total_energy_j - static_power_w * elapsed_s,
        }
    }

    pub fn value(&self, kind: MeasureKind) -> f64 {
        match kind {
            MeasureKind::Time => self.elapsed_s,
            MeasureKind::DPower => self.dynamic_energy_j / self.elapsed_s,
            MeasureKind::TEnergy => self.total_energy_j,
            MeasureKind::DEnergy => self.dynamic_energy_j,
        }
    }
}

/// Energy drawn over `[t_start, t_end]` less the static share.
///
/// Fails with [`Error::AnomalousMeasurement`] when the static power exceeds
/// the observed draw.
pub fn dynamic_energy(
    trace: &PowerTrace,
    t_start: f64,
    t_end: f64,
    static_power_w: f64,
) -> Result<EnergyReading> {
    if !static_power_w.is_finite() || static_power_w < 0.0 {
        return Err(Error::invalid(format!(
            "static power must be finite and non-negative, got {static_power_w}"
        )));
    }
    let total = integrate_power(trace, t_start, t_end)?;
    let reading = EnergyReading::new(total, t_end - t_start, static_power_w);
    if reading.dynamic_energy_j < 0.0 {
        return Err(Error::AnomalousMeasurement {
            dynamic_energy_j: reading.dynamic_energy_j,
        });
    }
    Ok(reading)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_draw() {
        let t = PowerTrace::from_pairs(&[(0.0, 300.0), (10.0, 300.0)]).unwrap();
        let r = dynamic_energy(&t, 0.0, 10.0, 100.0).unwrap();
        assert_eq!(r.total_energy_j, 3000.0);
        assert_eq!(r.elapsed_s, 10.0);
        assert_eq!(r.dynamic_energy_j, 2000.0);
        assert_eq!(r.value(MeasureKind::DPower), 200.0);
    }

    #[test]
    fn idle_machine_has_zero_dynamic_energy() {
        let t = PowerTrace::from_pairs(&[(0.0, 100.0), (5.0, 100.0), (9.0, 100.0)]).unwrap();
        for (a, b) in [(0.0, 9.0), (1.5, 2.5), (4.0, 8.25)] {
            assert_eq!(
                dynamic_energy(&t, a, b, 100.0).unwrap().dynamic_energy_j,
                0.0
            );
        }
    }

    #[test]
    fn ramp_with_static_power() {
        let t = PowerTrace::from_pairs(&[(0.0, 0.0), (10.0, 100.0)]).unwrap();
        assert_eq!(
            dynamic_energy(&t, 0.0, 10.0, 25.0)
                .unwrap()
                .dynamic_energy_j,
            250.0
        );
    }

    #[test]
    fn static_power_above_draw_is_anomalous() {
        let t = PowerTrace::from_pairs(&[(0.0, 80.0), (4.0, 80.0)]).unwrap();
        match dynamic_energy(&t, 0.0, 4.0, 100.0) {
            Err(Error::AnomalousMeasurement { dynamic_energy_j }) => {
                assert_eq!(dynamic_energy_j, -80.0)
            }
            other => panic!("expected anomaly, got {other:?}"),
        }
    }

    #[test]
    fn monotone_in_static_power() {
        let t = PowerTrace::from_pairs(&[(0.0, 150.0), (2.0, 250.0), (6.0, 180.0)]).unwrap();
        let mut prev = f64::INFINITY;
        for ps in [0.0, 10.0, 50.0, 100.0, 140.0] {
            let e = dynamic_energy(&t, 0.5, 5.5, ps).unwrap().dynamic_energy_j;
            assert!(e < prev);
            prev = e;
        }
    }
}
