//! Resistive tactile sensor front end: pressure to voltage, voltage to the
//! digital word a node transmits, and back.
//!
//! The transfer curve is piecewise linear and falling: steep in the
//! low-pressure band, flatter once the sensor begins to saturate. First-order
//! rise/fall dynamics can be layered on top; they default to off so codec
//! tests see the static map.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Measured step-response time constant of the reference sensor (seconds).
/// Recorded for configuration defaults; dynamics are disabled until a
/// config opts in.
pub const RESPONSE_TIME_S: f64 = 0.740;
/// Measured recovery (unload) time constant of the reference sensor (seconds).
pub const RECOVERY_TIME_S: f64 = 0.024;
/// Measured loading/unloading hysteresis of the reference sensor, percent of
/// reading at 55, 90 and 140 kPa. Documented only; the model does not
/// simulate hysteresis.
pub const HYSTERESIS_PCT: [(f64, f64); 3] = [(55.0, 33.87), (90.0, 10.99), (140.0, 10.62)];

/// One linear span of the transfer curve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SensitivitySegment {
    pub p_lo_kpa: f64,
    pub p_hi_kpa: f64,
    /// Slope in V/kPa; negative for a resistive divider that sags under load.
    pub slope_v_per_kpa: f64,
}

/// Static and dynamic description of one sensing element plus its ADC.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    /// Unloaded output voltage.
    pub v0: f64,
    pub segments: Vec<SensitivitySegment>,
    pub p_max_kpa: f64,
    /// ADC reference; full scale maps to the top code.
    pub vref: f64,
    /// Word width in bits.
    pub adc_bits: u8,
    /// Loading time constant in seconds; zero disables dynamics.
    pub tau_rise: f64,
    /// Unloading time constant in seconds; zero disables dynamics.
    pub tau_fall: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            v0: 3.3,
            segments: vec![
                SensitivitySegment { p_lo_kpa: 0.0, p_hi_kpa: 50.0, slope_v_per_kpa: -0.033 },
                SensitivitySegment { p_lo_kpa: 50.0, p_hi_kpa: 140.0, slope_v_per_kpa: -0.0059 },
            ],
            p_max_kpa: 140.0,
            vref: 3.3,
            adc_bits: 10,
            tau_rise: 0.0,
            tau_fall: 0.0,
        }
    }
}

/// A pressure-domain result clamped into the calibrated range, with a flag
/// telling whether clamping happened.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PressureReading {
    pub kpa: f64,
    pub clamped: bool,
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("sensor: no sensitivity segments".into()));
        }
        let mut expect = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            if (s.p_lo_kpa - expect).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "sensor: segment {i} starts at {} kPa, expected {expect}"
                    , s.p_lo_kpa
                )));
            }
            if s.p_hi_kpa <= s.p_lo_kpa {
                return Err(Error::Config(format!("sensor: segment {i} is empty")));
            }
            if s.slope_v_per_kpa >= 0.0 {
                return Err(Error::Config(format!(
                    "sensor: segment {i} slope must be negative"
                )));
            }
            expect = s.p_hi_kpa;
        }
        if (expect - self.p_max_kpa).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sensor: segments end at {expect} kPa but p_max is {}",
                self.p_max_kpa
            )));
        }
        if self.adc_bits == 0 || self.adc_bits > 24 {
            return Err(Error::Config("sensor: adc_bits must be in 1..=24".into()));
        }
        if self.vref <= 0.0 {
            return Err(Error::Config("sensor: vref must be positive".into()));
        }
        if self.voltage_at(self.p_max_kpa) < 0.0 {
            return Err(Error::Config(
                "sensor: transfer curve goes negative before p_max".into(),
            ));
        }
        if self.tau_rise < 0.0 || self.tau_fall < 0.0 {
            return Err(Error::Config("sensor: time constants must be >= 0".into()));
        }
        Ok(())
    }

    fn voltage_at(&self, p: f64) -> f64 {
        let mut v = self.v0;
        for s in &self.segments {
            if p <= s.p_lo_kpa {
                break;
            }
            let span = p.min(s.p_hi_kpa) - s.p_lo_kpa;
            v += s.slope_v_per_kpa * span;
        }
        v
    }

    /// Static map from pressure to output voltage. Pressure above the
    /// calibrated range saturates at p_max; negative pressure is a domain
    /// error.
    pub fn pressure_to_voltage(&self, p_kpa: f64) -> Result<f64> {
        if !p_kpa.is_finite() || p_kpa < 0.0 {
            return Err(Error::Config(format!(
                "pressure {p_kpa} kPa outside sensor domain"
            )));
        }
        Ok(self.voltage_at(p_kpa.min(self.p_max_kpa)))
    }

    /// Exact inverse of the static map on [v(p_max), v0]. Out-of-range
    /// voltages clamp to the nearest endpoint and set the flag.
    pub fn voltage_to_pressure(&self, v: f64) -> PressureReading {
        let v_floor = self.voltage_at(self.p_max_kpa);
        if v >= self.v0 {
            return PressureReading { kpa: 0.0, clamped: v > self.v0 };
        }
        if v <= v_floor {
            return PressureReading { kpa: self.p_max_kpa, clamped: v < v_floor };
        }
        let mut v_hi = self.v0;
        for s in &self.segments {
            let v_lo = v_hi + s.slope_v_per_kpa * (s.p_hi_kpa - s.p_lo_kpa);
            if v >= v_lo {
                let kpa = s.p_lo_kpa + (v - v_hi) / s.slope_v_per_kpa;
                return PressureReading { kpa, clamped: false };
            }
            v_hi = v_lo;
        }
        PressureReading { kpa: self.p_max_kpa, clamped: false }
    }

    /// Quantize a voltage to the node's word: round(v / vref * 2^k), clamped
    /// to the code range.
    pub fn adc_quantize(&self, v: f64) -> u32 {
        let full = (1u32 << self.adc_bits) as f64;
        let top = (1u32 << self.adc_bits) - 1;
        let code = (v.clamp(0.0, self.vref) / self.vref * full).round();
        (code as u32).min(top)
    }

    /// Voltage represented by a word: bits / 2^k * vref.
    pub fn word_to_voltage(&self, bits: u32) -> f64 {
        let full = (1u32 << self.adc_bits) as f64;
        bits as f64 / full * self.vref
    }

    /// One step of the first-order lag toward `target` over `dt` seconds.
    /// Moving away from the unloaded voltage uses the rise constant,
    /// returning toward it the fall constant. Zero constants pass the target
    /// straight through.
    pub fn step_dynamics(&self, state: f64, target: f64, dt: f64) -> f64 {
        let loading = (target - self.v0).abs() > (state - self.v0).abs();
        let tau = if loading { self.tau_rise } else { self.tau_fall };
        if tau <= 0.0 {
            return target;
        }
        state + (target - state) * (1.0 - (-dt / tau).exp())
    }
}

/// One frame of pressures over the array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PressureFrame {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl PressureFrame {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Config(format!(
                "pressure frame needs {} values for {rows}x{cols}, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(PressureFrame { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        PressureFrame { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }
}
