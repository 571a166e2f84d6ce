//! Shared-wire channel: superposition, attenuation, noise, digitization.
//!
//! Every node drives the same sense wire through its source resistor, so the
//! receiver sees the sum of all node waveforms scaled by the resistive
//! divider. Acquisition adds noise and quantizes to the capture ADC's grid.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::encoder::NodeWaveform;
use crate::{Error, Result};

/// Additive noise injected at the receiver input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    /// Uniform on [-bound, +bound] volts.
    Uniform { bound: f64 },
    /// Zero-mean Gaussian with the given standard deviation in volts.
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseModel::None => true,
            NoiseModel::Uniform { bound } => bound >= 0.0 && bound.is_finite(),
            NoiseModel::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("noise bound must be finite and non-negative".into()))
        }
    }
}

/// Receiver-side channel parameters.
#[derive(Clone, Debug)]
pub struct ChannelConfig {
    /// Y-fold voltage reduction of the summed node drive: the receiver sees
    /// the sum divided by Y. Must be at least 1.
    pub attenuation_y: f64,
    /// Invert the sense polarity, as an inverting summing stage does.
    pub invert_output: bool,
    pub noise: NoiseModel,
    /// Capture ADC resolution in bits.
    pub adc_bits: u8,
    /// Capture ADC full scale: codes span [-fullscale, +fullscale] volts.
    pub fullscale: f64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.attenuation_y >= 1.0 && self.attenuation_y.is_finite()) {
            return Err(Error::Config("channel: attenuation_y must be at least 1".into()));
        }
        if self.adc_bits < 2 || self.adc_bits > 24 {
            return Err(Error::Config("channel: adc_bits must be in 2..=24".into()));
        }
        if !(self.fullscale > 0.0 && self.fullscale.is_finite()) {
            return Err(Error::Config("channel: fullscale must be positive".into()));
        }
        self.noise.validate()
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            attenuation_y: 11.0,
            invert_output: true,
            noise: NoiseModel::None,
            adc_bits: 16,
            fullscale: 5.0,
        }
    }
}

/// A sampled voltage record of the shared wire.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalogTrace {
    pub sample_rate: f64,
    pub t0: f64,
    pub samples: Vec<f64>,
}

impl AnalogTrace {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + index as f64 / self.sample_rate
    }
}

/// Chunk width used for the fixed superposition summation tree. Keeping the
/// grouping a function of length alone makes the parallel and sequential
/// sums bit-identical.
fn chunk_width(n_inputs: usize) -> usize {
    n_inputs.div_ceil(32).max(4)
}

fn check_aligned(waveforms: &[&NodeWaveform]) -> Result<(f64, f64, usize)> {
    let first = waveforms
        .first()
        .ok_or_else(|| Error::Config("superimpose: no waveforms".into()))?;
    for w in waveforms {
        if w.sample_rate != first.sample_rate
            || w.t0 != first.t0
            || w.samples.len() != first.samples.len()
        {
            return Err(Error::Config(
                "superimpose: waveforms must share rate, origin, and length".into(),
            ));
        }
    }
    Ok((first.sample_rate, first.t0, first.samples.len()))
}

fn sum_groups(groups: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; len];
    for g in groups {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    acc
}

fn group_sums_seq(waveforms: &[&NodeWaveform], len: usize) -> Vec<Vec<f64>> {
    waveforms
        .chunks(chunk_width(waveforms.len()))
        .map(|chunk| {
            let mut g = vec![0.0f64; len];
            for w in chunk {
                for (a, &v) in g.iter_mut().zip(&w.samples) {
                    *a += v;
                }
            }
            g
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn group_sums(waveforms: &[&NodeWaveform], len: usize) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    waveforms
        .par_chunks(chunk_width(waveforms.len()))
        .map(|chunk| {
            let mut g = vec![0.0f64; len];
            for w in chunk {
                for (a, &v) in g.iter_mut().zip(&w.samples) {
                    *a += v;
                }
            }
            g
        })
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn group_sums(waveforms: &[&NodeWaveform], len: usize) -> Vec<Vec<f64>> {
    group_sums_seq(waveforms, len)
}

/// Sum aligned node waveforms and apply the divider (and optional
/// inversion). All waveforms must share sample rate, origin, and length.
pub fn superimpose(waveforms: &[&NodeWaveform], cfg: &ChannelConfig) -> Result<AnalogTrace> {
    let (fs, t0, len) = check_aligned(waveforms)?;
    let groups = group_sums(waveforms, len);
    Ok(finish_superposition(sum_groups(groups, len), fs, t0, cfg))
}

/// Sequential reference implementation of [`superimpose`]; same summation
/// tree, same result to the last bit.
pub fn superimpose_seq(waveforms: &[&NodeWaveform], cfg: &ChannelConfig) -> Result<AnalogTrace> {
    let (fs, t0, len) = check_aligned(waveforms)?;
    let groups = group_sums_seq(waveforms, len);
    Ok(finish_superposition(sum_groups(groups, len), fs, t0, cfg))
}

fn finish_superposition(mut acc: Vec<f64>, fs: f64, t0: f64, cfg: &ChannelConfig) -> AnalogTrace {
    let scale = if cfg.invert_output { -1.0 } else { 1.0 } / cfg.attenuation_y;
    for v in &mut acc {
        *v *= scale;
    }
    AnalogTrace { sample_rate: fs, t0, samples: acc }
}

/// Scale an already-summed sample buffer in place. Used by the simulator,
/// which accumulates node renders directly instead of materializing
/// waveforms.
pub fn apply_divider(samples: &mut [f64], cfg: &ChannelConfig) {
    let scale = if cfg.invert_output { -1.0 } else { 1.0 } / cfg.attenuation_y;
    for v in samples {
        *v *= scale;
    }
}

/// Add receiver noise in place.
pub fn add_noise<R: Rng>(trace: &mut AnalogTrace, noise: &NoiseModel, rng: &mut R) {
    match *noise {
        NoiseModel::None => {}
        NoiseModel::Uniform { bound } => {
            if bound > 0.0 {
                let d = Uniform::new_inclusive(-bound, bound).expect("validated bound");
                for v in &mut trace.samples {
                    *v += d.sample(rng);
                }
            }
        }
        NoiseModel::Gaussian { sigma } => {
            if sigma > 0.0 {
                let d = Normal::new(0.0, sigma).expect("validated sigma");
                for v in &mut trace.samples {
                    *v += d.sample(rng);
                }
            }
        }
    }
}

/// Result of quantizing a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitizedTrace {
    pub sample_rate: f64,
    pub t0: f64,
    pub codes: Vec<i32>,
    /// ADC step in volts.
    pub step: f64,
    /// Samples outside [-fullscale, +fullscale] that had to be clipped.
    pub clipped: usize,
}

impl DigitizedTrace {
    /// Reconstruct voltages from codes.
    pub fn to_voltages(&self) -> AnalogTrace {
        AnalogTrace {
            sample_rate: self.sample_rate,
            t0: self.t0,
            samples: self.codes.iter().map(|&c| c as f64 * self.step).collect(),
        }
    }
}

/// Midtread quantizer over [-fullscale, +fullscale] with 2^bits levels.
/// Round-trip error is bounded by fullscale / 2^bits per sample.
pub fn digitize(trace: &AnalogTrace, cfg: &ChannelConfig) -> DigitizedTrace {
    let levels = 1i64 << cfg.adc_bits;
    let step = 2.0 * cfg.fullscale / levels as f64;
    let lo = -(levels / 2) as i32;
    let hi = (levels / 2 - 1) as i32;
    let mut clipped = 0usize;
    let codes = trace
        .samples
        .iter()
        .map(|&v| {
            if v.abs() > cfg.fullscale {
                clipped += 1;
            }
            let c = (v / step).round();
            (c as i32).clamp(lo, hi)
        })
        .collect();
    DigitizedTrace { sample_rate: trace.sample_rate, t0: trace.t0, codes, step, clipped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wf(samples: Vec<f64>) -> NodeWaveform {
        NodeWaveform { sample_rate: 400e3, t0: 0.0, samples }
    }

    fn trace(samples: Vec<f64>) -> AnalogTrace {
        AnalogTrace { sample_rate: 400e3, t0: 0.0, samples }
    }

    #[test]
    fn superposition_is_a_scaled_sum() {
        let a = wf(vec![0.3, 0.0, 0.3]);
        let b = wf(vec![0.3, 0.3, 0.0]);
        let cfg = ChannelConfig {
            attenuation_y: 2.0,
            invert_output: false,
            ..ChannelConfig::default()
        };
        let out = superimpose(&[&a, &b], &cfg).unwrap();
        assert_eq!(out.samples, vec![0.3, 0.15, 0.15]);
    }

    #[test]
    fn inversion_flips_sign() {
        let a = wf(vec![1.0, -2.0]);
        let cfg = ChannelConfig { attenuation_y: 1.0, ..ChannelConfig::default() };
        let out = superimpose(&[&a], &cfg).unwrap();
        assert_eq!(out.samples, vec![-1.0, 2.0]);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let a = wf(vec![0.0; 3]);
        let mut b = wf(vec![0.0; 3]);
        b.t0 = 1.0;
        assert!(superimpose(&[&a, &b], &ChannelConfig::default()).is_err());
        let c = wf(vec![0.0; 4]);
        assert!(superimpose(&[&a, &c], &ChannelConfig::default()).is_err());
        assert!(superimpose(&[], &ChannelConfig::default()).is_err());
    }

    #[test]
    fn parallel_and_sequential_sums_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let waveforms: Vec<NodeWaveform> = (0..130)
            .map(|_| wf((0..512).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let refs: Vec<&NodeWaveform> = waveforms.iter().collect();
        let cfg = ChannelConfig { attenuation_y: 2.7, ..ChannelConfig::default() };
        let par = superimpose(&refs, &cfg).unwrap();
        let seq = superimpose_seq(&refs, &cfg).unwrap();
        assert_eq!(par.samples, seq.samples);
    }

    #[test]
    fn uniform_noise_stays_in_bounds() {
        let mut t = trace(vec![0.0; 20_000]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        add_noise(&mut t, &NoiseModel::Uniform { bound: 0.05 }, &mut rng);
        assert!(t.samples.iter().all(|v| v.abs() <= 0.05));
        let spread = t.samples.iter().cloned().fold(f64::MIN, f64::max)
            - t.samples.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 0.09, "uniform draw should nearly fill its range");
    }

    #[test]
    fn gaussian_noise_matches_moments() {
        let mut t = trace(vec![0.0; 200_000]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        add_noise(&mut t, &NoiseModel::Gaussian { sigma: 0.1 }, &mut rng);
        let mean = t.samples.iter().sum::<f64>() / t.samples.len() as f64;
        let var = t.samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / t.samples.len() as f64;
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 1e-3, "sigma {}", var.sqrt());
    }

    #[test]
    fn no_noise_is_identity() {
        let mut t = trace(vec![0.25; 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        add_noise(&mut t, &NoiseModel::None, &mut rng);
        assert_eq!(t.samples, vec![0.25; 8]);
    }

    #[test]
    fn digitize_error_bound() {
        // 16 bits over +/-5 V: worst-case error is 5 / 65536 = 76.3 uV.
        let cfg = ChannelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = trace((0..10_000).map(|_| rng.random_range(-5.0..5.0)).collect());
        let d = digitize(&t, &cfg);
        assert_eq!(d.clipped, 0);
        let back = d.to_voltages();
        let bound = cfg.fullscale / (1 << cfg.adc_bits) as f64;
        assert!((bound - 76.3e-6).abs() < 0.1e-6);
        for (a, b) in t.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= bound + 1e-15);
        }
    }

    #[test]
    fn digitize_clips_and_counts() {
        let cfg = ChannelConfig { adc_bits: 8, fullscale: 1.0, ..ChannelConfig::default() };
        let t = trace(vec![2.0, -3.0, 0.5, 1.0]);
        let d = digitize(&t, &cfg);
        assert_eq!(d.clipped, 2);
        assert_eq!(d.codes[0], 127);
        assert_eq!(d.codes[1], -128);
        // Exactly fullscale is representable on the negative rail only; +FS
        // rounds onto the top code and does not count as clipping.
        assert_eq!(d.codes[3], 127);
    }

    #[test]
    fn digitize_zero_maps_to_zero() {
        let cfg = ChannelConfig::default();
        let d = digitize(&trace(vec![0.0, 1e-9, -1e-9]), &cfg);
        assert_eq!(d.codes, vec![0, 0, 0]);
    }

    #[test]
    fn default_divider_turns_rail_into_chip_amplitude() {
        // 3.3 V node swing through the default 11-fold divider lands at the
        // reported 300 mV chip amplitude, inverted by the summing stage.
        let a = wf(vec![3.3]);
        let out = superimpose(&[&a], &ChannelConfig::default()).unwrap();
        assert!((out.samples[0] + 0.3).abs() < 1e-12, "got {}", out.samples[0]);
    }

    #[test]
    fn config_validation() {
        let mut c = ChannelConfig::default();
        assert!(c.validate().is_ok());
        c.attenuation_y = 0.5;
        assert!(c.validate().is_err());
        c.attenuation_y = 11.0;
        c.noise = NoiseModel::Uniform { bound: -1.0 };
        assert!(c.validate().is_err());
        c.noise = NoiseModel::None;
        c.adc_bits = 30;
        assert!(c.validate().is_err());
    }
}
