//! System configuration: one JSON document describing the whole chain.
//!
//! The document holds the user-facing knobs in bench units (µs, ms, mV);
//! [`SystemConfig::resolve`] cross-checks them and produces the SI-unit
//! configs the library modules take. Optional receiver knobs default to
//! values derived from the transmitter side, so a minimal config stays
//! consistent by construction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, NoiseModel};
use crate::codebook::CodeBook;
use crate::decoder::DecoderConfig;
use crate::encoder::{EncoderConfig, LevelMapping};
use crate::sensor::SensorModel;
use crate::{Error, Result};

/// Physical arrangement of the nodes, used for heatmap output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookSection {
    /// Leave the all-ones row unassigned. Required for unipolar signaling,
    /// where that row never returns to the baseline.
    pub skip_dc_row: bool,
}

impl Default for CodebookSection {
    fn default() -> Self {
        CodebookSection { skip_dc_row: true }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    #[serde(rename = "T_us")]
    pub t_us: f64,
    pub k_bits: u8,
    #[serde(rename = "amplitude_mV")]
    pub amplitude_mv: f64,
    pub mapping: LevelMapping,
    pub frame_period_ms: f64,
    pub jitter_frac: f64,
    pub transition_us: f64,
    /// A node retransmits when its word moved at least this many codes.
    pub delta_threshold_lsb: u32,
    /// Alternative way to state the retransmit threshold, in sensor volts;
    /// wins over `delta_threshold_lsb` when present.
    pub activation_delta_v: Option<f64>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            t_us: 25.0,
            k_bits: 10,
            amplitude_mv: 3300.0,
            mapping: LevelMapping::Unipolar,
            frame_period_ms: 12.8,
            jitter_frac: 0.1,
            transition_us: 0.1,
            delta_threshold_lsb: 4,
            activation_delta_v: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub attenuation_y: f64,
    pub invert_output: bool,
    pub noise: NoiseModel,
    pub adc_bits: u8,
    pub fullscale_v: f64,
    /// Capture rate; omitted means 20 samples per chip.
    pub sample_rate_hz: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            attenuation_y: 11.0,
            invert_output: true,
            noise: NoiseModel::None,
            adc_bits: 16,
            fullscale_v: 5.0,
            sample_rate_hz: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSection {
    /// Activity threshold for burst detection; omitted means the expected
    /// per-chip correlation amplitude.
    pub quiet_threshold_v: Option<f64>,
    /// Burst-merging distance; omitted means half the inter-frame gap.
    pub min_gap_ms: Option<f64>,
    pub chip_window_frac: f64,
    pub activity_margin_frac: f64,
}

impl Default for DecoderSection {
    fn default() -> Self {
        DecoderSection {
            quiet_threshold_v: None,
            min_gap_ms: None,
            chip_window_frac: 0.5,
            activity_margin_frac: 0.5,
        }
    }
}

/// The complete system description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub node_count: usize,
    pub layout: Layout,
    pub codebook: CodebookSection,
    pub encoder: EncoderSection,
    pub channel: ChannelSection,
    pub decoder: DecoderSection,
    pub sensor: SensorModel,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            node_count: 16,
            layout: Layout { rows: 4, cols: 4 },
            codebook: CodebookSection::default(),
            encoder: EncoderSection::default(),
            channel: ChannelSection::default(),
            decoder: DecoderSection::default(),
            sensor: SensorModel::default(),
            seed: 0x7461_636d_7578,
        }
    }
}

/// All module configs resolved from one [`SystemConfig`], mutually
/// consistent and validated.
#[derive(Clone, Debug)]
pub struct SystemSetup {
    pub book: CodeBook,
    pub encoder: EncoderConfig,
    pub channel: ChannelConfig,
    pub decoder: DecoderConfig,
    pub sensor: SensorModel,
    pub layout: Layout,
    pub sample_rate: f64,
    pub seed: u64,
    pub delta_threshold_lsb: u32,
}

impl SystemSetup {
    /// Samples in one frame period.
    pub fn period_samples(&self) -> usize {
        (self.encoder.frame_period * self.sample_rate).round() as usize
    }

    pub fn node_count(&self) -> usize {
        self.book.node_count()
    }
}

impl SystemConfig {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<SystemConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<SystemConfig> {
        SystemConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        Ok(std::fs::write(path, text)?)
    }

    /// Cross-check the document and build every module's configuration.
    pub fn resolve(&self) -> Result<SystemSetup> {
        if self.node_count == 0 {
            return Err(Error::Config("node_count must be at least 1".into()));
        }
        if self.layout.rows * self.layout.cols != self.node_count {
            return Err(Error::Config(format!(
                "layout {}x{} does not cover {} nodes",
                self.layout.rows, self.layout.cols, self.node_count
            )));
        }
        if self.encoder.mapping == LevelMapping::Unipolar && !self.codebook.skip_dc_row {
            return Err(Error::Config(
                "unipolar signaling requires codebook.skip_dc_row: the all-ones \
                 row never returns to the baseline"
                    .into(),
            ));
        }

        let book = CodeBook::assign(self.node_count, self.codebook.skip_dc_row)?;
        let n = book.order();

        let t = self.encoder.t_us * 1e-6;
        let amplitude = self.encoder.amplitude_mv * 1e-3;
        if !(amplitude > 0.0) {
            return Err(Error::Config("encoder.amplitude_mV must be positive".into()));
        }
        let (level_high, level_low) = match self.encoder.mapping {
            LevelMapping::Unipolar => (amplitude, 0.0),
            LevelMapping::Bipolar => (amplitude, -amplitude),
        };
        let frame_period = self.encoder.frame_period_ms * 1e-3;
        let encoder = EncoderConfig {
            chip_duration: t,
            k_bits: self.encoder.k_bits,
            level_high,
            level_low,
            mapping: self.encoder.mapping,
            frame_period,
            jitter_frac: self.encoder.jitter_frac,
            transition_time: self.encoder.transition_us * 1e-6,
        };
        encoder.validate(n)?;

        let burst = self.encoder.k_bits as f64 * n as f64 * t;
        if frame_period <= burst * 1.1 {
            return Err(Error::Config(format!(
                "frame_period_ms {} leaves less than 10% slack over the {:.3} ms burst",
                self.encoder.frame_period_ms,
                burst * 1e3
            )));
        }

        let sample_rate = match self.channel.sample_rate_hz {
            Some(fs) if fs > 0.0 => fs,
            Some(_) => return Err(Error::Config("channel.sample_rate_hz must be positive".into())),
            None => {
                let fs = 20.0 / t;
                if (fs - fs.round()).abs() < 1e-6 * fs {
                    fs.round()
                } else {
                    fs
                }
            }
        };
        let spc = sample_rate * t;
        if spc < 10.0 {
            return Err(Error::Resolution(format!(
                "{spc:.2} samples per chip at {sample_rate} Hz; need at least 10"
            )));
        }
        let window = (spc * self.decoder.chip_window_frac).round();
        if window < 3.0 {
            return Err(Error::Resolution(format!(
                "chip window of {window} samples; raise sample_rate_hz or chip_window_frac"
            )));
        }
        let period_samples = frame_period * sample_rate;
        if (period_samples - period_samples.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "frame period is {period_samples} samples; it must be an integer \
                 count at the capture rate"
            )));
        }

        let channel = ChannelConfig {
            attenuation_y: self.channel.attenuation_y,
            invert_output: self.channel.invert_output,
            noise: self.channel.noise,
            adc_bits: self.channel.adc_bits,
            fullscale: self.channel.fullscale_v,
        };
        channel.validate()?;

        let a_expected = (level_high - level_low) / self.channel.attenuation_y / 2.0;
        let decoder = DecoderConfig {
            chip_duration: t,
            k_bits: self.encoder.k_bits,
            frame_period,
            a_expected,
            quiet_threshold: self.decoder.quiet_threshold_v.unwrap_or(a_expected),
            min_gap: self
                .decoder
                .min_gap_ms
                .map(|ms| ms * 1e-3)
                .unwrap_or((frame_period - burst) / 2.0),
            chip_window_frac: self.decoder.chip_window_frac,
            activity_margin_frac: self.decoder.activity_margin_frac,
            invert_input: self.channel.invert_output,
        };
        decoder.validate(n)?;

        self.sensor.validate()?;
        if self.sensor.adc_bits != self.encoder.k_bits {
            return Err(Error::Config(format!(
                "sensor.adc_bits {} must equal encoder.k_bits {}: words are sensor codes",
                self.sensor.adc_bits, self.encoder.k_bits
            )));
        }

        let delta_threshold_lsb = match self.encoder.activation_delta_v {
            Some(v) if v >= 0.0 => {
                (v / self.sensor.vref * f64::from(1u32 << self.sensor.adc_bits)).round() as u32
            }
            Some(_) => {
                return Err(Error::Config("encoder.activation_delta_v must be non-negative".into()))
            }
            None => self.encoder.delta_threshold_lsb,
        };

        Ok(SystemSetup {
            book,
            encoder,
            channel,
            decoder,
            sensor: self.sensor.clone(),
            layout: self.layout,
            sample_rate,
            seed: self.seed,
            delta_threshold_lsb,
        })
    }
}
