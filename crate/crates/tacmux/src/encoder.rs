//! Per-node digital encoder: word to chip stream to line waveform.
//!
//! An active node sends its k-bit word MSB first, one code length per bit:
//! bit 1 transmits the node's code, bit 0 its negation. Chips become line
//! levels, and levels become a sampled waveform with per-edge timing jitter
//! and finite transition ramps, mimicking firmware-driven GPIO output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::CodeVector;
use crate::{Error, Result};

/// How chips map onto line levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMapping {
    /// +1 drives `level_high`, -1 drives `level_low`. Idle nodes hold
    /// `level_low`.
    Unipolar,
    /// +1 drives `+level_high`, -1 drives `-level_high`. Idle nodes hold 0 V.
    Bipolar,
}

/// Timing and electrical parameters of one node's transmitter.
#[derive(Clone, Debug)]
pub struct EncoderConfig {
    /// Chip duration T in seconds.
    pub chip_duration: f64,
    /// Word width in bits.
    pub k_bits: u8,
    pub level_high: f64,
    pub level_low: f64,
    pub mapping: LevelMapping,
    /// Frame repetition period in seconds.
    pub frame_period: f64,
    /// Per-edge timing error as a fraction of T. Each level switch lands
    /// late by up to this much; the frame-start edge is driven by the frame
    /// timer and does not slip.
    pub jitter_frac: f64,
    /// Linear ramp duration at each level change, seconds.
    pub transition_time: f64,
}

impl EncoderConfig {
    pub fn validate(&self, code_len: usize) -> Result<()> {
        if self.chip_duration <= 0.0 {
            return Err(Error::Config("encoder: chip duration must be positive".into()));
        }
        if self.k_bits == 0 || self.k_bits > 24 {
            return Err(Error::Config("encoder: k_bits must be in 1..=24".into()));
        }
        if !(0.0..=0.45).contains(&self.jitter_frac) {
            return Err(Error::Config("encoder: jitter_frac must be in [0, 0.45]".into()));
        }
        if self.transition_time < 0.0 || self.transition_time > self.chip_duration / 4.0 {
            return Err(Error::Config(
                "encoder: transition_time must be in [0, T/4]".into(),
            ));
        }
        if self.mapping == LevelMapping::Unipolar && self.level_high <= self.level_low {
            return Err(Error::Config("encoder: level_high must exceed level_low".into()));
        }
        if self.mapping == LevelMapping::Bipolar && self.level_high <= 0.0 {
            return Err(Error::Config("encoder: bipolar level_high must be positive".into()));
        }
        frame_schedule(
            self.k_bits,
            code_len,
            self.chip_duration,
            self.frame_period,
            self.jitter_frac,
        )?;
        Ok(())
    }

    /// Line level for an idle (event-gated off) node.
    pub fn inactive_level(&self) -> f64 {
        match self.mapping {
            LevelMapping::Unipolar => self.level_low,
            LevelMapping::Bipolar => 0.0,
        }
    }
}

/// Nominal frame timing derived from the protocol parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameSchedule {
    /// Active burst duration: k * n * T.
    pub frame_duration: f64,
    /// Quiet time between bursts.
    pub gap: f64,
}

/// Compute the burst/gap split and reject periods that cannot absorb
/// worst-case jitter expansion.
pub fn frame_schedule(
    k_bits: u8,
    code_len: usize,
    chip_duration: f64,
    frame_period: f64,
    jitter_frac: f64,
) -> Result<FrameSchedule> {
    let frame_duration = k_bits as f64 * code_len as f64 * chip_duration;
    let worst = frame_duration * (1.0 + jitter_frac);
    if frame_period <= worst {
        return Err(Error::Config(format!(
            "frame period {frame_period} s does not cover a worst-case burst of {worst} s"
        )));
    }
    Ok(FrameSchedule { frame_duration, gap: frame_period - frame_duration })
}

/// Spread a word over a code: bit 1 sends +C, bit 0 sends -C, MSB first.
pub fn encode_word(code: &CodeVector, word: u32, k_bits: u8) -> Result<Vec<i8>> {
    if k_bits == 0 || k_bits > 24 {
        return Err(Error::Config("encode: k_bits must be in 1..=24".into()));
    }
    if u64::from(word) >= 1u64 << k_bits {
        return Err(Error::Config(format!(
            "encode: word {word} does not fit in {k_bits} bits"
        )));
    }
    let n = code.len();
    let mut chips = Vec::with_capacity(k_bits as usize * n);
    for b in (0..k_bits).rev() {
        let one = word >> b & 1 == 1;
        for i in 0..n {
            let c = code.chip(i);
            chips.push(if one { c } else { -c });
        }
    }
    Ok(chips)
}

/// Event gate: a node transmits only when its reading moved by at least
/// `delta_lsb` codes since the last transmitted frame, or when it has never
/// transmitted.
pub fn event_gate(prev: Option<u32>, new: u32, delta_lsb: u32) -> bool {
    match prev {
        None => true,
        Some(p) => new.abs_diff(p) >= delta_lsb,
    }
}

/// Map chips onto line levels.
pub fn chips_to_levels(chips: &[i8], cfg: &EncoderConfig) -> Vec<f64> {
    let (hi, lo) = match cfg.mapping {
        LevelMapping::Unipolar => (cfg.level_high, cfg.level_low),
        LevelMapping::Bipolar => (cfg.level_high, -cfg.level_high),
    };
    chips.iter().map(|&c| if c > 0 { hi } else { lo }).collect()
}

/// One held line level with its realized start time (seconds from frame
/// start).
#[derive(Clone, Copy, Debug)]
pub struct LevelRun {
    pub t_start: f64,
    pub level: f64,
}

/// Realized timing of one frame burst: merged level runs plus the realized
/// end of the final level.
#[derive(Clone, Debug)]
pub struct LevelPlan {
    pub runs: Vec<LevelRun>,
    /// Realized end of the burst.
    pub t_end: f64,
    /// Nominal end (chip count * T).
    pub nominal_end: f64,
}

impl LevelPlan {
    /// Realized burst duration. The first edge is pinned to the frame timer,
    /// so this is `t_end` minus zero.
    pub fn realized_duration(&self) -> f64 {
        self.t_end
    }
}

/// Lay out level runs on the chip grid. Consecutive equal levels merge into
/// one run; each level switch; and the final release, lands late by an
/// independent uniform delay in [0, jitter_frac * T].
pub fn plan_levels<R: Rng>(levels: &[f64], cfg: &EncoderConfig, rng: &mut R) -> LevelPlan {
    let t = cfg.chip_duration;
    let mut draw = |nominal: f64| -> f64 {
        if cfg.jitter_frac > 0.0 {
            nominal + rng.random_range(0.0..=cfg.jitter_frac * t)
        } else {
            nominal
        }
    };
    let mut runs: Vec<LevelRun> = Vec::new();
    for (c, &level) in levels.iter().enumerate() {
        match runs.last() {
            Some(last) if last.level == level => continue,
            Some(_) => runs.push(LevelRun { t_start: draw(c as f64 * t), level }),
            None => runs.push(LevelRun { t_start: 0.0, level }),
        }
    }
    let nominal_end = levels.len() as f64 * t;
    let t_end = if runs.is_empty() { 0.0 } else { draw(nominal_end) };
    LevelPlan { runs, t_end, nominal_end }
}

/// A sampled single-node line waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeWaveform {
    pub sample_rate: f64,
    /// Time of sample 0.
    pub t0: f64,
    pub samples: Vec<f64>,
}

impl NodeWaveform {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Render one frame period of a node's output. The burst occupies the head
/// of the period; afterwards the line returns to the idle level.
///
/// Requires at least 10 samples per chip so that chip structure survives
/// sampling.
pub fn render_waveform<R: Rng>(
    levels: &[f64],
    cfg: &EncoderConfig,
    sample_rate: f64,
    rng: &mut R,
) -> Result<NodeWaveform> {
    if sample_rate * cfg.chip_duration < 10.0 {
        return Err(Error::Resolution(format!(
            "{:.2} samples per chip; need at least 10",
            sample_rate * cfg.chip_duration
        )));
    }
    let n_samples = period_sample_count(cfg.frame_period, sample_rate);
    let mut samples = vec![0.0; n_samples];
    let plan = plan_levels(levels, cfg, rng);
    render_plan_into(&plan, cfg, sample_rate, &mut samples, false);
    Ok(NodeWaveform { sample_rate, t0: 0.0, samples })
}

/// Samples in one frame period. The period is required (at validation time)
/// to be an integer number of samples at the configured rate.
pub fn period_sample_count(frame_period: f64, sample_rate: f64) -> usize {
    (frame_period * sample_rate).round() as usize
}

/// Sample a level plan into `out` (frame-local indices). With `add` the
/// values accumulate, which is how superposition of many nodes is built
/// without materializing every waveform.
pub fn render_plan_into(
    plan: &LevelPlan,
    cfg: &EncoderConfig,
    sample_rate: f64,
    out: &mut [f64],
    add: bool,
) {
    let idle = cfg.inactive_level();
    // Edge list: (time, from, to). The burst starts from idle and releases
    // back to idle at t_end.
    let mut edges: Vec<(f64, f64, f64)> = Vec::with_capacity(plan.runs.len() + 1);
    let mut prev = idle;
    for run in &plan.runs {
        edges.push((run.t_start, prev, run.level));
        prev = run.level;
    }
    edges.push((plan.t_end, prev, idle));

    let fs = sample_rate;
    let len = out.len();
    let clamp_idx = |t: f64| -> usize {
        let i = (t * fs - 1e-6).ceil();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(len)
        }
    };

    let mut fill = |a: usize, b: usize, f: &mut dyn FnMut(usize) -> f64| {
        for i in a..b {
            let v = f(i);
            if add {
                out[i] += v;
            } else {
                out[i] = v;
            }
        }
    };

    // Idle head before the first edge (frame-start edge is at t = 0, so this
    // is normally empty).
    let first = clamp_idx(edges[0].0);
    fill(0, first, &mut |_| idle);

    for (e, &(t, from, to)) in edges.iter().enumerate() {
        let next_t = edges.get(e + 1).map(|n| n.0).unwrap_or(f64::INFINITY);
        let ramp = cfg.transition_time.min(next_t - t).max(0.0);
        let ramp_end = t + ramp;
        let i0 = clamp_idx(t);
        let i1 = clamp_idx(ramp_end);
        let i2 = if next_t.is_finite() { clamp_idx(next_t) } else { len };
        if ramp > 0.0 {
            fill(i0, i1, &mut |i| {
                let x = ((i as f64 / fs - t) / ramp).clamp(0.0, 1.0);
                from + (to - from) * x
            });
        }
        fill(i1.max(i0), i2, &mut |_| to);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::sylvester_hadamard;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(t: f64) -> EncoderConfig {
        EncoderConfig {
            chip_duration: t,
            k_bits: 10,
            level_high: 3.3,
            level_low: 0.0,
            mapping: LevelMapping::Unipolar,
            frame_period: 12.8e-3,
            jitter_frac: 0.0,
            transition_time: 0.0,
        }
    }

    #[test]
    fn encode_examples() {
        let c = CodeVector::from_chips(&[1, -1]).unwrap();
        assert_eq!(encode_word(&c, 0b10, 2).unwrap(), vec![1, -1, -1, 1]);
        assert_eq!(encode_word(&c, 0b01, 2).unwrap(), vec![-1, 1, 1, -1]);
        assert_eq!(encode_word(&c, 0b11, 2).unwrap(), vec![1, -1, 1, -1]);
        assert_eq!(encode_word(&c, 0, 1).unwrap(), vec![-1, 1]);
    }

    #[test]
    fn encode_is_msb_first() {
        let rows = sylvester_hadamard(4).unwrap();
        let chips = encode_word(&rows[1], 0b100, 3).unwrap();
        // First bit slot carries +C, the rest -C.
        assert_eq!(&chips[0..4], rows[1].chips().as_slice());
        let neg: Vec<i8> = rows[1].chips().iter().map(|c| -c).collect();
        assert_eq!(&chips[4..8], neg.as_slice());
        assert_eq!(&chips[8..12], neg.as_slice());
    }

    #[test]
    fn encode_rejects_wide_words() {
        let c = CodeVector::from_chips(&[1, -1]).unwrap();
        assert!(encode_word(&c, 4, 2).is_err());
        assert!(encode_word(&c, 1, 0).is_err());
    }

    #[test]
    fn decode_sign_recovers_bits() {
        // Correlating each bit slot against the code recovers the word for
        // every possible 4-bit word on H_8 row 3.
        let rows = sylvester_hadamard(8).unwrap();
        let code = &rows[3];
        for word in 0u32..16 {
            let chips = encode_word(code, word, 4).unwrap();
            let mut got = 0u32;
            for b in 0..4 {
                let slot = &chips[b * 8..(b + 1) * 8];
                let corr: i64 = slot
                    .iter()
                    .zip(code.chips())
                    .map(|(&a, c)| a as i64 * c as i64)
                    .sum();
                assert_eq!(corr.abs(), 8);
                got = got << 1 | u32::from(corr > 0);
            }
            assert_eq!(got, word);
        }
    }

    #[test]
    fn event_gate_thresholds() {
        assert!(event_gate(None, 512, 4));
        assert!(!event_gate(Some(100), 103, 4));
        assert!(event_gate(Some(100), 104, 4));
        assert!(event_gate(Some(104), 100, 4));
        // Zero threshold means always transmit.
        assert!(event_gate(Some(100), 100, 0));
    }

    #[test]
    fn level_mappings() {
        let mut c = cfg(50e-6);
        c.level_high = 0.3;
        assert_eq!(chips_to_levels(&[1, -1], &c), vec![0.3, 0.0]);
        assert_eq!(c.inactive_level(), 0.0);
        c.mapping = LevelMapping::Bipolar;
        assert_eq!(chips_to_levels(&[1, -1], &c), vec![0.3, -0.3]);
        assert_eq!(c.inactive_level(), 0.0);
    }

    #[test]
    fn schedule_matches_protocol_arithmetic() {
        let s = frame_schedule(10, 16, 50e-6, 12.8e-3, 0.1).unwrap();
        assert!((s.frame_duration - 8e-3).abs() < 1e-12);
        assert!((s.gap - 4.8e-3).abs() < 1e-12);
        // Scaling the order down to keep the frame at 8 ms: T = 8 ms / (k n).
        let t: f64 = 8e-3 / (10.0 * 1024.0);
        assert!((t - 0.78125e-6).abs() < 1e-15);
        let s = frame_schedule(10, 1024, t, 12.8e-3, 0.1).unwrap();
        assert!((s.frame_duration - 8e-3).abs() < 1e-12);
        assert!(frame_schedule(10, 16, 50e-6, 8.2e-3, 0.1).is_err());
    }

    #[test]
    fn merged_chips_form_one_run() {
        let c = cfg(50e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Two equal chips then two different ones: three runs, not four.
        let plan = plan_levels(&[3.3, 3.3, 0.0, 3.3], &c, &mut rng);
        assert_eq!(plan.runs.len(), 3);
        assert_eq!(plan.runs[0].t_start, 0.0);
        assert!((plan.runs[1].t_start - 100e-6).abs() < 1e-12);
        assert!((plan.t_end - 200e-6).abs() < 1e-12);
    }

    #[test]
    fn jittered_edges_stay_in_band() {
        let mut c = cfg(50e-6);
        c.jitter_frac = 0.1;
        let levels: Vec<f64> = (0..160).map(|i| if i % 3 == 0 { 3.3 } else { 0.0 }).collect();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let plan = plan_levels(&levels, &c, &mut rng);
            assert_eq!(plan.runs[0].t_start, 0.0);
            for run in &plan.runs[1..] {
                let nominal = (run.t_start / 50e-6).floor() * 50e-6;
                let slip = run.t_start - nominal;
                assert!((0.0..=5e-6 + 1e-12).contains(&slip), "slip {slip}");
            }
            let d = plan.realized_duration();
            assert!(d >= plan.nominal_end && d <= plan.nominal_end + 5e-6);
        }
    }

    #[test]
    fn render_holds_levels_between_edges() {
        let mut c = cfg(50e-6);
        c.level_high = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let wf = render_waveform(&[0.3, 0.0, 0.0, 0.3], &c, 400e3, &mut rng).unwrap();
        assert_eq!(wf.samples.len(), 5120);
        // 20 samples per chip; chips 1 and 2 merge into one low level.
        assert!(wf.samples[0..20].iter().all(|&v| v == 0.3));
        assert!(wf.samples[20..60].iter().all(|&v| v == 0.0));
        assert!(wf.samples[60..80].iter().all(|&v| v == 0.3));
        // After the burst the line idles low for the rest of the period.
        assert!(wf.samples[80..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn render_rejects_coarse_sampling() {
        let c = cfg(50e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            render_waveform(&[3.3], &c, 100e3, &mut rng),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn ramps_interpolate_linearly() {
        let mut c = cfg(50e-6);
        c.transition_time = 10e-6;
        c.level_high = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wf = render_waveform(&[1.0, 0.0], &c, 1e6, &mut rng).unwrap();
        // Samples at 1 us spacing; the 10 us ramp down starts at t = 50 us.
        assert!((wf.samples[55] - 0.5).abs() < 1e-9);
        assert_eq!(wf.samples[49], 1.0);
        assert_eq!(wf.samples[60], 0.0);
        // Rising ramp from idle at frame start.
        assert!((wf.samples[5] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn central_half_window_is_clean_under_jitter() {
        // With per-edge slip bounded by 10% of T the middle half of every
        // chip keeps the commanded level, which is what the decoder samples.
        let mut c = cfg(50e-6);
        c.jitter_frac = 0.1;
        c.transition_time = 0.2e-6;
        c.level_high = 0.3;
        let fs = 400e3;
        let rows = sylvester_hadamard(16).unwrap();
        for seed in 0..20 {
            let word = (seed as u32).wrapping_mul(737) & 0x3ff;
            let chips = encode_word(&rows[(seed as usize % 15) + 1], word, 10).unwrap();
            let levels = chips_to_levels(&chips, &c);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let wf = render_waveform(&levels, &c, fs, &mut rng).unwrap();
            for (ci, &want) in levels.iter().enumerate() {
                let base = ci as f64 * 20.0;
                for s in 5..15 {
                    let idx = base as usize + s;
                    assert_eq!(wf.samples[idx], want, "seed {seed} chip {ci} sample {s}");
                }
            }
        }
    }

    #[test]
    fn validation_bounds() {
        let mut c = cfg(50e-6);
        assert!(c.validate(16).is_ok());
        c.jitter_frac = 0.6;
        assert!(c.validate(16).is_err());
        c.jitter_frac = 0.1;
        c.transition_time = 20e-6;
        assert!(c.validate(16).is_err());
    }
}
