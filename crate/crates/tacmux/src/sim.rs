//! End-to-end simulator: pressures in, digitized wire capture out.
//!
//! Each call appends one frame period to the running capture. Activity is
//! decided per node by the event gate, bursts are rendered straight into
//! the shared accumulation buffer, and the channel model (divider, noise,
//! ADC) is applied on top. Everything is keyed off the config seed, so a
//! run is a pure function of (config, inputs).

use serde::{Deserialize, Serialize};

use crate::channel::{add_noise, apply_divider, digitize, AnalogTrace, DigitizedTrace};
use crate::config::SystemSetup;
use crate::encoder::{
    chips_to_levels, encode_word, event_gate, plan_levels, render_plan_into,
};
use crate::rng::{stream, tag};
use crate::sensor::PressureFrame;
use crate::Result;

/// What each node actually transmitted in one frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_index: u64,
    /// One entry per node; `None` is an idle node.
    pub words: Vec<Option<u32>>,
}

/// A finished simulation: the capture plus the per-frame ground truth.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub digitized: DigitizedTrace,
    pub truths: Vec<FrameTruth>,
}

fn chunk_width(actives: usize) -> usize {
    actives.div_ceil(32).max(4)
}

fn render_chunk(
    setup: &SystemSetup,
    frame_index: u64,
    chunk: &[(usize, u32)],
    len: usize,
) -> Result<Vec<f64>> {
    let mut buf = vec![0.0f64; len];
    for &(node, word) in chunk {
        let chips = encode_word(setup.book.code_for(node), word, setup.encoder.k_bits)?;
        let levels = chips_to_levels(&chips, &setup.encoder);
        let mut rng = stream(setup.seed, &[tag::JITTER, frame_index, node as u64]);
        let plan = plan_levels(&levels, &setup.encoder, &mut rng);
        render_plan_into(&plan, &setup.encoder, setup.sample_rate, &mut buf, true);
    }
    Ok(buf)
}

fn accumulate(groups: Vec<Vec<f64>>, idle_total: f64, out: &mut [f64]) {
    out.fill(idle_total);
    for g in groups {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
}

/// Render one frame's burst (active nodes only) plus the idle-level floor
/// of the remaining nodes into `out`, which must be one period long.
pub fn render_burst_into(
    setup: &SystemSetup,
    frame_index: u64,
    words: &[Option<u32>],
    out: &mut [f64],
) -> Result<()> {
    let actives: Vec<(usize, u32)> = words
        .iter()
        .enumerate()
        .filter_map(|(n, w)| w.map(|w| (n, w)))
        .collect();
    let idle_total =
        (words.len() - actives.len()) as f64 * setup.encoder.inactive_level();
    let width = chunk_width(actives.len());

    #[cfg(feature = "parallel")]
    let groups: Result<Vec<Vec<f64>>> = {
        use rayon::prelude::*;
        actives
            .par_chunks(width)
            .map(|c| render_chunk(setup, frame_index, c, out.len()))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let groups: Result<Vec<Vec<f64>>> = actives
        .chunks(width)
        .map(|c| render_chunk(setup, frame_index, c, out.len()))
        .collect();

    accumulate(groups?, idle_total, out);
    Ok(())
}

/// Sequential reference for [`render_burst_into`]; the same summation tree,
/// bit-identical output.
pub fn render_burst_into_seq(
    setup: &SystemSetup,
    frame_index: u64,
    words: &[Option<u32>],
    out: &mut [f64],
) -> Result<()> {
    let actives: Vec<(usize, u32)> = words
        .iter()
        .enumerate()
        .filter_map(|(n, w)| w.map(|w| (n, w)))
        .collect();
    let idle_total =
        (words.len() - actives.len()) as f64 * setup.encoder.inactive_level();
    let groups: Result<Vec<Vec<f64>>> = actives
        .chunks(chunk_width(actives.len()))
        .map(|c| render_chunk(setup, frame_index, c, out.len()))
        .collect();
    accumulate(groups?, idle_total, out);
    Ok(())
}

/// Frame-by-frame simulation driver.
pub struct Simulator {
    setup: SystemSetup,
    last_sent: Vec<Option<u32>>,
    sensor_v: Vec<f64>,
    frame: u64,
    samples: Vec<f64>,
    truths: Vec<FrameTruth>,
}

impl Simulator {
    pub fn new(setup: SystemSetup) -> Simulator {
        let nodes = setup.node_count();
        let v0 = setup.sensor.v0;
        Simulator {
            setup,
            last_sent: vec![None; nodes],
            sensor_v: vec![v0; nodes],
            frame: 0,
            samples: Vec::new(),
            truths: Vec::new(),
        }
    }

    pub fn setup(&self) -> &SystemSetup {
        &self.setup
    }

    pub fn frames_pushed(&self) -> u64 {
        self.frame
    }

    /// Append one frame with explicit per-node words; `None` keeps a node
    /// idle. Bypasses the sensor front end and the event gate.
    pub fn push_words(&mut self, words: &[Option<u32>]) -> Result<()> {
        assert_eq!(words.len(), self.setup.node_count(), "one entry per node");
        let period = self.setup.period_samples();
        let at = self.samples.len();
        self.samples.resize(at + period, 0.0);
        let out = &mut self.samples[at..];
        render_burst_into(&self.setup, self.frame, words, out)?;
        apply_divider(out, &self.setup.channel);
        let mut seg = AnalogTrace {
            sample_rate: self.setup.sample_rate,
            t0: 0.0,
            samples: std::mem::take(&mut self.samples),
        };
        let mut rng = stream(self.setup.seed, &[tag::NOISE, self.frame]);
        let mut frame_slice = AnalogTrace {
            sample_rate: seg.sample_rate,
            t0: 0.0,
            samples: seg.samples.split_off(at),
        };
        add_noise(&mut frame_slice, &self.setup.channel.noise, &mut rng);
        seg.samples.extend(frame_slice.samples);
        self.samples = seg.samples;
        self.truths.push(FrameTruth { frame_index: self.frame, words: words.to_vec() });
        for (slot, w) in self.last_sent.iter_mut().zip(words) {
            if w.is_some() {
                *slot = *w;
            }
        }
        self.frame += 1;
        Ok(())
    }

    /// Append one frame driven by a pressure map: sensor model, ADC, and
    /// event gate decide who transmits.
    pub fn push_pressures(&mut self, pressures: &PressureFrame) -> Result<()> {
        assert_eq!(
            pressures.node_count(),
            self.setup.node_count(),
            "pressure grid must cover every node"
        );
        let dt = self.setup.encoder.frame_period;
        let mut words = Vec::with_capacity(self.setup.node_count());
        for (node, &p) in pressures.values.iter().enumerate() {
            let target = self.setup.sensor.pressure_to_voltage(p)?;
            self.sensor_v[node] =
                self.setup.sensor.step_dynamics(self.sensor_v[node], target, dt);
            let word = self.setup.sensor.adc_quantize(self.sensor_v[node]);
            let active =
                event_gate(self.last_sent[node], word, self.setup.delta_threshold_lsb);
            words.push(if active { Some(word) } else { None });
        }
        self.push_words(&words)
    }

    /// Digitize the accumulated capture and hand back the ground truth.
    pub fn finish(self) -> SimOutput {
        let analog = AnalogTrace {
            sample_rate: self.setup.sample_rate,
            t0: 0.0,
            samples: self.samples,
        };
        SimOutput {
            digitized: digitize(&analog, &self.setup.channel),
            truths: self.truths,
        }
    }
}

/// One-call convenience: simulate explicit word frames and digitize.
pub fn simulate_word_frames(
    setup: &SystemSetup,
    frames: &[Vec<Option<u32>>],
) -> Result<SimOutput> {
    let mut sim = Simulator::new(setup.clone());
    for words in frames {
        sim.push_words(words)?;
    }
    Ok(sim.finish())
}

/// One-call convenience: simulate a pressure sequence and digitize.
pub fn simulate_pressure_frames(
    setup: &SystemSetup,
    frames: &[PressureFrame],
) -> Result<SimOutput> {
    let mut sim = Simulator::new(setup.clone());
    for p in frames {
        sim.push_pressures(p)?;
    }
    Ok(sim.finish())
}
