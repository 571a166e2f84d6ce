//! Experiment harness: random stimulus, round-trip scoring against ground
//! truth, and the scaling / noise sweeps behind the report commands.
//!
//! Every routine is deterministic for a given seed. Trial and sweep-cell
//! seeds are derived from the master seed with fixed tags, so cells are
//! independent jobs and report rows come out identical no matter how the
//! work is scheduled.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::NoiseModel;
use crate::config::{Layout, SystemConfig, SystemSetup};
use crate::decoder::{decide, decode_trace, DecodedFrame, NodeOutcome};
use crate::rng::{self, tag};
use crate::sim::{simulate_word_frames, FrameTruth};
use crate::{Error, Result};

/// Outcome tallies for one or more simulate-decode-compare runs.
///
/// Bit counts cover truth-active nodes only. A transmitted bit ends up in
/// exactly one bucket: decided correctly, decided wrongly (`bit_errors`),
/// or never decided (the gap between `transmitted_bits` and
/// `decided_bits`). The error rate charges both failure buckets, so a slot
/// that noise pushes below the activity threshold counts against the link
/// just like a sign flip would.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub frames: usize,
    pub exact_frames: usize,
    /// Decoded bursts with no matching truth frame.
    pub spurious_frames: usize,
    /// (frame, node) slots where the truth holds a word.
    pub active_slots: usize,
    pub inactive_slots: usize,
    pub exact_words: usize,
    pub word_errors: usize,
    pub faults: usize,
    pub drops: usize,
    pub ghosts: usize,
    pub transmitted_bits: u64,
    pub decided_bits: u64,
    pub bit_errors: u64,
}

impl RunStats {
    pub fn merge(&mut self, o: &RunStats) {
        self.frames += o.frames;
        self.exact_frames += o.exact_frames;
        self.spurious_frames += o.spurious_frames;
        self.active_slots += o.active_slots;
        self.inactive_slots += o.inactive_slots;
        self.exact_words += o.exact_words;
        self.word_errors += o.word_errors;
        self.faults += o.faults;
        self.drops += o.drops;
        self.ghosts += o.ghosts;
        self.transmitted_bits += o.transmitted_bits;
        self.decided_bits += o.decided_bits;
        self.bit_errors += o.bit_errors;
    }

    /// True when every frame matched its truth exactly and nothing spurious
    /// appeared.
    pub fn is_exact(&self) -> bool {
        self.exact_frames == self.frames && self.spurious_frames == 0
    }

    pub fn frame_ok_rate(&self) -> f64 {
        if self.frames == 0 {
            1.0
        } else {
            self.exact_frames as f64 / self.frames as f64
        }
    }

    /// Wrong or missing decisions per transmitted bit.
    pub fn bit_error_rate(&self) -> f64 {
        if self.transmitted_bits == 0 {
            return 0.0;
        }
        let missing = self.transmitted_bits - self.decided_bits;
        (self.bit_errors + missing) as f64 / self.transmitted_bits as f64
    }

    /// Active nodes that failed to come back as their exact word.
    pub fn node_error_rate(&self) -> f64 {
        if self.active_slots == 0 {
            return 0.0;
        }
        (self.word_errors + self.faults + self.drops) as f64 / self.active_slots as f64
    }

    /// Idle nodes that decoded as active.
    pub fn ghost_rate(&self) -> f64 {
        if self.inactive_slots == 0 {
            return 0.0;
        }
        (self.ghosts as f64 / self.inactive_slots as f64).min(1.0)
    }
}

/// Draw one frame of node words: an active count in `0..=max_active`,
/// that many distinct nodes, and a word for each.
pub fn random_words(
    node_count: usize,
    k_bits: u8,
    max_active: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Option<u32>> {
    let cap = max_active.min(node_count);
    let count = rng.random_range(0..=cap);
    let mut picks: Vec<usize> = (0..node_count).collect();
    for i in 0..count {
        let j = rng.random_range(i..node_count);
        picks.swap(i, j);
    }
    let top = 1u64 << k_bits;
    let mut words = vec![None; node_count];
    for &node in &picks[..count] {
        words[node] = Some(rng.random_range(0..top) as u32);
    }
    words
}

/// Frames of random words, reproducible from the seed alone.
pub fn random_stimulus(
    node_count: usize,
    k_bits: u8,
    max_active: usize,
    frames: usize,
    seed: u64,
) -> Vec<Vec<Option<u32>>> {
    let mut rng = rng::stream(seed, &[tag::WORDS]);
    (0..frames).map(|_| random_words(node_count, k_bits, max_active, &mut rng)).collect()
}

/// Largest simultaneous-active count that keeps the superposed wire inside
/// the capture range, never below 1.
pub fn default_max_active(setup: &SystemSetup) -> usize {
    let peak = setup.encoder.level_high.abs().max(setup.encoder.level_low.abs())
        / setup.channel.attenuation_y;
    let cap = if peak > 0.0 {
        (setup.channel.fullscale / peak) as usize
    } else {
        usize::MAX
    };
    cap.min(setup.node_count()).max(1)
}

/// Simulate the given frames under `sim_seed` and decode the result.
pub fn run_frames(
    setup: &SystemSetup,
    stimulus: &[Vec<Option<u32>>],
    sim_seed: u64,
) -> Result<(Vec<FrameTruth>, Vec<DecodedFrame>)> {
    let mut s = setup.clone();
    s.seed = sim_seed;
    let out = simulate_word_frames(&s, stimulus)?;
    let decoded = decode_trace(&out.digitized, &s.book, &s.decoder)?;
    Ok((out.truths, decoded))
}

/// One random batch: stimulus, simulation, decode, and comparison, all
/// keyed off `trial_seed`.
pub fn run_trial(
    setup: &SystemSetup,
    frames: usize,
    max_active: usize,
    trial_seed: u64,
) -> Result<RunStats> {
    let stimulus = random_stimulus(
        setup.node_count(),
        setup.encoder.k_bits,
        max_active,
        frames,
        trial_seed,
    );
    let (truths, decoded) = run_frames(setup, &stimulus, trial_seed)?;
    Ok(compare_run(&truths, &decoded, setup))
}

/// Round-trip verification: `trials` independent batches compared against
/// their ground truth.
pub fn roundtrip(
    setup: &SystemSetup,
    trials: usize,
    frames_per_trial: usize,
    seed: u64,
) -> Result<RunStats> {
    let cap = default_max_active(setup);
    let mut stats = RunStats::default();
    for t in 0..trials {
        let trial_seed = rng::derive_seed(seed, &[tag::TRIAL, t as u64]);
        stats.merge(&run_trial(setup, frames_per_trial, cap, trial_seed)?);
    }
    Ok(stats)
}

/// Score decoded frames against the simulator's ground truth.
///
/// Frames are matched by frame index. A truth frame with no decoded burst
/// is fine when all its nodes were idle and a full set of drops otherwise;
/// a decoded burst with no truth frame is spurious and its active nodes
/// count as ghosts.
pub fn compare_run(
    truths: &[FrameTruth],
    decoded: &[DecodedFrame],
    setup: &SystemSetup,
) -> RunStats {
    let k = setup.encoder.k_bits as u32;
    let threshold = setup.decoder.activity_margin_frac
        * setup.book.order() as f64
        * setup.decoder.a_expected;
    let mut stats = RunStats::default();
    stats.frames = truths.len();

    let by_index: HashMap<i64, &DecodedFrame> =
        decoded.iter().map(|f| (f.frame_index, f)).collect();
    let mut matched: HashSet<i64> = HashSet::new();
    for truth in truths {
        let idx = truth.frame_index as i64;
        if let Some(frame) = by_index.get(&idx) {
            matched.insert(idx);
            score_frame(truth, frame, k, threshold, &mut stats);
        } else {
            let actives = truth.words.iter().flatten().count();
            stats.active_slots += actives;
            stats.inactive_slots += truth.words.len() - actives;
            stats.transmitted_bits += actives as u64 * k as u64;
            stats.drops += actives;
            if actives == 0 {
                stats.exact_frames += 1;
            }
        }
    }
    for frame in decoded {
        if !matched.contains(&frame.frame_index) {
            stats.spurious_frames += 1;
            stats.ghosts += frame
                .nodes
                .iter()
                .filter(|d| d.outcome != NodeOutcome::Inactive)
                .count();
        }
    }
    stats
}

fn score_frame(
    truth: &FrameTruth,
    frame: &DecodedFrame,
    k: u32,
    threshold: f64,
    stats: &mut RunStats,
) {
    let mut exact = truth.words.len() == frame.nodes.len();
    for (node, &want) in truth.words.iter().enumerate() {
        let Some(got) = frame.nodes.get(node) else {
            exact = false;
            continue;
        };
        match (want, &got.outcome) {
            (Some(w), NodeOutcome::Word(d)) => {
                stats.active_slots += 1;
                stats.transmitted_bits += k as u64;
                stats.decided_bits += k as u64;
                stats.bit_errors += (w ^ d).count_ones() as u64;
                if w == *d {
                    stats.exact_words += 1;
                } else {
                    stats.word_errors += 1;
                    exact = false;
                }
            }
            (Some(w), NodeOutcome::Fault { .. }) => {
                stats.active_slots += 1;
                stats.transmitted_bits += k as u64;
                stats.faults += 1;
                exact = false;
                for (slot, &corr) in got.correlations.iter().enumerate() {
                    if let Some(bit) = decide(corr, threshold) {
                        stats.decided_bits += 1;
                        let want_bit = w >> (k - 1 - slot as u32) & 1 == 1;
                        if bit != want_bit {
                            stats.bit_errors += 1;
                        }
                    }
                }
            }
            (Some(_), NodeOutcome::Inactive) => {
                stats.active_slots += 1;
                stats.transmitted_bits += k as u64;
                stats.drops += 1;
                exact = false;
            }
            (None, NodeOutcome::Inactive) => {
                stats.inactive_slots += 1;
            }
            (None, _) => {
                stats.inactive_slots += 1;
                stats.ghosts += 1;
                exact = false;
            }
        }
    }
    if exact {
        stats.exact_frames += 1;
    }
}

/// A default-shaped system rescaled to one sweep point: `n` chips per code
/// (n - 1 assignable nodes once the all-ones row is set aside) and a chip
/// short enough that the k·n·T burst spans `target_frame_ms`.
///
/// Sweep points run the ideal channel: no noise, no jitter, instantaneous
/// transitions, 20 samples per chip.
pub fn scale_config(n: usize, k_bits: u8, target_frame_ms: f64) -> SystemConfig {
    let nodes = n.saturating_sub(1).max(1);
    let t_s = target_frame_ms * 1e-3 / (k_bits as f64 * n as f64);
    let mut cfg = SystemConfig::default();
    cfg.node_count = nodes;
    cfg.layout = Layout { rows: 1, cols: nodes };
    cfg.encoder.k_bits = k_bits;
    cfg.encoder.t_us = t_s * 1e6;
    cfg.encoder.frame_period_ms = target_frame_ms * 1.6;
    cfg.encoder.jitter_frac = 0.0;
    cfg.encoder.transition_us = 0.0;
    cfg.sensor.adc_bits = k_bits;
    cfg
}

#[derive(Clone, Copy, Debug)]
pub struct ScalingOptions {
    pub k_bits: u8,
    pub target_frame_ms: f64,
    pub trials: usize,
    pub frames_per_trial: usize,
    /// Chip durations below this are reported for their arithmetic only.
    pub t_floor_s: f64,
    pub seed: u64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            k_bits: 10,
            target_frame_ms: 8.0,
            trials: 4,
            frames_per_trial: 4,
            t_floor_s: 1e-7,
            seed: SystemConfig::default().seed,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScalingRow {
    pub n_nodes: usize,
    pub t_seconds: f64,
    pub frame_ms: f64,
    pub period_ms: f64,
    pub decode_ok_rate: f64,
    pub wall_time_s: f64,
    /// False when the chip fell below the floor or the point could not be
    /// configured; such rows carry timing arithmetic but no measurements.
    pub feasible: bool,
}

/// One scaling measurement per entry of `node_counts`, each with the chip
/// duration that holds the burst at `target_frame_ms`.
pub fn scaling_sweep(node_counts: &[usize], opts: &ScalingOptions) -> Result<Vec<ScalingRow>> {
    if node_counts.is_empty() {
        return Err(Error::Config("scaling sweep needs at least one node count".into()));
    }
    if !(opts.target_frame_ms > 0.0) {
        return Err(Error::Config("target_frame_ms must be positive".into()));
    }
    node_counts.iter().map(|&n| scaling_row(n, opts)).collect()
}

fn scaling_row(n: usize, opts: &ScalingOptions) -> Result<ScalingRow> {
    if n == 0 {
        return Err(Error::Config("node count 0 in scaling sweep".into()));
    }
    let t_s = opts.target_frame_ms * 1e-3 / (opts.k_bits as f64 * n as f64);
    let mut row = ScalingRow {
        n_nodes: n,
        t_seconds: t_s,
        frame_ms: opts.k_bits as f64 * n as f64 * t_s * 1e3,
        period_ms: opts.target_frame_ms * 1.6,
        decode_ok_rate: 0.0,
        wall_time_s: 0.0,
        feasible: true,
    };
    if t_s < opts.t_floor_s {
        row.feasible = false;
        return Ok(row);
    }
    let setup = match scale_config(n, opts.k_bits, opts.target_frame_ms).resolve() {
        Ok(setup) => setup,
        Err(_) => {
            row.feasible = false;
            return Ok(row);
        }
    };
    let cap = default_max_active(&setup);
    let start = Instant::now();
    let mut stats = RunStats::default();
    for trial in 0..opts.trials {
        let trial_seed =
            rng::derive_seed(opts.seed, &[tag::ROW, n as u64, tag::TRIAL, trial as u64]);
        stats.merge(&run_trial(&setup, opts.frames_per_trial, cap, trial_seed)?);
    }
    row.decode_ok_rate = stats.frame_ok_rate();
    row.wall_time_s = start.elapsed().as_secs_f64();
    Ok(row)
}

#[derive(Clone, Copy, Debug)]
pub struct BerRow {
    pub noise_level: f64,
    pub jitter_frac: f64,
    pub channel_adc_bits: u8,
    pub bit_error_rate: f64,
    pub node_error_rate: f64,
    pub ghost_rate: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct NoiseSweepOptions {
    pub trials: usize,
    pub frames_per_trial: usize,
    pub seed: u64,
}

impl Default for NoiseSweepOptions {
    fn default() -> Self {
        NoiseSweepOptions { trials: 8, frames_per_trial: 8, seed: SystemConfig::default().seed }
    }
}

/// Full-factorial BER sweep over uniform noise bound (volts at the wire),
/// edge jitter fraction, and capture depth. Cells run in list order,
/// noise outermost, each from its own derived seed.
pub fn noise_sweep(
    base: &SystemConfig,
    noise_levels: &[f64],
    jitter_fracs: &[f64],
    adc_bits: &[u8],
    opts: &NoiseSweepOptions,
) -> Result<Vec<BerRow>> {
    if noise_levels.is_empty() || jitter_fracs.is_empty() || adc_bits.is_empty() {
        return Err(Error::Config("noise sweep factor lists must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(noise_levels.len() * jitter_fracs.len() * adc_bits.len());
    for (ni, &noise) in noise_levels.iter().enumerate() {
        for (ji, &jitter) in jitter_fracs.iter().enumerate() {
            for (bi, &bits) in adc_bits.iter().enumerate() {
                let mut cfg = base.clone();
                cfg.encoder.jitter_frac = jitter;
                cfg.channel.adc_bits = bits;
                cfg.channel.noise = if noise > 0.0 {
                    NoiseModel::Uniform { bound: noise }
                } else {
                    NoiseModel::None
                };
                let setup = cfg.resolve()?;
                let cap = default_max_active(&setup);
                let cell_seed =
                    rng::derive_seed(opts.seed, &[tag::CELL, ni as u64, ji as u64, bi as u64]);
                let mut stats = RunStats::default();
                for t in 0..opts.trials {
                    let trial_seed = rng::derive_seed(cell_seed, &[tag::TRIAL, t as u64]);
                    stats.merge(&run_trial(&setup, opts.frames_per_trial, cap, trial_seed)?);
                }
                rows.push(BerRow {
                    noise_level: noise,
                    jitter_frac: jitter,
                    channel_adc_bits: bits,
                    bit_error_rate: stats.bit_error_rate(),
                    node_error_rate: stats.node_error_rate(),
                    ghost_rate: stats.ghost_rate(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out =
        String::from("n_nodes,T_seconds,frame_ms,period_ms,decode_ok_rate,wall_time_s,feasible\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.3},{}",
            r.n_nodes, r.t_seconds, r.frame_ms, r.period_ms, r.decode_ok_rate, r.wall_time_s,
            r.feasible
        )
        .expect("string write");
    }
    out
}

pub fn write_scaling_csv(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    Ok(std::fs::write(path, scaling_csv(rows))?)
}

pub fn ber_csv(rows: &[BerRow]) -> String {
    let mut out = String::from(
        "noise_level,jitter_frac,channel_adc_bits,bit_error_rate,node_error_rate,ghost_rate\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.noise_level,
            r.jitter_frac,
            r.channel_adc_bits,
            r.bit_error_rate,
            r.node_error_rate,
            r.ghost_rate
        )
        .expect("string write");
    }
    out
}

pub fn write_ber_csv(path: &Path, rows: &[BerRow]) -> Result<()> {
    Ok(std::fs::write(path, ber_csv(rows))?)
}
