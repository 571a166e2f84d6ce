//! Receiver: frame synchronization, chip correlation, word recovery.
//!
//! The decoder works on the digitized capture in raw ADC code units. Chip
//! sums, baselines, and correlations stay in integer arithmetic, so an
//! inactive node's correlation against an orthogonal code cancels exactly
//! rather than to within float rounding; volts only enter at the final
//! threshold comparison.

use serde::{Deserialize, Serialize};

use crate::channel::DigitizedTrace;
use crate::codebook::{CodeBook, CodeVector};
use crate::sensor::{PressureFrame, SensorModel};
use crate::{Error, Result};

/// Receiver-side parameters.
#[derive(Clone, Debug)]
pub struct DecoderConfig {
    /// Chip duration T in seconds.
    pub chip_duration: f64,
    /// Word width in bits.
    pub k_bits: u8,
    /// Frame repetition period in seconds.
    pub frame_period: f64,
    /// Expected per-chip correlation amplitude at the receiver, volts:
    /// attenuation * (level_high - level_low) / 2 for either mapping.
    pub a_expected: f64,
    /// Deviation from baseline that marks the wire as active, volts.
    pub quiet_threshold: f64,
    /// Hot regions closer than this merge into one burst, seconds. Must
    /// exceed the longest run of baseline-level chips inside a burst, which
    /// is one code length.
    pub min_gap: f64,
    /// Fraction of each chip averaged by the correlator, centered in the
    /// chip. Keeps edge jitter and transition ramps out of the window.
    pub chip_window_frac: f64,
    /// Bit decision threshold as a fraction of the full correlation n * A.
    pub activity_margin_frac: f64,
    /// Sense polarity is inverted (receiver follower above the wire).
    pub invert_input: bool,
}

impl DecoderConfig {
    pub fn validate(&self, code_len: usize) -> Result<()> {
        if self.chip_duration <= 0.0 {
            return Err(Error::Config("decoder: chip duration must be positive".into()));
        }
        if self.k_bits == 0 || self.k_bits > 24 {
            return Err(Error::Config("decoder: k_bits must be in 1..=24".into()));
        }
        if !(self.a_expected > 0.0) {
            return Err(Error::Config("decoder: a_expected must be positive".into()));
        }
        if !(self.quiet_threshold > 0.0) {
            return Err(Error::Config("decoder: quiet_threshold must be positive".into()));
        }
        if !(0.05..=0.9).contains(&self.chip_window_frac) {
            return Err(Error::Config("decoder: chip_window_frac must be in [0.05, 0.9]".into()));
        }
        if !(0.0..1.0).contains(&self.activity_margin_frac) || self.activity_margin_frac <= 0.0 {
            return Err(Error::Config(
                "decoder: activity_margin_frac must be in (0, 1)".into(),
            ));
        }
        let burst = self.k_bits as f64 * code_len as f64 * self.chip_duration;
        if self.frame_period <= burst {
            return Err(Error::Config("decoder: frame period shorter than a burst".into()));
        }
        if self.min_gap <= code_len as f64 * self.chip_duration {
            return Err(Error::Config(
                "decoder: min_gap must exceed one code length of chips".into(),
            ));
        }
        if self.min_gap >= self.frame_period - burst {
            return Err(Error::Config("decoder: min_gap must fit inside the frame gap".into()));
        }
        Ok(())
    }
}

/// One detected burst, in fractional sample coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameWindow {
    pub start_sample: f64,
    pub end_sample: f64,
}

impl FrameWindow {
    pub fn duration_samples(&self) -> f64 {
        self.end_sample - self.start_sample
    }
}

/// Synchronization result: the wire's resting code and the detected bursts.
#[derive(Clone, Debug)]
pub struct SyncResult {
    pub baseline_code: i32,
    pub windows: Vec<FrameWindow>,
}

/// Per-node result within one frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NodeOutcome {
    /// Every bit slot produced a decision.
    Word(u32),
    /// Every bit slot stayed below the activity threshold.
    Inactive,
    /// A mixture: the node looked active in some slots only.
    Fault { decided_bits: u8 },
}

/// One node's decode with its per-slot correlations (volts).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeDecode {
    pub node: usize,
    pub outcome: NodeOutcome,
    pub correlations: Vec<f64>,
    /// Smallest |correlation| / (n * a_expected) among decided slots,
    /// 0 when nothing was decided. Healthy decodes sit near 1.
    pub margin: f64,
}

/// One decoded burst.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodedFrame {
    /// Burst position on the frame-period grid.
    pub frame_index: i64,
    /// Realized start after alignment, fractional samples.
    pub start_sample: f64,
    /// Baseline-level chips inferred before the first visible edge.
    pub leading_chips: usize,
    /// Frame time bounds, seconds on the trace clock.
    pub t_start: f64,
    pub t_end: f64,
    pub nodes: Vec<NodeDecode>,
}

/// In-place Walsh-Hadamard transform; length must be a power of two.
/// `out[r]` equals the dot product of the input with codebook row `r`.
pub fn fwht(data: &mut [i64]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fwht length must be a power of two");
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(h * 2) {
            for i in block..block + h {
                let a = data[i];
                let b = data[i + h];
                data[i] = a + b;
                data[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Correlate one code length of chip values against a code: the sum over
/// +1 chips minus the sum over -1 chips. Exact in integer arithmetic.
pub fn correlate(chip_values: &[i64], code: &CodeVector) -> i64 {
    assert_eq!(chip_values.len(), code.len());
    let mut plus = 0i64;
    let mut minus = 0i64;
    for (i, &v) in chip_values.iter().enumerate() {
        if code.chip(i) > 0 {
            plus += v;
        } else {
            minus += v;
        }
    }
    plus - minus
}

/// Three-way bit decision: above +threshold reads 1, below -threshold reads
/// 0, anything between is no decision.
pub fn decide(correlation: f64, threshold: f64) -> Option<bool> {
    if correlation > threshold {
        Some(true)
    } else if correlation < -threshold {
        Some(false)
    } else {
        None
    }
}

fn samples_per_chip(trace: &DigitizedTrace, cfg: &DecoderConfig) -> Result<usize> {
    let s = trace.sample_rate * cfg.chip_duration;
    if s < 4.0 {
        return Err(Error::Resolution(format!(
            "{s:.2} samples per chip; synchronization needs at least 4"
        )));
    }
    Ok(s.round() as usize)
}

fn oriented_codes(trace: &DigitizedTrace, cfg: &DecoderConfig) -> Vec<i32> {
    if cfg.invert_input {
        trace.codes.iter().map(|&c| -c).collect()
    } else {
        trace.codes.clone()
    }
}

/// Locate bursts by thresholding a one-chip sliding sum against the wire's
/// resting level, then refine each edge to the 50% crossing of its own
/// amplitude.
pub fn frame_sync(trace: &DigitizedTrace, cfg: &DecoderConfig) -> Result<SyncResult> {
    let codes = oriented_codes(trace, cfg);
    sync_codes(&codes, trace, cfg)
}

fn sync_codes(codes: &[i32], trace: &DigitizedTrace, cfg: &DecoderConfig) -> Result<SyncResult> {
    let s = samples_per_chip(trace, cfg)?;
    let n = codes.len();
    if n < 2 * s {
        return Err(Error::Alignment("trace shorter than two chips".into()));
    }

    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0i64);
    for &c in codes {
        prefix.push(prefix.last().unwrap() + i64::from(c));
    }
    let win_sum = |i: usize| prefix[i + 1] - prefix[i + 1 - s];

    // Coarse baseline: the resting level. Raw sample counts alone are
    // ambiguous, since a busy trace can spend more time on one chip level
    // than in its quiet gaps. Only the resting level holds for a full
    // min_gap at a stretch, though: plateaus inside a burst top out near
    // half a code length. So candidate bins are ranked by the time the
    // signal rests within them.
    let thr_codes = cfg.quiet_threshold / trace.step;
    let bin = (thr_codes / 2.0).max(1.0);
    let min_gap_samples = (cfg.min_gap * trace.sample_rate).round() as usize;
    let mut counts: std::collections::HashMap<i64, (usize, i64)> = std::collections::HashMap::new();
    for &c in codes {
        let key = (f64::from(c) / bin).floor() as i64;
        let e = counts.entry(key).or_insert((0, 0));
        e.0 += 1;
        e.1 += i64::from(c);
    }
    let support = |center: f64| {
        let tol = 1.5 * bin;
        let mut held = 0usize;
        let mut run = 0usize;
        for &c in codes {
            if (f64::from(c) - center).abs() <= tol {
                run += 1;
            } else {
                if run >= min_gap_samples {
                    held += run;
                }
                run = 0;
            }
        }
        if run >= min_gap_samples {
            held += run;
        }
        held
    };
    // A resting run spreads over at most three adjacent bins, so the bin
    // holding its largest share always clears this floor.
    let min_count = (min_gap_samples / 3).max(1);
    let rested = counts
        .iter()
        .filter(|(_, (c, _))| *c >= min_count)
        .map(|(&k, &(c, t))| (support((k as f64 + 0.5) * bin), c, std::cmp::Reverse(k), t))
        .max()
        .filter(|&(held, ..)| held > 0);
    let (cnt, total) = match rested {
        Some((_, c, _, t)) => (c, t),
        // No level rests for a full gap (a capture cut mid-burst, say):
        // fall back to the raw mode bin.
        None => {
            let (_, &(c, t)) = counts
                .iter()
                .max_by_key(|(k, (c, _))| (*c, std::cmp::Reverse(**k)))
                .expect("non-empty trace");
            (c, t)
        }
    };
    let coarse = total as f64 / cnt as f64;

    // Hot mask over sliding-window positions, then runs merged across
    // in-burst baseline stretches.
    let hot_lim = s as f64 * thr_codes;
    let dev = |i: usize| win_sum(i) as f64 - s as f64 * coarse;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for i in (s - 1)..n {
        if dev(i).abs() > hot_lim {
            match runs.last_mut() {
                Some(r) if i - r.1 < min_gap_samples => r.1 = i,
                _ => runs.push((i, i)),
            }
        }
    }
    runs.retain(|&(a, b)| b - a + 1 >= s);

    // Refined baseline: median of raw codes well clear of any burst.
    let mut quiet: Vec<i32> = Vec::new();
    let clear = |i: usize| {
        runs.iter().all(|&(a, b)| i + 2 * s < a.saturating_sub(s) + s || i > b + s)
    };
    for (i, &c) in codes.iter().enumerate() {
        if clear(i) {
            quiet.push(c);
        }
    }
    let baseline_code = if quiet.is_empty() {
        coarse.round() as i32
    } else {
        quiet.sort_unstable();
        quiet[quiet.len() / 2]
    };

    let base = i64::from(baseline_code);
    let d = |i: usize| (win_sum(i) - s as i64 * base).abs() as f64;
    let windows = runs
        .iter()
        .map(|&(a, b)| {
            let start = refine_edge(codes, base, thr_codes, &d, a, b, s, true);
            let end = refine_edge(codes, base, thr_codes, &d, a, b, s, false);
            FrameWindow { start_sample: start, end_sample: end }
        })
        .collect();

    Ok(SyncResult { baseline_code, windows })
}

/// Pin down a burst edge. The first (rising) or last (falling) sample whose
/// own deviation clears the quiet threshold marks the step directly; every
/// visible chip level sits at least twice the threshold away from the
/// baseline, so this is immune to how strong the neighboring chips happen
/// to be. If no single sample clears it, fall back to the 50% crossing of
/// the one-chip sliding deviation, undoing the window's group delay.
#[allow(clippy::too_many_arguments)]
fn refine_edge(
    codes: &[i32],
    base: i64,
    thr_codes: f64,
    d: &dyn Fn(usize) -> f64,
    a: usize,
    b: usize,
    s: usize,
    rising: bool,
) -> f64 {
    let n = codes.len();
    let sample_hot = |i: usize| (i64::from(codes[i]) - base).abs() as f64 > thr_codes;
    if rising {
        for i in a.saturating_sub(2 * s)..=(a + 2 * s).min(n - 1) {
            if sample_hot(i) {
                return i as f64;
            }
        }
    } else {
        for i in (b.saturating_sub(2 * s)..=(b + 2 * s).min(n - 1)).rev() {
            if sample_hot(i) {
                return (i + 1) as f64;
            }
        }
    }

    let (lo, hi) = if rising {
        (a.saturating_sub(2 * s).max(s - 1), (a + 2 * s).min(n - 1))
    } else {
        (b.saturating_sub(2 * s).max(s - 1), (b + 2 * s).min(n - 1))
    };
    let mut peak = 0.0f64;
    for i in lo..=hi {
        peak = peak.max(d(i));
    }
    let half = peak / 2.0;
    let cross = if rising {
        let mut x = None;
        for i in (lo + 1)..=hi {
            if d(i) > half && d(i - 1) <= half {
                let frac = (half - d(i - 1)) / (d(i) - d(i - 1));
                x = Some((i - 1) as f64 + frac);
                break;
            }
        }
        match x {
            Some(x) => x,
            // Already hot at the head of the trace: the burst starts at or
            // before the first observable window.
            None if d(lo) > half => return (lo + 1 - s) as f64,
            None => a as f64,
        }
    } else {
        let mut x = None;
        for i in (lo + 1)..=hi {
            if d(i - 1) > half && d(i) <= half && i > b.saturating_sub(s) {
                let frac = (d(i - 1) - half) / (d(i - 1) - d(i));
                x = Some((i - 1) as f64 + frac);
                break;
            }
        }
        match x {
            Some(x) => x,
            // Still hot at the end of the trace: the burst runs off it.
            None if d(hi) > half => return (hi + 1) as f64,
            None => b as f64,
        }
    };
    cross + 1.0 - s as f64 / 2.0
}

/// Integer chip sums over centered windows of constant width. Chips may
/// start before the trace or run past its end; missing samples read as
/// baseline.
struct ChipExtractor<'a> {
    codes: &'a [i32],
    baseline: i64,
    chip_span: f64,
    width: usize,
    offset: f64,
    step: f64,
}

impl<'a> ChipExtractor<'a> {
    fn new(codes: &'a [i32], baseline: i32, trace: &DigitizedTrace, cfg: &DecoderConfig) -> Result<Self> {
        let chip_span = trace.sample_rate * cfg.chip_duration;
        let width = (chip_span * cfg.chip_window_frac).round() as usize;
        if width < 3 {
            return Err(Error::Resolution(format!(
                "chip window of {width} samples; need at least 3 (raise the sample rate \
                 or chip_window_frac)"
            )));
        }
        let offset = (chip_span - width as f64) / 2.0;
        Ok(ChipExtractor {
            codes,
            baseline: i64::from(baseline),
            chip_span,
            width,
            offset,
            step: trace.step,
        })
    }

    /// Sum of (code - baseline) over chip `c`'s window for a burst starting
    /// at `start` (fractional samples).
    fn deviation(&self, start: f64, c: i64) -> i64 {
        let u = start + c as f64 * self.chip_span + self.offset;
        let i0 = u.round() as i64;
        let mut sum = 0i64;
        for i in i0..i0 + self.width as i64 {
            if i >= 0 && (i as usize) < self.codes.len() {
                sum += i64::from(self.codes[i as usize]) - self.baseline;
            }
        }
        sum
    }
}

struct Alignment {
    start: f64,
    leading_chips: usize,
    /// Per-slot chip deviations, `k` slots of `n` values.
    slots: Vec<Vec<i64>>,
}

/// Choose the whole-chip alignment of a burst. A word whose leading or
/// trailing chips sit at the baseline hides them from the envelope
/// detector, so the visible burst may start several chips into the frame.
/// Candidate shifts are scored by how cleanly the per-slot transform lands
/// on the codebook: assigned rows should read -nA, 0, or +nA and everything
/// else should read 0.
fn align(
    ex: &ChipExtractor,
    window: &FrameWindow,
    book: &CodeBook,
    cfg: &DecoderConfig,
    period_samples: f64,
) -> Alignment {
    let n = book.order();
    let k = cfg.k_bits as usize;
    let total = n * k;
    let missing = (total as f64 - window.duration_samples() / ex.chip_span).round();
    let j_max = (missing as i64 + 1).clamp(0, n as i64 / 2 + 2) as usize;

    let ext: Vec<i64> = (-(j_max as i64)..total as i64)
        .map(|c| ex.deviation(window.start_sample, c))
        .collect();

    // Full-scale correlation in code-sum units: n chips of W samples at
    // a_expected volts each.
    let expected = n as f64 * ex.width as f64 * cfg.a_expected / ex.step;
    let assigned: std::collections::HashSet<usize> = book.assignment().iter().copied().collect();

    // A node transmits for the whole frame or not at all, so each assigned
    // row is scored under its better whole-frame hypothesis: every slot
    // near +/-nA (active), or every slot near zero (idle). Unassigned rows
    // must stay near zero; the DC row absorbs the mapping's offset and is
    // left out when unassigned.
    let mut candidates: Vec<(f64, f64, usize)> = Vec::with_capacity(j_max + 1);
    let mut active_err = vec![0.0f64; n];
    let mut idle_err = vec![0.0f64; n];
    let mut buf = vec![0i64; n];
    for j in 0..=j_max {
        let chips = &ext[j_max - j..j_max - j + total];
        active_err.fill(0.0);
        idle_err.fill(0.0);
        for slot in 0..k {
            buf.copy_from_slice(&chips[slot * n..(slot + 1) * n]);
            fwht(&mut buf);
            for (r, &x) in buf.iter().enumerate() {
                let x = x as f64;
                let a = (x - expected).abs().min((x + expected).abs());
                active_err[r] += a * a;
                idle_err[r] += x * x;
            }
        }
        let mut score = 0.0f64;
        for r in 0..n {
            if assigned.contains(&r) {
                score += active_err[r].min(idle_err[r]);
            } else if r != 0 {
                score += idle_err[r];
            }
        }
        let start = window.start_sample - j as f64 * ex.chip_span;
        let phase_err = (start / period_samples - (start / period_samples).round()).abs();
        candidates.push((score, phase_err, j));
    }

    // Some shifted streams are exact aliases of another row's stream (for
    // example, an alternating row shifted one chip is its own negation), so
    // near-equal scores carry no information and only the frame-period grid
    // separates the candidates. A genuine misalignment reads at least one
    // half-amplitude chip wrong, which costs four times this slack.
    let best_score = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let w_thr = ex.width as f64 * cfg.quiet_threshold / ex.step;
    let slack = w_thr * w_thr;
    let (_, _, j) = candidates
        .iter()
        .filter(|c| c.0 <= best_score + slack)
        .min_by(|a, b| (a.1, a.2).partial_cmp(&(b.1, b.2)).expect("finite scores"))
        .copied()
        .expect("at least one candidate");
    let chips = &ext[j_max - j..j_max - j + total];
    let slots = (0..k).map(|slot| chips[slot * n..(slot + 1) * n].to_vec()).collect();
    Alignment {
        start: window.start_sample - j as f64 * ex.chip_span,
        leading_chips: j,
        slots,
    }
}

fn decode_one(
    node: usize,
    slots: &[Vec<i64>],
    book: &CodeBook,
    cfg: &DecoderConfig,
    threshold: f64,
    to_volts: f64,
) -> NodeDecode {
    let code = book.code_for(node);
    let full_scale = book.order() as f64 * cfg.a_expected;
    let mut correlations = Vec::with_capacity(slots.len());
    let mut word = 0u32;
    let mut decided = 0u8;
    let mut margin = f64::INFINITY;
    for slot in slots {
        let corr = correlate(slot, code) as f64 * to_volts;
        correlations.push(corr);
        if let Some(bit) = decide(corr, threshold) {
            decided += 1;
            word = word << 1 | u32::from(bit);
            margin = margin.min(corr.abs() / full_scale);
        } else {
            word <<= 1;
        }
    }
    let outcome = if decided == cfg.k_bits {
        NodeOutcome::Word(word)
    } else if decided == 0 {
        NodeOutcome::Inactive
    } else {
        NodeOutcome::Fault { decided_bits: decided }
    };
    let margin = if decided == 0 { 0.0 } else { margin };
    NodeDecode { node, outcome, correlations, margin }
}

fn decode_nodes(
    slots: &[Vec<i64>],
    book: &CodeBook,
    cfg: &DecoderConfig,
    width: usize,
    step: f64,
) -> Vec<NodeDecode> {
    let to_volts = step / width as f64;
    let threshold = cfg.activity_margin_frac * book.order() as f64 * cfg.a_expected;

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..book.node_count())
            .into_par_iter()
            .map(|node| decode_one(node, slots, book, cfg, threshold, to_volts))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..book.node_count())
            .map(|node| decode_one(node, slots, book, cfg, threshold, to_volts))
            .collect()
    }
}

#[cfg(feature = "parallel")]
fn decode_nodes_seq(
    slots: &[Vec<i64>],
    book: &CodeBook,
    cfg: &DecoderConfig,
    width: usize,
    step: f64,
) -> Vec<NodeDecode> {
    let to_volts = step / width as f64;
    let threshold = cfg.activity_margin_frac * book.order() as f64 * cfg.a_expected;
    (0..book.node_count())
        .map(|node| decode_one(node, slots, book, cfg, threshold, to_volts))
        .collect()
}

fn decode_window(
    codes: &[i32],
    baseline: i32,
    window: &FrameWindow,
    trace: &DigitizedTrace,
    book: &CodeBook,
    cfg: &DecoderConfig,
    sequential: bool,
) -> Result<DecodedFrame> {
    let ex = ChipExtractor::new(codes, baseline, trace, cfg)?;
    let period_samples = cfg.frame_period * trace.sample_rate;
    let alignment = align(&ex, window, book, cfg, period_samples);
    let nodes = if sequential {
        #[cfg(feature = "parallel")]
        {
            decode_nodes_seq(&alignment.slots, book, cfg, ex.width, trace.step)
        }
        #[cfg(not(feature = "parallel"))]
        {
            decode_nodes(&alignment.slots, book, cfg, ex.width, trace.step)
        }
    } else {
        decode_nodes(&alignment.slots, book, cfg, ex.width, trace.step)
    };
    let burst_samples =
        cfg.k_bits as f64 * book.order() as f64 * cfg.chip_duration * trace.sample_rate;
    let end_sample = window.end_sample.max(alignment.start + burst_samples);
    Ok(DecodedFrame {
        frame_index: (alignment.start / period_samples).round() as i64,
        start_sample: alignment.start,
        leading_chips: alignment.leading_chips,
        t_start: trace.t0 + alignment.start / trace.sample_rate,
        t_end: trace.t0 + end_sample / trace.sample_rate,
        nodes,
    })
}

/// Decode one already-located burst.
pub fn decode_frame(
    trace: &DigitizedTrace,
    sync: &SyncResult,
    window: &FrameWindow,
    book: &CodeBook,
    cfg: &DecoderConfig,
) -> Result<DecodedFrame> {
    cfg.validate(book.order())?;
    let codes = oriented_codes(trace, cfg);
    decode_window(&codes, sync.baseline_code, window, trace, book, cfg, false)
}

/// Sequential reference decode of one burst; identical output to
/// [`decode_frame`].
#[cfg(feature = "parallel")]
pub fn decode_frame_seq(
    trace: &DigitizedTrace,
    sync: &SyncResult,
    window: &FrameWindow,
    book: &CodeBook,
    cfg: &DecoderConfig,
) -> Result<DecodedFrame> {
    cfg.validate(book.order())?;
    let codes = oriented_codes(trace, cfg);
    decode_window(&codes, sync.baseline_code, window, trace, book, cfg, true)
}

/// Synchronize and decode every burst in a capture.
pub fn decode_trace(
    trace: &DigitizedTrace,
    book: &CodeBook,
    cfg: &DecoderConfig,
) -> Result<Vec<DecodedFrame>> {
    cfg.validate(book.order())?;
    let codes = oriented_codes(trace, cfg);
    let sync = sync_codes(&codes, trace, cfg)?;
    sync.windows
        .iter()
        .map(|w| decode_window(&codes, sync.baseline_code, w, trace, book, cfg, false))
        .collect()
}

/// Hold-last-value state over a stream of decoded frames. Nodes that stay
/// quiet keep their previous word, which is what the event gate implies.
#[derive(Clone, Debug)]
pub struct Reconstructor {
    words: Vec<Option<u32>>,
}

impl Reconstructor {
    pub fn new(node_count: usize) -> Self {
        Reconstructor { words: vec![None; node_count] }
    }

    pub fn apply(&mut self, frame: &DecodedFrame) {
        for nd in &frame.nodes {
            if let NodeOutcome::Word(w) = nd.outcome {
                if nd.node < self.words.len() {
                    self.words[nd.node] = Some(w);
                }
            }
        }
    }

    pub fn words(&self) -> &[Option<u32>] {
        &self.words
    }

    /// Pressure grid for the current hold state. Nodes that have never
    /// spoken read zero pressure.
    pub fn pressure_frame(
        &self,
        model: &SensorModel,
        rows: usize,
        cols: usize,
    ) -> Result<PressureFrame> {
        let values = self
            .words
            .iter()
            .map(|w| match *w {
                Some(w) => model.voltage_to_pressure(model.word_to_voltage(w)).kpa,
                None => 0.0,
            })
            .collect();
        PressureFrame::new(rows, cols, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DigitizedTrace;
    use crate::codebook::{sylvester_hadamard, CodeBook};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_cfg() -> DecoderConfig {
        DecoderConfig {
            chip_duration: 25e-6,
            k_bits: 10,
            frame_period: 12.8e-3,
            a_expected: 0.15,
            quiet_threshold: 0.15,
            min_gap: 2.4e-3,
            chip_window_frac: 0.5,
            activity_margin_frac: 0.5,
            invert_input: false,
        }
    }

    #[test]
    fn fwht_matches_row_dot_products() {
        let rows = sylvester_hadamard(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<i64> = (0..16).map(|_| rng.random_range(-1000..1000)).collect();
            let mut t = x.clone();
            fwht(&mut t);
            for (r, row) in rows.iter().enumerate() {
                let naive: i64 = (0..16).map(|i| x[i] * i64::from(row.chip(i))).sum();
                assert_eq!(t[r], naive, "row {r}");
            }
        }
    }

    #[test]
    fn fwht_equals_correlate_for_every_row() {
        let rows = sylvester_hadamard(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<i64> = (0..64).map(|_| rng.random_range(-50_000..50_000)).collect();
        let mut t = x.clone();
        fwht(&mut t);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(t[r], correlate(&x, row));
        }
    }

    #[test]
    fn inactive_correlation_is_exactly_zero() {
        // Chips carry a single node's pattern; every other non-DC row must
        // cancel to integer zero regardless of the two level values.
        let rows = sylvester_hadamard(32).unwrap();
        for active in 1..32usize {
            let chips: Vec<i64> =
                (0..32).map(|i| if rows[active].chip(i) > 0 { 983 } else { 17 }).collect();
            for (r, row) in rows.iter().enumerate().skip(1) {
                let c = correlate(&chips, row);
                if r == active {
                    assert_eq!(c, 16 * (983 - 17));
                } else {
                    assert_eq!(c, 0, "rows {active} vs {r}");
                }
            }
        }
    }

    #[test]
    fn decide_is_trilevel() {
        assert_eq!(decide(1.0, 0.5), Some(true));
        assert_eq!(decide(-1.0, 0.5), Some(false));
        assert_eq!(decide(0.3, 0.5), None);
        assert_eq!(decide(-0.5, 0.5), None);
        assert_eq!(decide(0.5, 0.5), None);
    }

    fn trace_from_codes(codes: Vec<i32>, fs: f64) -> DigitizedTrace {
        DigitizedTrace {
            sample_rate: fs,
            t0: 0.0,
            codes,
            step: 2.0 * 5.0 / 65536.0,
            clipped: 0,
        }
    }

    /// Build a digitized capture of one burst by hand: `levels` are chip
    /// values in volts, `start` is the burst's first sample.
    fn synth_burst(levels: &[f64], start: usize, total: usize, s: usize, base_v: f64) -> Vec<i32> {
        let step = 2.0 * 5.0 / 65536.0;
        let base = (base_v / step).round() as i32;
        let mut codes = vec![base; total];
        for (c, &v) in levels.iter().enumerate() {
            let code = ((base_v + v) / step).round() as i32;
            for i in 0..s {
                codes[start + c * s + i] = code;
            }
        }
        codes
    }

    #[test]
    fn sync_finds_clean_burst_edges() {
        let cfg = test_cfg();
        let s = 20usize;
        // 320 chips of alternating +/0 deviation, like a single unipolar
        // node: starts at sample 4000, amplitude 0.3 V.
        let levels: Vec<f64> =
            (0..320).map(|i| if i % 2 == 0 || i == 319 { 0.3 } else { 0.0 }).collect();
        let codes = synth_burst(&levels, 4000, 16384, s, 0.0);
        let t = trace_from_codes(codes, 800e3);
        let sync = frame_sync(&t, &cfg).unwrap();
        assert_eq!(sync.baseline_code, 0);
        assert_eq!(sync.windows.len(), 1);
        let w = &sync.windows[0];
        assert!((w.start_sample - 4000.0).abs() <= 0.6, "start {}", w.start_sample);
        assert!((w.end_sample - (4000 + 320 * s) as f64).abs() <= 0.6, "end {}", w.end_sample);
    }

    #[test]
    fn sync_bridges_in_burst_quiet_runs() {
        let cfg = test_cfg();
        let s = 20usize;
        // A code length of baseline chips in the middle must not split the
        // burst: 100 hot, 32 quiet, 100 hot.
        let mut levels = vec![0.3; 100];
        levels.extend(vec![0.0; 32]);
        levels.extend(vec![0.3; 100]);
        let codes = synth_burst(&levels, 2000, 12000, s, 0.0);
        let t = trace_from_codes(codes, 800e3);
        let sync = frame_sync(&t, &cfg).unwrap();
        assert_eq!(sync.windows.len(), 1);
    }

    #[test]
    fn sync_separates_bursts_across_the_gap() {
        let cfg = test_cfg();
        let s = 20usize;
        let period = (12.8e-3 * 800e3) as usize;
        let mut codes = vec![0i32; 3 * period];
        for f in 0..2 {
            let levels: Vec<f64> =
                (0..320).map(|i| if i % 3 == 0 { 0.3 } else { 0.0 }).collect();
            let burst = synth_burst(&levels, 0, 320 * s, s, 0.0);
            let at = f * period;
            codes[at..at + burst.len()].copy_from_slice(&burst);
        }
        let t = trace_from_codes(codes, 800e3);
        let sync = frame_sync(&t, &cfg).unwrap();
        assert_eq!(sync.windows.len(), 2);
        let d = sync.windows[1].start_sample - sync.windows[0].start_sample;
        assert!((d - period as f64).abs() < 1.0, "period {d}");
    }

    #[test]
    fn sync_rests_on_the_gap_level_when_bursts_dominate() {
        // An order-4 frame at an 80% duty cycle: one chip level collects
        // nearly twice as many samples as the quiet gaps, so a histogram
        // vote would call a chip level the baseline. Rest time has to win
        // instead: chip plateaus never last min_gap, the gaps do.
        let mut cfg = test_cfg();
        cfg.frame_period = 1.25e-3;
        cfg.min_gap = 0.125e-3;
        let s = 20usize;
        let slot: [f64; 10] = [0.3, 0.3, 0.3, 0.3, 0.6, 0.3, 0.3, 0.3, 0.3, 0.0];
        let mut levels: Vec<f64> = (0..40).map(|i| slot[i % 10]).collect();
        levels[39] = 0.6;
        let mut codes = vec![0i32; 2300];
        for f in 0..2usize {
            let burst = synth_burst(&levels, 0, 800, s, 0.0);
            let at = 100 + f * 1000;
            codes[at..at + 800].copy_from_slice(&burst);
        }
        let t = trace_from_codes(codes, 800e3);
        let sync = frame_sync(&t, &cfg).unwrap();
        assert_eq!(sync.baseline_code, 0);
        assert_eq!(sync.windows.len(), 2);
        for (f, w) in sync.windows.iter().enumerate() {
            let at = (100 + f * 1000) as f64;
            assert!((w.start_sample - at).abs() <= 0.6, "start {}", w.start_sample);
            assert!((w.end_sample - (at + 800.0)).abs() <= 0.6, "end {}", w.end_sample);
        }
    }

    #[test]
    fn sync_handles_nonzero_baseline() {
        let cfg = test_cfg();
        let s = 20usize;
        let levels: Vec<f64> = (0..320).map(|i| if i % 2 == 0 { 0.3 } else { 0.0 }).collect();
        let codes = synth_burst(&levels, 4000, 16384, s, 1.2);
        let t = trace_from_codes(codes, 800e3);
        let sync = frame_sync(&t, &cfg).unwrap();
        let expect = (1.2 / t.step).round() as i32;
        assert_eq!(sync.baseline_code, expect);
        assert_eq!(sync.windows.len(), 1);
        assert!((sync.windows[0].start_sample - 4000.0).abs() <= 0.6);
    }

    #[test]
    fn sync_start_is_robust_to_many_simultaneous_risers() {
        // All active nodes rise together on the first chip, so the leading
        // edge amplitude varies with the active count. The 50%-of-own-peak
        // crossing keeps the start estimate within half a sample.
        let cfg = test_cfg();
        let s = 20usize;
        for m in [1usize, 2, 5, 16] {
            let amp = 0.3 * m as f64;
            let mut levels = vec![amp; 4];
            levels.extend((0..316).map(|i| if i % 2 == 0 { 0.3 } else { 0.0 }));
            let codes = synth_burst(&levels, 4000, 16384, s, 0.0);
            let t = trace_from_codes(codes, 800e3);
            let sync = frame_sync(&t, &cfg).unwrap();
            assert!(
                (sync.windows[0].start_sample - 4000.0).abs() <= 0.6,
                "m={m} start {}",
                sync.windows[0].start_sample
            );
        }
    }

    /// Full decode of a hand-built burst: one active node on an H_32 book.
    #[test]
    fn decode_recovers_word_from_synthetic_burst() {
        let cfg = test_cfg();
        let s = 20usize;
        let book = CodeBook::assign(16, true).unwrap();
        let code = book.code_for(11);
        let word = 366u32;
        let mut levels = Vec::new();
        for b in (0..10).rev() {
            let one = word >> b & 1 == 1;
            for i in 0..32 {
                let chip = if one { code.chip(i) } else { -code.chip(i) };
                levels.push(if chip > 0 { 0.3 } else { 0.0 });
            }
        }
        let codes = synth_burst(&levels, 10240, 20480, s, 0.0);
        let t = trace_from_codes(codes, 800e3);
        let frames = decode_trace(&t, &book, &cfg).unwrap();
        assert_eq!(frames.len(), 1);
        let f = &frames[0];
        assert_eq!(f.frame_index, 1);
        for nd in &f.nodes {
            if nd.node == 11 {
                assert_eq!(nd.outcome, NodeOutcome::Word(366));
            } else {
                assert_eq!(nd.outcome, NodeOutcome::Inactive, "node {}", nd.node);
                for &c in &nd.correlations {
                    assert_eq!(c, 0.0, "node {} correlation", nd.node);
                }
            }
        }
    }

    #[test]
    fn decode_resolves_hidden_leading_chips() {
        // Word 0 on a code whose negation starts low: the envelope cannot
        // see the first chips, and alignment has to put them back.
        let cfg = test_cfg();
        let s = 20usize;
        let book = CodeBook::assign(16, true).unwrap();
        for word in [0u32, 1, 512, 1023] {
            for node in [0usize, 7, 15] {
                let code = book.code_for(node);
                let mut levels = Vec::new();
                for b in (0..10).rev() {
                    let one = word >> b & 1 == 1;
                    for i in 0..32 {
                        let chip = if one { code.chip(i) } else { -code.chip(i) };
                        levels.push(if chip > 0 { 0.3 } else { 0.0 });
                    }
                }
                let codes = synth_burst(&levels, 10240, 20480, s, 0.0);
                let t = trace_from_codes(codes, 800e3);
                let frames = decode_trace(&t, &book, &cfg).unwrap();
                assert_eq!(frames.len(), 1, "word {word} node {node}");
                let outcome = &frames[0].nodes[node].outcome;
                assert_eq!(*outcome, NodeOutcome::Word(word), "word {word} node {node}");
            }
        }
    }

    #[test]
    fn inverted_capture_decodes_after_orientation() {
        let cfg = DecoderConfig { invert_input: true, ..test_cfg() };
        let s = 20usize;
        let book = CodeBook::assign(16, true).unwrap();
        let code = book.code_for(3);
        let word = 700u32;
        let mut levels = Vec::new();
        for b in (0..10).rev() {
            let one = word >> b & 1 == 1;
            for i in 0..32 {
                let chip = if one { code.chip(i) } else { -code.chip(i) };
                // Inverted wire: active chips pull the sense line down.
                levels.push(if chip > 0 { -0.3 } else { 0.0 });
            }
        }
        let codes = synth_burst(&levels, 10240, 20480, s, 0.0);
        let t = trace_from_codes(codes, 800e3);
        let frames = decode_trace(&t, &book, &cfg).unwrap();
        assert_eq!(frames[0].nodes[3].outcome, NodeOutcome::Word(700));
    }

    #[test]
    fn reconstructor_holds_last_word() {
        let mut r = Reconstructor::new(3);
        assert_eq!(r.words(), &[None, None, None]);
        let decode = |node, outcome| NodeDecode { node, outcome, correlations: vec![], margin: 0.9 };
        let frame = DecodedFrame {
            frame_index: 0,
            start_sample: 0.0,
            leading_chips: 0,
            t_start: 0.0,
            t_end: 8e-3,
            nodes: vec![
                decode(0, NodeOutcome::Word(5)),
                decode(1, NodeOutcome::Inactive),
                decode(2, NodeOutcome::Fault { decided_bits: 3 }),
            ],
        };
        r.apply(&frame);
        assert_eq!(r.words(), &[Some(5), None, None]);
        let frame2 = DecodedFrame {
            frame_index: 1,
            start_sample: 0.0,
            leading_chips: 0,
            t_start: 12.8e-3,
            t_end: 20.8e-3,
            nodes: vec![decode(1, NodeOutcome::Word(9))],
        };
        r.apply(&frame2);
        assert_eq!(r.words(), &[Some(5), Some(9), None]);
    }

    #[test]
    fn reconstruction_turns_words_into_pressure() {
        let m = SensorModel::default();
        let mut r = Reconstructor::new(4);
        let silent = r.pressure_frame(&m, 2, 2).unwrap();
        assert_eq!(silent.values, vec![0.0; 4]);
        let decode = |node, outcome| NodeDecode { node, outcome, correlations: vec![], margin: 0.9 };
        let frame = DecodedFrame {
            frame_index: 0,
            start_sample: 0.0,
            leading_chips: 0,
            t_start: 0.0,
            t_end: 8e-3,
            nodes: vec![decode(0, NodeOutcome::Word(366)), decode(3, NodeOutcome::Word(1023))],
        };
        r.apply(&frame);
        let p = r.pressure_frame(&m, 2, 2).unwrap();
        let want = m.voltage_to_pressure(m.word_to_voltage(366)).kpa;
        assert!((p.values[0] - want).abs() < 1e-12);
        assert_eq!(p.values[1], 0.0);
        // The top code sits one half step under the rail, a hair above zero.
        assert!(p.values[3] < 0.1, "{}", p.values[3]);
        assert!(r.pressure_frame(&m, 3, 2).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_gaps() {
        let mut c = test_cfg();
        assert!(c.validate(32).is_ok());
        c.min_gap = 0.5e-3;
        assert!(c.validate(32).is_err());
        c.min_gap = 5e-3;
        assert!(c.validate(32).is_err());
        c = test_cfg();
        c.activity_margin_frac = 0.0;
        assert!(c.validate(32).is_err());
    }
}
