//! `tacmux`: simulate, decode, and sweep orthogonal-code tactile traces.
//!
//! Exit codes: 0 success, 1 verification failure (a roundtrip mismatch or a
//! trace that will not align), 2 usage or configuration error, 3 I/O or
//! malformed data file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tacmux::channel::digitize;
use tacmux::codebook::{verify_orthogonality, CodeBook};
use tacmux::config::{SystemConfig, SystemSetup};
use tacmux::decoder::{decode_trace, Reconstructor};
use tacmux::sensor::PressureFrame;
use tacmux::sim::Simulator;
use tacmux::sweep::{
    self, noise_sweep, scaling_sweep, write_ber_csv, write_scaling_csv, NoiseSweepOptions,
    ScalingOptions,
};
use tacmux::trace_io;
use tacmux::{Error, Result};

#[derive(Parser)]
#[command(name = "tacmux", version, about = "Orthogonal-code multiplexing workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an orthogonal codebook and write it as JSON.
    Codegen(CodegenArgs),
    /// Render the superimposed wire trace for a pressure stimulus.
    Simulate(SimulateArgs),
    /// Recover per-node words from a trace capture.
    Decode(DecodeArgs),
    /// Simulate, decode, and compare against ground truth.
    Roundtrip(RoundtripArgs),
    /// Hold the frame budget while the code order scales.
    SweepScaling(SweepScalingArgs),
    /// Factorial sweep over noise, jitter, and capture depth.
    SweepNoise(SweepNoiseArgs),
    /// Write a system config with every default spelled out.
    ConfigInit(ConfigInitArgs),
}

#[derive(Args)]
struct CodegenArgs {
    /// Number of sensing nodes to assign rows for.
    #[arg(long)]
    nodes: usize,
    /// Assign the all-ones row too (bipolar setups only).
    #[arg(long)]
    include_dc_row: bool,
    /// Output codebook JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// System config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Pressure stimulus: rows x cols grids in kPa, blank-line separated,
    /// one grid per frame.
    #[arg(long)]
    pressure: PathBuf,
    /// Frame count; defaults to the number of stimulus grids. Extra frames
    /// repeat the last grid.
    #[arg(long)]
    frames: Option<usize>,
    /// Output trace CSV (`time_s,voltage_v`).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth sidecar; defaults to the trace path with extension
    /// `truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// System config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Input trace CSV (`time_s,voltage_v`).
    #[arg(long)]
    trace: PathBuf,
    /// Output decoded-frames JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write reconstructed pressure grids, one block per frame.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct RoundtripArgs {
    /// System config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Independent simulate-decode-compare passes.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Frames per trial.
    #[arg(long, default_value_t = 4)]
    frames: usize,
    /// Stimulus seed; defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepScalingArgs {
    /// Code orders to sweep; each order n carries n-1 nodes.
    #[arg(long, value_delimiter = ',', default_value = "16,64,256,1024,4096")]
    nodes: Vec<usize>,
    /// Word width in bits.
    #[arg(long, default_value_t = 10)]
    k_bits: u8,
    /// Burst duration to hold, milliseconds.
    #[arg(long, default_value_t = 8.0)]
    target_frame_ms: f64,
    #[arg(long, default_value_t = 4)]
    trials: usize,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    /// Chip-duration floor in microseconds; shorter rows are flagged
    /// infeasible and carry timing arithmetic only.
    #[arg(long, default_value_t = 0.1)]
    t_floor_us: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepNoiseArgs {
    /// System config JSON for the baseline cell.
    #[arg(long)]
    config: PathBuf,
    /// Uniform noise bounds at the wire, volts.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    noise: Vec<f64>,
    /// Per-edge jitter fractions of the chip duration.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    jitter: Vec<f64>,
    /// Capture depths in bits.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    adc_bits: Vec<u8>,
    #[arg(long, default_value_t = 8)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigInitArgs {
    /// Where to write the config; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

/// Map library failures onto the documented exit codes. JSON errors only
/// arise here while reading config files, so they count as config errors.
fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse { .. } => 3,
        Error::Alignment(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Codegen(a) => codegen(a),
        Command::Simulate(a) => simulate(a),
        Command::Decode(a) => decode(a),
        Command::Roundtrip(a) => roundtrip(a),
        Command::SweepScaling(a) => sweep_scaling(a),
        Command::SweepNoise(a) => sweep_noise(a),
        Command::ConfigInit(a) => config_init(a),
    }
}

fn load_setup(path: &Path) -> Result<(SystemConfig, SystemSetup)> {
    let cfg = SystemConfig::load(path)?;
    let setup = cfg.resolve()?;
    Ok((cfg, setup))
}

fn codegen(a: CodegenArgs) -> Result<ExitCode> {
    let book = CodeBook::assign(a.nodes, !a.include_dc_row)?;
    let report = verify_orthogonality(&book);
    if !report.is_orthogonal() {
        eprintln!("codebook failed its orthogonality check");
        return Ok(ExitCode::from(1));
    }
    let mut text = book.to_json();
    text.push('\n');
    std::fs::write(&a.out, text)?;
    println!("order {}, {} nodes -> {}", book.order(), book.node_count(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let (_, setup) = load_setup(&a.config)?;
    let grids =
        trace_io::read_pressure_frames(&a.pressure, setup.layout.rows, setup.layout.cols)?;
    let frames = a.frames.unwrap_or(grids.len());
    if frames == 0 {
        return Err(Error::Config("frame count must be at least 1".into()));
    }
    let mut sim = Simulator::new(setup);
    for f in 0..frames {
        sim.push_pressures(&grids[f.min(grids.len() - 1)])?;
    }
    let out = sim.finish();
    let trace = out.digitized.to_voltages();
    trace_io::write_trace_csv(&a.out, &trace)?;
    let truth_path = a.truth.unwrap_or_else(|| a.out.with_extension("truth.json"));
    trace_io::write_truth_json(&truth_path, &out.truths)?;
    println!(
        "{frames} frame(s), {} samples, {:.3} ms -> {} (truth {})",
        trace.samples.len(),
        trace.duration() * 1e3,
        a.out.display(),
        truth_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn decode(a: DecodeArgs) -> Result<ExitCode> {
    let (_, setup) = load_setup(&a.config)?;
    let analog = trace_io::read_trace_csv(&a.trace)?;
    let digitized = digitize(&analog, &setup.channel);
    let frames = decode_trace(&digitized, &setup.book, &setup.decoder)?;
    let records = trace_io::decoded_records(&frames, &setup.sensor, setup.encoder.k_bits);
    trace_io::write_decoded_json(&a.out, &records)?;
    let mut note = String::new();
    if let Some(hm) = &a.heatmap {
        let mut recon = Reconstructor::new(setup.node_count());
        let grids: Vec<PressureFrame> = frames
            .iter()
            .map(|f| {
                recon.apply(f);
                recon.pressure_frame(&setup.sensor, setup.layout.rows, setup.layout.cols)
            })
            .collect::<Result<_>>()?;
        trace_io::write_pressure_frames(hm, &grids)?;
        note = format!(" (heatmap {})", hm.display());
    }
    println!("{} frame(s) -> {}{note}", frames.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn roundtrip(a: RoundtripArgs) -> Result<ExitCode> {
    let (cfg, setup) = load_setup(&a.config)?;
    let stats = sweep::roundtrip(&setup, a.trials, a.frames, a.seed.unwrap_or(cfg.seed))?;
    println!(
        "frames {}/{} exact, {} spurious",
        stats.exact_frames, stats.frames, stats.spurious_frames
    );
    println!(
        "words  {}/{} exact ({} wrong, {} fault, {} dropped, {} ghost)",
        stats.exact_words, stats.active_slots, stats.word_errors, stats.faults, stats.drops,
        stats.ghosts
    );
    println!(
        "bits   {}/{} decided, {} wrong",
        stats.decided_bits, stats.transmitted_bits, stats.bit_errors
    );
    println!(
        "rates  bit {:.3e}  node {:.3e}  ghost {:.3e}",
        stats.bit_error_rate(),
        stats.node_error_rate(),
        stats.ghost_rate()
    );
    if stats.is_exact() {
        println!("roundtrip: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("roundtrip: FAIL");
        Ok(ExitCode::from(1))
    }
}

fn sweep_scaling(a: SweepScalingArgs) -> Result<ExitCode> {
    let opts = ScalingOptions {
        k_bits: a.k_bits,
        target_frame_ms: a.target_frame_ms,
        trials: a.trials,
        frames_per_trial: a.frames,
        t_floor_s: a.t_floor_us * 1e-6,
        seed: a.seed.unwrap_or_else(|| SystemConfig::default().seed),
    };
    let rows = scaling_sweep(&a.nodes, &opts)?;
    for r in &rows {
        println!(
            "n {:>5}  T {:>10.4} us  frame {:.3} ms  period {:.3} ms  ok {:.3}{}",
            r.n_nodes,
            r.t_seconds * 1e6,
            r.frame_ms,
            r.period_ms,
            r.decode_ok_rate,
            if r.feasible { "" } else { "  [infeasible]" }
        );
    }
    write_scaling_csv(&a.out, &rows)?;
    println!("{} row(s) -> {}", rows.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn sweep_noise(a: SweepNoiseArgs) -> Result<ExitCode> {
    let cfg = SystemConfig::load(&a.config)?;
    cfg.resolve()?;
    let opts = NoiseSweepOptions {
        trials: a.trials,
        frames_per_trial: a.frames,
        seed: a.seed.unwrap_or(cfg.seed),
    };
    let rows = noise_sweep(&cfg, &a.noise, &a.jitter, &a.adc_bits, &opts)?;
    for r in &rows {
        println!(
            "noise {:>8}  jitter {:>5}  bits {:>2}  ber {:.3e}  node {:.3e}  ghost {:.3e}",
            r.noise_level, r.jitter_frac, r.channel_adc_bits, r.bit_error_rate,
            r.node_error_rate, r.ghost_rate
        );
    }
    write_ber_csv(&a.out, &rows)?;
    println!("{} row(s) -> {}", rows.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn config_init(a: ConfigInitArgs) -> Result<ExitCode> {
    let cfg = SystemConfig::default();
    match &a.out {
        Some(path) => {
            cfg.save(path)?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", cfg.to_json()?),
    }
    Ok(ExitCode::SUCCESS)
}
