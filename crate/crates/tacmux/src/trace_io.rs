//! File formats: trace CSV, pressure grids, decoded-frame and truth JSON.
//!
//! The trace CSV is `time_s,voltage_v`, one sample per line, values printed
//! in Rust's shortest-round-trip form so a write/read cycle is lossless.
//! Pressure grids are plain comma-separated numbers, one row per line;
//! multiple frames are separated by blank lines.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::AnalogTrace;
use crate::decoder::{DecodedFrame, NodeOutcome};
use crate::sensor::{PressureFrame, SensorModel};
use crate::sim::FrameTruth;
use crate::{Error, Result};

const TRACE_HEADER: &str = "time_s,voltage_v";

pub fn write_trace_csv(path: &Path, trace: &AnalogTrace) -> Result<()> {
    let mut text = String::with_capacity(trace.samples.len() * 24 + 32);
    text.push_str(TRACE_HEADER);
    text.push('\n');
    for (i, &v) in trace.samples.iter().enumerate() {
        let t = trace.t0 + i as f64 / trace.sample_rate;
        writeln!(text, "{t},{v}").expect("string write");
    }
    Ok(std::fs::write(path, text)?)
}

/// Read a `time_s,voltage_v` capture. The sample rate is inferred from the
/// time column; the header line is optional.
pub fn read_trace_csv(path: &Path) -> Result<AnalogTrace> {
    let text = std::fs::read_to_string(path)?;
    parse_trace_csv(&text)
}

pub fn parse_trace_csv(text: &str) -> Result<AnalogTrace> {
    let mut times: Vec<f64> = Vec::new();
    let mut samples: Vec<f64> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || (line_no == 1 && line == TRACE_HEADER) {
            continue;
        }
        let (t, v) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected two comma-separated fields".into(),
        })?;
        let parse = |s: &str, what: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad {what} value {s:?}"),
            })
        };
        let t = parse(t, "time")?;
        let v = parse(v, "voltage")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("time {t} does not increase past {prev}"),
                });
            }
        }
        times.push(t);
        samples.push(v);
    }
    if samples.len() < 2 {
        return Err(Error::Parse {
            line: text.lines().count() + 1,
            message: "trace needs at least two samples".into(),
        });
    }
    let span = times[times.len() - 1] - times[0];
    let sample_rate = (times.len() - 1) as f64 / span;
    Ok(AnalogTrace { sample_rate, t0: times[0], samples })
}

pub fn write_pressure_frames(path: &Path, frames: &[PressureFrame]) -> Result<()> {
    let mut text = String::new();
    for (i, frame) in frames.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        for r in 0..frame.rows {
            let row: Vec<String> = (0..frame.cols)
                .map(|c| frame.values[r * frame.cols + c].to_string())
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
    }
    Ok(std::fs::write(path, text)?)
}

/// Read one or more `rows`x`cols` grids, blank-line separated.
pub fn read_pressure_frames(path: &Path, rows: usize, cols: usize) -> Result<Vec<PressureFrame>> {
    let text = std::fs::read_to_string(path)?;
    parse_pressure_frames(&text, rows, cols)
}

pub fn parse_pressure_frames(text: &str, rows: usize, cols: usize) -> Result<Vec<PressureFrame>> {
    let mut frames: Vec<PressureFrame> = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut first_line = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                frames.push(close_frame(&current, rows, cols, first_line)?);
                current.clear();
            }
            continue;
        }
        if current.is_empty() {
            first_line = line_no;
        }
        let mut row = 0usize;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad pressure value {field:?}"),
            })?;
            current.push(v);
            row += 1;
        }
        if row != cols {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {cols} columns, found {row}"),
            });
        }
    }
    if !current.is_empty() {
        frames.push(close_frame(&current, rows, cols, first_line)?);
    }
    if frames.is_empty() {
        return Err(Error::Parse { line: 1, message: "no pressure data".into() });
    }
    Ok(frames)
}

fn close_frame(values: &[f64], rows: usize, cols: usize, first_line: usize) -> Result<PressureFrame> {
    if values.len() != rows * cols {
        return Err(Error::Parse {
            line: first_line,
            message: format!(
                "frame starting here has {} values, expected {rows}x{cols}",
                values.len()
            ),
        });
    }
    PressureFrame::new(rows, cols, values.to_vec())
}

/// One node row in the export: the recovered word spelled as a k-bit binary
/// string plus the voltage it stands for, so downstream tooling needs no
/// codec knowledge. Inactive and fault rows carry nulls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedNodeRecord {
    pub id: usize,
    pub status: String,
    pub word_bin: Option<String>,
    pub voltage_v: Option<f64>,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedFrameRecord {
    pub frame_index: i64,
    pub t_start_s: f64,
    pub nodes: Vec<DecodedNodeRecord>,
}

/// Flatten decoder output into the export shape.
pub fn decoded_records(
    frames: &[DecodedFrame],
    sensor: &SensorModel,
    k_bits: u8,
) -> Vec<DecodedFrameRecord> {
    frames
        .iter()
        .map(|f| DecodedFrameRecord {
            frame_index: f.frame_index,
            t_start_s: f.t_start,
            nodes: f
                .nodes
                .iter()
                .map(|nd| {
                    let (status, word_bin, voltage_v) = match nd.outcome {
                        NodeOutcome::Word(w) => (
                            "word",
                            Some(format!("{w:0width$b}", width = k_bits as usize)),
                            Some(sensor.word_to_voltage(w)),
                        ),
                        NodeOutcome::Inactive => ("inactive", None, None),
                        NodeOutcome::Fault { .. } => ("fault", None, None),
                    };
                    DecodedNodeRecord {
                        id: nd.node,
                        status: status.into(),
                        word_bin,
                        voltage_v,
                        margin: nd.margin,
                    }
                })
                .collect(),
        })
        .collect()
}

pub fn write_decoded_json(path: &Path, records: &[DecodedFrameRecord]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(records)?;
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}

pub fn read_decoded_json(path: &Path) -> Result<Vec<DecodedFrameRecord>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn write_truth_json(path: &Path, truths: &[FrameTruth]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(truths)?;
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}

pub fn read_truth_json(path: &Path) -> Result<Vec<FrameTruth>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
