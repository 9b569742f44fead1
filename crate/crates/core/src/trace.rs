//! Position traces and ground-truth situation labels, plus their CSV forms.
//!
//! Trace CSV: `time,agent_id,x,y,shoulder_angle` with time in seconds.
//! Ground truth CSV: `time,situation_id,member_ids` with members separated by
//! `;`. Every person present at a frame appears in exactly one row of that
//! frame, singletons included.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;

use crate::geom::{wrap_angle, Point};
use crate::metrics::{MetricsError, Partition};
use crate::protocol::{AgentId, Tick};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Schema { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn schema<T>(line: u64, reason: impl Into<String>) -> Result<T, TraceError> {
    Err(TraceError::Schema {
        line,
        reason: reason.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point,
    /// Direction the shoulder normal points to, in `[0, 2π)`.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub time: Tick,
    pub poses: BTreeMap<AgentId, Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub time: Tick,
    pub partition: Partition,
}

/// Frames at a uniform timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: Tick,
    pub frames: Vec<TraceFrame>,
}

impl Trace {
    /// Index of the frame closest to `time`, earlier frame on ties.
    pub fn frame_index_at(&self, time: Tick) -> Option<usize> {
        nearest(self.frames.iter().map(|f| f.time), time)
    }
}

/// Index of the time closest to `time`, earliest on ties.
pub fn nearest(times: impl Iterator<Item = Tick>, time: Tick) -> Option<usize> {
    let mut best: Option<(usize, Tick)> = None;
    for (k, t) in times.enumerate() {
        let gap = t.abs_diff(time);
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((k, gap));
        }
    }
    best.map(|(k, _)| k)
}

fn format_time(ms: Tick) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

fn parse_time(s: &str, line: u64) -> Result<Tick, TraceError> {
    let secs: f64 = match s.trim().parse() {
        Ok(v) => v,
        Err(_) => return schema(line, format!("bad time {s:?}")),
    };
    if !secs.is_finite() || !(0.0..=1e12).contains(&secs) {
        return schema(line, format!("time {secs} out of range"));
    }
    Ok((secs * 1000.0).round() as Tick)
}

fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64, TraceError> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => schema(line, format!("bad {what} {s:?}")),
    }
}

fn parse_agent(s: &str, line: u64) -> Result<AgentId, TraceError> {
    s.trim()
        .parse::<u64>()
        .map(AgentId)
        .or_else(|_| schema(line, format!("bad agent id {s:?}")))
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), TraceError> {
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return schema(1, format!("expected header {}, got {}", expected.join(","), got.join(",")));
    }
    Ok(())
}

fn open(path: &Path) -> Result<Box<dyn Read>, TraceError> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(flate2::read::GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

/// Parses trace CSV. Angles outside `[0, 2π)` are wrapped with a warning and
/// irregular sampling is resampled to the most common timestep.
pub fn read_trace(input: impl Read) -> Result<Trace, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut rdr, &["time", "agent_id", "x", "y", "shoulder_angle"])?;
    let mut frames: BTreeMap<Tick, BTreeMap<AgentId, Pose>> = BTreeMap::new();
    let mut wrapped = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 5 {
            return schema(line, format!("expected 5 fields, got {}", rec.len()));
        }
        let time = parse_time(&rec[0], line)?;
        let id = parse_agent(&rec[1], line)?;
        let position = Point::new(parse_f64(&rec[2], "x", line)?, parse_f64(&rec[3], "y", line)?);
        let raw = parse_f64(&rec[4], "shoulder_angle", line)?;
        let angle = wrap_angle(raw);
        if angle != raw {
            wrapped += 1;
            if wrapped == 1 {
                warn!("line {line}: shoulder angle {raw} normalised to {angle}");
            }
        }
        if frames.entry(time).or_default().insert(id, Pose { position, angle }).is_some() {
            return schema(line, format!("agent {id} listed twice at {}", format_time(time)));
        }
    }
    if wrapped > 1 {
        warn!("{wrapped} shoulder angles normalised into [0, 2pi)");
    }
    let frames: Vec<TraceFrame> = frames
        .into_iter()
        .map(|(time, poses)| TraceFrame { time, poses })
        .collect();
    Ok(regularise(frames))
}

fn regularise(frames: Vec<TraceFrame>) -> Trace {
    let mut gaps: BTreeMap<Tick, usize> = BTreeMap::new();
    for w in frames.windows(2) {
        *gaps.entry(w[1].time - w[0].time).or_default() += 1;
    }
    // most common gap, smaller gap on ties
    let Some(dt) = gaps.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&g, _)| g) else {
        return Trace { dt: 0, frames };
    };
    if gaps.len() == 1 {
        return Trace { dt, frames };
    }
    warn!("irregular trace sampling; resampling to {dt} ms by nearest frame");
    let (start, end) = (frames[0].time, frames[frames.len() - 1].time);
    let resampled = (0..=(end - start) / dt)
        .map(|k| {
            let t = start + k * dt;
            let i = nearest(frames.iter().map(|f| f.time), t).expect("non-empty");
            TraceFrame {
                time: t,
                poses: frames[i].poses.clone(),
            }
        })
        .collect();
    Trace { dt, frames: resampled }
}

pub fn write_trace(out: impl Write, frames: &[TraceFrame]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "agent_id", "x", "y", "shoulder_angle"])?;
    for f in frames {
        let time = format_time(f.time);
        for (id, pose) in &f.poses {
            w.write_record([
                time.clone(),
                id.to_string(),
                pose.position.x.to_string(),
                pose.position.y.to_string(),
                pose.angle.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth(input: impl Read) -> Result<Vec<GroundTruthFrame>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut rdr, &["time", "situation_id", "member_ids"])?;
    let mut blocks: BTreeMap<Tick, (u64, Vec<Vec<AgentId>>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return schema(line, format!("expected 3 fields, got {}", rec.len()));
        }
        let time = parse_time(&rec[0], line)?;
        if rec[1].parse::<u64>().is_err() {
            return schema(line, format!("bad situation id {:?}", &rec[1]));
        }
        let members = rec[2]
            .split(';')
            .map(|m| parse_agent(m, line))
            .collect::<Result<Vec<_>, _>>()?;
        let entry = blocks.entry(time).or_insert((line, Vec::new()));
        entry.0 = line;
        entry.1.push(members);
    }
    blocks
        .into_iter()
        .map(|(time, (line, blocks))| match Partition::new(blocks) {
            Ok(partition) => Ok(GroundTruthFrame { time, partition }),
            Err(MetricsError::Overlap(id)) => schema(line, format!("agent {id} in two situations")),
            Err(e) => schema(line, e.to_string()),
        })
        .collect()
}

pub fn write_ground_truth(out: impl Write, frames: &[GroundTruthFrame]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "situation_id", "member_ids"])?;
    for f in frames {
        let time = format_time(f.time);
        for (k, block) in f.partition.blocks().iter().enumerate() {
            let members: Vec<String> = block.iter().map(ToString::to_string).collect();
            w.write_record([time.clone(), k.to_string(), members.join(";")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace file, transparently gunzipping `*.gz`.
pub fn load_trace(path: &Path) -> Result<Trace, TraceError> {
    read_trace(open(path)?)
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthFrame>, TraceError> {
    read_ground_truth(open(path)?)
}
