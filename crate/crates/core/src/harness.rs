//! Scenario configuration, the trace → percept → protocol → metrics
//! pipeline, parameter sweeps and result files.
//!
//! Scenarios are TOML files. All durations are in milliseconds.
//!
//! ```toml
//! seed = 7
//! duration = 900000        # synthetic default 60 s; replays default to the whole trace
//! dt = 100
//! sample_interval = 1000   # defaults to the protocol period
//! unlinked = [4]           # people without a device
//!
//! [source]
//! kind = "synthetic"       # or "replay" with `trace` and `ground_truth` paths
//!
//! [mobility]
//! n_agents = 20
//!
//! [protocol]
//! period = 1000
//!
//! [net]
//! comm_range = 25.0
//!
//! [percept]
//! noise_sigma_pos = 0.1
//!
//! [[providers]]
//! id = 100
//! x = 25.0
//! y = 25.0
//! ```
//!
//! The scenario seed overrides the seeds inside the sections.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::Point;
use crate::metrics::{score_frame, series_summary, FrameScores, Partition};
use crate::mobility::{generate, MobilityConfig};
use crate::netsim::{AuditReport, MessageTally, NetConfig, Network, World};
use crate::percept::{labelled_samples, GmmModel, ModelKind, PerceptConfig, Sensor};
use crate::protocol::{AgentId, AgentKind, AgentState, Directory, ProtocolConfig, Role, Tick};
use crate::trace::{self, nearest, GroundTruthFrame, Trace, TraceError};
use crate::wire::WireRecord;

const GMM_COMPONENTS: usize = 2;
const DEFAULT_SYNTHETIC_DURATION: Tick = 60_000;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: TraceError },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code: 1 for bad configuration or input, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Input { .. } => 1,
            HarnessError::Io { .. } | HarnessError::Runtime(_) => 2,
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, HarnessError> {
    Err(HarnessError::Config(msg.into()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    #[default]
    Synthetic,
    Replay {
        trace: PathBuf,
        #[serde(default)]
        ground_truth: Option<PathBuf>,
    },
}

/// A stationary agent that only contributes opinions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provider {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration: Option<Tick>,
    pub dt: Tick,
    pub sample_interval: Option<Tick>,
    pub source: Source,
    /// JSON mixture model for the `gaussian_mixture` percept model. Without
    /// one, a model is fitted on the scenario's own ground truth.
    pub gmm_model: Option<PathBuf>,
    pub unlinked: Vec<u64>,
    pub providers: Vec<Provider>,
    pub mobility: MobilityConfig,
    pub protocol: ProtocolConfig,
    pub net: NetConfig,
    pub percept: PerceptConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: None,
            dt: 100,
            sample_interval: None,
            source: Source::Synthetic,
            gmm_model: None,
            unlinked: Vec::new(),
            providers: Vec::new(),
            mobility: MobilityConfig::default(),
            protocol: ProtocolConfig::default(),
            net: NetConfig::default(),
            percept: PerceptConfig::default(),
        }
    }
}

impl Scenario {
    /// Parses TOML; relative paths are taken relative to `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        if let Source::Replay { trace, ground_truth } = &mut s.source {
            rebase(trace);
            if let Some(g) = ground_truth {
                rebase(g);
            }
        }
        if let Some(p) = &mut s.gmm_model {
            rebase(p);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, dir).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn sample_interval(&self) -> Tick {
        self.sample_interval.unwrap_or(self.protocol.period)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.protocol.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.net
            .validate(self.protocol.social_distance)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.percept.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.dt == 0 || !self.protocol.period.is_multiple_of(self.dt) {
            return config_err(format!("dt = {} must divide the protocol period {}", self.dt, self.protocol.period));
        }
        let sample = self.sample_interval();
        if sample == 0 || !sample.is_multiple_of(self.dt) {
            return config_err(format!("sample_interval = {sample} must be a positive multiple of dt"));
        }
        if (self.percept.base_rate - self.protocol.base_rate).abs() > 1e-12 {
            return config_err("percept.base_rate must equal protocol.base_rate");
        }
        if self.percept.observation_radius > self.net.comm_range {
            return config_err("percept.observation_radius must not exceed net.comm_range");
        }
        match &self.source {
            Source::Synthetic => {
                if self.duration == Some(0) {
                    return config_err("duration must be positive");
                }
                self.mobility.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            Source::Replay { trace, ground_truth } => {
                for p in std::iter::once(trace).chain(ground_truth) {
                    if !p.exists() {
                        return config_err(format!("{} does not exist", p.display()));
                    }
                }
            }
        }
        let mut ids = BTreeSet::new();
        for p in &self.providers {
            if !ids.insert(p.id) || !(p.x.is_finite() && p.y.is_finite()) {
                return config_err(format!("provider {} is duplicated or misplaced", p.id));
            }
        }
        if self.unlinked.iter().any(|u| ids.contains(u)) {
            return config_err("an id cannot be both a provider and an unlinked person");
        }
        Ok(())
    }

    fn directory(&self) -> Directory {
        let mut d = Directory::new();
        for &u in &self.unlinked {
            d.insert(AgentId(u), AgentKind::HumanWithoutAgent);
        }
        for p in &self.providers {
            d.insert(AgentId(p.id), AgentKind::OpinionProvider);
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Directory receiving the result files; nothing is written without it.
    pub out_dir: Option<PathBuf>,
    pub format: OutputFormat,
    /// Also write every individual delivery, which can be large.
    pub log_deliveries: bool,
    pub gzip_logs: bool,
}

/// Scores at one sampling instant. `scores` is absent without ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub time: Tick,
    pub situations_protocol: usize,
    pub scores: Option<FrameScores>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunSummary {
    pub samples: usize,
    pub rand_mean: f64,
    pub rand_std: f64,
    pub ari_mean: f64,
    pub ari_std: f64,
    pub jaccard_mean: f64,
    pub jaccard_std: f64,
    pub false_positive_pairs: u64,
    pub messages: usize,
    pub bound_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<MetricsRow>,
    pub partitions: Vec<(Tick, Partition)>,
    pub tally: MessageTally,
    pub audit: AuditReport,
    pub summary: RunSummary,
}

/// The partition the protocol currently agrees on, over the people in
/// `universe`. A cluster counts as announced by its head, restricted to
/// members that still follow that head. People claimed by more than one head
/// and everyone else are singletons.
pub fn protocol_partition(agents: &BTreeMap<AgentId, AgentState>, universe: &BTreeSet<AgentId>) -> Partition {
    let mut claims: BTreeMap<AgentId, Vec<AgentId>> = BTreeMap::new();
    for (&h, state) in agents {
        if state.role() != Role::ClusterHead || state.kind() != AgentKind::HumanLinked || !universe.contains(&h) {
            continue;
        }
        let Some(announced) = state.announced() else { continue };
        for &m in &announced.human_members {
            if !universe.contains(&m) {
                continue;
            }
            let follows = match agents.get(&m) {
                Some(ms) => m == h || ms.head_id() == h,
                None => true,
            };
            if follows {
                claims.entry(m).or_default().push(h);
            }
        }
    }
    let mut blocks: BTreeMap<AgentId, Vec<AgentId>> = BTreeMap::new();
    for &id in universe {
        let key = match claims.get(&id).map(Vec::as_slice) {
            Some([h]) => *h,
            _ => id,
        };
        blocks.entry(key).or_default().push(id);
    }
    // a head whose own block was claimed away cannot anchor others
    let mut out: Vec<Vec<AgentId>> = Vec::new();
    for (key, members) in blocks {
        if members.contains(&key) {
            out.push(members);
        } else {
            out.extend(members.into_iter().map(|m| vec![m]));
        }
    }
    Partition::new(out).expect("every person is placed exactly once")
}

/// Frames and labels fed into a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInput {
    pub trace: Trace,
    pub truth: Option<Vec<GroundTruthFrame>>,
    /// Written back out as `trace.csv` and `ground_truth.csv`.
    pub generated: bool,
}

fn input_err(path: &Path) -> impl FnOnce(TraceError) -> HarnessError + '_ {
    move |source| HarnessError::Input {
        path: path.to_owned(),
        source,
    }
}

/// Generates or loads the scenario's frames.
pub fn load_input(s: &Scenario) -> Result<RunInput, HarnessError> {
    match &s.source {
        Source::Synthetic => {
            let mut mob = s.mobility.clone();
            mob.seed = s.seed;
            let duration = s.duration.unwrap_or(DEFAULT_SYNTHETIC_DURATION);
            let g = generate(&mob, duration, s.dt).map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok(RunInput {
                trace: Trace {
                    dt: s.dt,
                    frames: g.frames,
                },
                truth: Some(g.truth),
                generated: true,
            })
        }
        Source::Replay { trace, ground_truth } => {
            let t = trace::load_trace(trace).map_err(input_err(trace))?;
            let truth = match ground_truth {
                Some(p) => Some(trace::load_ground_truth(p).map_err(input_err(p))?),
                None => None,
            };
            Ok(RunInput {
                trace: t,
                truth,
                generated: false,
            })
        }
    }
}

fn build_sensor(s: &Scenario, inputs: &RunInput) -> Result<Sensor, HarnessError> {
    let gmm = match (s.percept.model, &s.gmm_model) {
        (ModelKind::Parametric, _) => None,
        (ModelKind::GaussianMixture, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            Some(GmmModel::from_json(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?)
        }
        (ModelKind::GaussianMixture, None) => {
            let Some(truth) = &inputs.truth else {
                return config_err("gaussian_mixture without gmm_model needs ground truth to train on");
            };
            let mut samples = Vec::new();
            for frame in inputs.trace.frames.iter().filter(|f| f.time % s.protocol.period == 0) {
                if let Some(k) = nearest(truth.iter().map(|g| g.time), frame.time) {
                    samples.extend(labelled_samples(frame, &truth[k].partition, s.percept.observation_radius));
                }
            }
            info!("fitting mixture model on {} labelled pairs", samples.len());
            Some(
                GmmModel::fit(&samples, GMM_COMPONENTS, s.seed)
                    .map_err(|e| HarnessError::Runtime(format!("cannot fit mixture model: {e}")))?,
            )
        }
    };
    Sensor::new(s.percept.clone(), gmm).map_err(|e| HarnessError::Config(e.to_string()))
}

/// Output files of one run, written to temporary names and renamed into
/// place once the run has finished.
struct Outputs {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
    emissions: Box<dyn Write>,
    deliveries: Option<Box<dyn Write>>,
}

impl Outputs {
    fn create(dir: &Path, opts: &RunOptions) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut out = Self {
            dir: dir.to_owned(),
            staged: Vec::new(),
            emissions: Box::new(std::io::sink()),
            deliveries: None,
        };
        let ext = if opts.gzip_logs { "log.gz" } else { "log" };
        out.emissions = out.log_writer(&format!("emissions.{ext}"), opts.gzip_logs)?;
        if opts.log_deliveries {
            out.deliveries = Some(out.log_writer(&format!("deliveries.{ext}"), opts.gzip_logs)?);
        }
        Ok(out)
    }

    fn stage(&mut self, name: &str) -> Result<(PathBuf, File), HarnessError> {
        let tmp = self.dir.join(format!(".{name}.partial"));
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        self.staged.push((tmp.clone(), self.dir.join(name)));
        Ok((tmp, file))
    }

    fn log_writer(&mut self, name: &str, gzip: bool) -> Result<Box<dyn Write>, HarnessError> {
        let (_, file) = self.stage(name)?;
        let file = BufWriter::new(file);
        Ok(if gzip {
            Box::new(flate2::write::GzEncoder::new(file, flate2::Compression::default()))
        } else {
            Box::new(file)
        })
    }

    fn write_file(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), HarnessError> {
        let (tmp, file) = self.stage(name)?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(io_err(&tmp))
    }

    fn log(&mut self, records: &[WireRecord], deliveries: &[WireRecord]) -> Result<(), HarnessError> {
        let path = self.dir.clone();
        for r in records {
            writeln!(self.emissions, "{r}").map_err(io_err(&path))?;
        }
        if let Some(w) = &mut self.deliveries {
            for r in deliveries {
                writeln!(w, "{r}").map_err(io_err(&path))?;
            }
        }
        Ok(())
    }

    fn commit(mut self) -> Result<(), HarnessError> {
        let dir = self.dir.clone();
        self.emissions.flush().map_err(io_err(&dir))?;
        drop(std::mem::replace(&mut self.emissions, Box::new(std::io::sink())));
        if let Some(mut w) = self.deliveries.take() {
            w.flush().map_err(io_err(&dir))?;
        }
        for (tmp, dest) in &self.staged {
            std::fs::rename(tmp, dest).map_err(io_err(dest))?;
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_metrics(w: &mut impl Write, rows: &[MetricsRow], format: OutputFormat) -> std::io::Result<()> {
    match format {
        OutputFormat::Csv => {
            writeln!(w, "time,rand,ari,jaccard,n_situations_truth,n_situations_protocol,false_positive_pairs")?;
            for r in rows {
                let s = r.scores;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    format_seconds(r.time),
                    opt(s.map(|s| s.rand)),
                    opt(s.map(|s| s.ari)),
                    opt(s.map(|s| s.jaccard)),
                    s.map(|s| s.situations_truth.to_string()).unwrap_or_default(),
                    r.situations_protocol,
                    s.map(|s| s.false_positive_pairs.to_string()).unwrap_or_default(),
                )?;
            }
        }
        OutputFormat::Jsonl => {
            for r in rows {
                let s = r.scores;
                let v = serde_json::json!({
                    "time": r.time as f64 / 1000.0,
                    "rand": s.map(|s| s.rand),
                    "ari": s.map(|s| s.ari),
                    "jaccard": s.map(|s| s.jaccard),
                    "n_situations_truth": s.map(|s| s.situations_truth),
                    "n_situations_protocol": r.situations_protocol,
                    "false_positive_pairs": s.map(|s| s.false_positive_pairs),
                });
                writeln!(w, "{v}")?;
            }
        }
    }
    Ok(())
}

fn format_seconds(ms: Tick) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

fn write_partitions(w: &mut impl Write, parts: &[(Tick, Partition)], format: OutputFormat) -> std::io::Result<()> {
    match format {
        OutputFormat::Csv => {
            let frames: Vec<GroundTruthFrame> = parts
                .iter()
                .map(|(time, partition)| GroundTruthFrame {
                    time: *time,
                    partition: partition.clone(),
                })
                .collect();
            trace::write_ground_truth(w, &frames).map_err(std::io::Error::other)
        }
        OutputFormat::Jsonl => {
            for (time, p) in parts {
                let blocks: Vec<Vec<u64>> = p.blocks().iter().map(|b| b.iter().map(|a| a.0).collect()).collect();
                writeln!(w, "{}", serde_json::json!({ "time": *time as f64 / 1000.0, "blocks": blocks }))?;
            }
            Ok(())
        }
    }
}

/// Runs one scenario end to end.
pub fn run(s: &Scenario, opts: &RunOptions) -> Result<RunResult, HarnessError> {
    s.validate()?;
    let inputs = load_input(s)?;
    run_with_input(s, &inputs, opts)
}

/// Runs the pipeline on frames supplied by the caller. The scenario's source
/// is ignored.
pub fn run_with_input(s: &Scenario, inputs: &RunInput, opts: &RunOptions) -> Result<RunResult, HarnessError> {
    let sensor = build_sensor(s, inputs)?;
    let mut outputs = match &opts.out_dir {
        Some(dir) => Some(Outputs::create(dir, opts)?),
        None => None,
    };

    let directory = Arc::new(s.directory());
    let providers: BTreeMap<AgentId, Point> = s.providers.iter().map(|p| (AgentId(p.id), Point::new(p.x, p.y))).collect();
    let mut agents: BTreeMap<AgentId, AgentState> = BTreeMap::new();
    let mut net = Network::new(NetConfig {
        seed: s.seed.wrapping_add(1),
        ..s.net.clone()
    });
    let mut percept_rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(2));
    let mut tally = MessageTally::default();
    let mut metrics = Vec::new();
    let mut partitions = Vec::new();
    let period = s.protocol.period;
    let sample = s.sample_interval();

    let frames = &inputs.trace.frames;
    let (start, end) = match (frames.first(), frames.last()) {
        (Some(a), Some(b)) => (a.time.div_ceil(s.dt) * s.dt, b.time),
        _ => (0, 0),
    };
    let end = match (&s.source, s.duration) {
        (Source::Replay { .. }, Some(d)) => end.min(start + d),
        _ => end,
    };
    let mut world: World = World::new();
    let mut t = start;
    while !frames.is_empty() && t <= end {
        let frame = &frames[inputs.trace.frame_index_at(t).expect("non-empty trace")];
        let mut next_world: World = providers.clone();
        for (&id, pose) in &frame.poses {
            if directory.kind(id) == AgentKind::HumanLinked {
                next_world.insert(id, pose.position);
            }
        }
        // departures: optionally hand the cluster over, then forget the agent
        let gone: Vec<AgentId> = agents.keys().copied().filter(|id| !next_world.contains_key(id)).collect();
        for id in gone {
            if s.protocol.stable_handover {
                let out = agents
                    .get_mut(&id)
                    .and_then(|a| a.handover_head(t).ok())
                    .unwrap_or_default();
                if !out.is_empty() {
                    net.inject(t, out, &world, &mut agents);
                }
            }
            agents.remove(&id);
        }
        for &id in next_world.keys() {
            agents
                .entry(id)
                .or_insert_with(|| AgentState::new(id, directory.kind(id), s.protocol.clone(), directory.clone(), t));
        }
        world = next_world;

        if t % period == 0 {
            for (id, state) in agents.iter_mut() {
                let update = sensor.observe(frame, world[id], &mut percept_rng);
                state.apply_percept(update, t);
            }
        }
        net.step(t, &world, &mut agents);
        let log = net.take_log();
        tally.record(&log);
        if let Some(o) = &mut outputs {
            o.log(&log.emissions, &log.deliveries)?;
        }

        if t % sample == 0 {
            let universe: BTreeSet<AgentId> = frame.poses.keys().copied().collect();
            if !universe.is_empty() {
                let protocol = protocol_partition(&agents, &universe);
                let scores = match &inputs.truth {
                    Some(truth) => {
                        let k = nearest(truth.iter().map(|g| g.time), t);
                        match k {
                            Some(k) => Some(score_against(&truth[k].partition, &protocol)?),
                            None => None,
                        }
                    }
                    None => None,
                };
                metrics.push(MetricsRow {
                    time: t,
                    situations_protocol: protocol.situation_count(),
                    scores,
                });
                partitions.push((t, protocol));
            }
        }
        t += s.dt;
    }

    let audit = tally.audit(period, period);
    let summary = summarise(&metrics, &tally, &audit);
    if let Some(mut o) = outputs {
        let format = opts.format;
        let ext = match format {
            OutputFormat::Csv => "csv",
            OutputFormat::Jsonl => "jsonl",
        };
        o.write_file(&format!("metrics.{ext}"), |w| write_metrics(w, &metrics, format))?;
        o.write_file(&format!("partitions.{ext}"), |w| write_partitions(w, &partitions, format))?;
        o.write_file("summary.csv", |w| write_summaries(w, &[(None, &summary)]))?;
        if inputs.generated {
            let truth = inputs.truth.as_deref().unwrap_or_default();
            o.write_file("trace.csv", |w| trace::write_trace(w, frames).map_err(std::io::Error::other))?;
            o.write_file("ground_truth.csv", |w| trace::write_ground_truth(w, truth).map_err(std::io::Error::other))?;
        }
        o.commit()?;
    }
    if !audit.passed() {
        warn!("{} windows exceed the per-cycle message bound", audit.violations().count());
    }
    Ok(RunResult {
        metrics,
        partitions,
        tally,
        audit,
        summary,
    })
}

/// Scores two partitions, padding either side with singletons so that both
/// cover the same people.
pub fn score_against(truth: &Partition, protocol: &Partition) -> Result<FrameScores, HarnessError> {
    let universe: BTreeSet<AgentId> = truth.universe().union(&protocol.universe()).copied().collect();
    let pad = |p: &Partition| {
        let have = p.universe();
        let blocks = p
            .blocks()
            .iter()
            .cloned()
            .chain(universe.difference(&have).map(|&id| BTreeSet::from([id])));
        Partition::new(blocks).expect("padding adds unused ids only")
    };
    score_frame(&pad(truth), &pad(protocol)).map_err(|e| HarnessError::Runtime(e.to_string()))
}

fn summarise(rows: &[MetricsRow], tally: &MessageTally, audit: &AuditReport) -> RunSummary {
    let scored: Vec<FrameScores> = rows.iter().filter_map(|r| r.scores).collect();
    let stat = |f: fn(&FrameScores) -> f64| -> (f64, f64) {
        let v: Vec<f64> = scored.iter().map(f).collect();
        series_summary(&v).unwrap_or((f64::NAN, f64::NAN))
    };
    let (rand_mean, rand_std) = stat(|s| s.rand);
    let (ari_mean, ari_std) = stat(|s| s.ari);
    let (jaccard_mean, jaccard_std) = stat(|s| s.jaccard);
    RunSummary {
        samples: scored.len(),
        rand_mean,
        rand_std,
        ari_mean,
        ari_std,
        jaccard_mean,
        jaccard_std,
        false_positive_pairs: scored.iter().map(|s| s.false_positive_pairs).sum(),
        messages: tally.total_emitted(),
        bound_violations: audit.violations().count(),
    }
}

fn write_summaries(w: &mut impl Write, rows: &[(Option<(&str, f64, u64)>, &RunSummary)]) -> std::io::Result<()> {
    let swept = rows.iter().any(|r| r.0.is_some());
    if swept {
        write!(w, "parameter,value,seed,")?;
    }
    writeln!(
        w,
        "samples,rand_mean,rand_std,ari_mean,ari_std,jaccard_mean,jaccard_std,false_positive_pairs,messages,bound_violations"
    )?;
    for (key, s) in rows {
        if let Some((param, value, seed)) = key {
            write!(w, "{param},{value},{seed},")?;
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            s.samples,
            s.rand_mean,
            s.rand_std,
            s.ari_mean,
            s.ari_std,
            s.jaccard_mean,
            s.jaccard_std,
            s.false_positive_pairs,
            s.messages,
            s.bound_violations
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    MovingGroupRatio,
    NAgents,
    Loss,
    Noise,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::MovingGroupRatio => "moving_group_ratio",
            SweepParam::NAgents => "n_agents",
            SweepParam::Loss => "loss",
            SweepParam::Noise => "noise",
        }
    }

    fn apply(self, s: &mut Scenario, value: f64) -> Result<(), HarnessError> {
        match self {
            SweepParam::MovingGroupRatio => s.mobility.moving_group_ratio = value,
            SweepParam::NAgents => {
                if !(value >= 0.0 && value.fract() == 0.0) {
                    return config_err(format!("n_agents must be a whole number, got {value}"));
                }
                s.mobility.n_agents = value as usize;
            }
            SweepParam::Loss => s.net.loss_probability = value,
            SweepParam::Noise => s.percept.noise_sigma_pos = value,
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moving_group_ratio" => Ok(SweepParam::MovingGroupRatio),
            "n_agents" => Ok(SweepParam::NAgents),
            "loss" => Ok(SweepParam::Loss),
            "noise" => Ok(SweepParam::Noise),
            other => Err(format!("unknown sweep parameter {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub summary: RunSummary,
}

/// One run per value with seed `base.seed ^ index`, in parallel. Each run
/// writes into `run_<index>` under the output directory, and `sweep.csv`
/// collects one summary row per value.
pub fn sweep(base: &Scenario, param: SweepParam, values: &[f64], opts: &RunOptions) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return config_err("sweep needs at least one value");
    }
    let scenarios = values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let mut s = base.clone();
            s.seed = base.seed ^ k as u64;
            param.apply(&mut s, v)?;
            s.validate()?;
            Ok((k, v, s))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let rows = scenarios
        .into_par_iter()
        .map(|(k, value, s)| {
            let opts = RunOptions {
                out_dir: opts.out_dir.as_ref().map(|d| d.join(format!("run_{k}"))),
                ..opts.clone()
            };
            let r = run(&s, &opts)?;
            Ok(SweepRow {
                value,
                seed: s.seed,
                summary: r.summary,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    if let Some(dir) = &opts.out_dir {
        let path = dir.join("sweep.csv");
        let tmp = dir.join(".sweep.csv.partial");
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
        let keyed: Vec<_> = rows
            .iter()
            .map(|r| (Some((param.name(), r.value, r.seed)), &r.summary))
            .collect();
        write_summaries(&mut w, &keyed).and_then(|_| w.flush()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
    }
    Ok(rows)
}

/// Offline comparison of two partition files in ground-truth CSV form.
/// Protocol frames are matched to the nearest truth frame.
pub fn compare_partitions(truth: &[GroundTruthFrame], protocol: &[GroundTruthFrame]) -> Result<Vec<MetricsRow>, HarnessError> {
    protocol
        .iter()
        .map(|p| {
            let scores = match nearest(truth.iter().map(|g| g.time), p.time) {
                Some(k) => Some(score_against(&truth[k].partition, &p.partition)?),
                None => None,
            };
            Ok(MetricsRow {
                time: p.time,
                situations_protocol: p.partition.situation_count(),
                scores,
            })
        })
        .collect()
}

pub fn write_metrics_to(path: &Path, rows: &[MetricsRow], format: OutputFormat) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write_metrics(&mut w, rows, format)
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}
