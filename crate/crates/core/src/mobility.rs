//! Synthetic scenarios: people wander by Gauss–Markov motion, are pulled
//! into groups at random, gather, stand together in a ring or walk off as a
//! moving group, and disperse again. The generator labels every frame with
//! the situations it created.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Point};
use crate::metrics::Partition;
use crate::protocol::{AgentId, Tick};
use crate::trace::{GroundTruthFrame, Pose, TraceFrame};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MobilityError {
    #[error("invalid mobility configuration: {0}")]
    InvalidConfig(String),
}

/// Repulsion distances below this are clamped.
pub const FORCE_EPSILON: f64 = 0.01;
/// Meeting points keep this far from the walls.
const MEETING_MARGIN: f64 = 2.0;
const REGROUP_COOLDOWN_S: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    /// Width and height in metres.
    pub area: [f64; 2],
    pub n_agents: usize,
    /// Speed levels in m/s.
    pub speed_levels: Vec<f64>,
    /// Row-stochastic transition matrix between speed levels, per second.
    pub speed_transitions: Vec<Vec<f64>>,
    /// Memory of the Gauss–Markov process per second, in `[0, 1]`.
    pub gauss_markov_alpha: f64,
    /// Radians; spread of the heading process.
    pub heading_sigma: f64,
    /// m/s; spread of the speed around its current level.
    pub speed_sigma: f64,
    /// Expected group formations per second across the whole area.
    pub group_formation_rate: f64,
    /// `[size, weight]` pairs; weights are normalised.
    pub group_size_distribution: Vec<(usize, f64)>,
    /// Uniform range of how long a formed group stays together, in seconds.
    pub resting_duration: [f64; 2],
    pub moving_group_ratio: f64,
    /// m/s of a moving group.
    pub group_speed: f64,
    pub force_k_center: f64,
    pub force_k_repel: f64,
    /// Members within this distance of the meeting point have arrived.
    pub interaction_distance: f64,
    pub angle_jitter_sigma: f64,
    /// Label groups as soon as two members have arrived instead of when all
    /// have.
    pub label_waiting_phase: bool,
    pub seed: u64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            area: [50.0, 50.0],
            n_agents: 10,
            speed_levels: vec![0.0, 0.7, 1.4],
            speed_transitions: vec![vec![0.80, 0.15, 0.05], vec![0.10, 0.80, 0.10], vec![0.05, 0.15, 0.80]],
            gauss_markov_alpha: 0.75,
            heading_sigma: 0.6,
            speed_sigma: 0.1,
            group_formation_rate: 0.02,
            group_size_distribution: vec![(2, 0.4), (3, 0.3), (4, 0.2), (5, 0.1)],
            resting_duration: [60.0, 180.0],
            moving_group_ratio: 0.3,
            group_speed: 0.7,
            force_k_center: 1.0,
            force_k_repel: 0.3,
            interaction_distance: 1.0,
            angle_jitter_sigma: 0.2,
            label_waiting_phase: false,
            seed: 0,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<(), MobilityError> {
        let bad = |what: String| Err(MobilityError::InvalidConfig(what));
        if !(self.area[0] > 2.0 * MEETING_MARGIN && self.area[1] > 2.0 * MEETING_MARGIN) {
            return bad(format!("area must exceed {} m per side", 2.0 * MEETING_MARGIN));
        }
        let k = self.speed_levels.len();
        if k == 0 || self.speed_levels.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("speed levels must be non-negative".into());
        }
        if self.speed_transitions.len() != k
            || self.speed_transitions.iter().any(|row| {
                row.len() != k || row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
            })
        {
            return bad("speed_transitions must be a square row-stochastic matrix".into());
        }
        if !(0.0..=1.0).contains(&self.gauss_markov_alpha) || !(0.0..=1.0).contains(&self.moving_group_ratio) {
            return bad("gauss_markov_alpha and moving_group_ratio must lie in [0, 1]".into());
        }
        if !(self.group_formation_rate >= 0.0) {
            return bad("group_formation_rate must be non-negative".into());
        }
        if self.group_size_distribution.is_empty()
            || self.group_size_distribution.iter().any(|&(s, w)| s < 2 || !(w >= 0.0))
            || !(self.group_size_distribution.iter().map(|p| p.1).sum::<f64>() > 0.0)
        {
            return bad("group sizes must be at least 2 with non-negative weights".into());
        }
        let [lo, hi] = self.resting_duration;
        if !(lo > 0.0 && hi >= lo) {
            return bad("resting_duration must be a positive range".into());
        }
        if !(self.force_k_center > 0.0 && self.force_k_repel > 0.0) {
            return bad("force gains must be positive".into());
        }
        if !(self.interaction_distance > 0.0 && self.group_speed >= 0.0) {
            return bad("interaction_distance must be positive".into());
        }
        if !(self.heading_sigma >= 0.0 && self.speed_sigma >= 0.0 && self.angle_jitter_sigma >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        Ok(())
    }

    fn walk_speed(&self) -> f64 {
        self.speed_levels.iter().copied().fold(0.0, f64::max).max(0.1)
    }
}

/// Gains of the o-space arrangement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceParams {
    pub k_center: f64,
    pub k_repel: f64,
    /// Upper bound on the distance any agent moves in one step.
    pub max_step: f64,
}

/// One explicit Euler step of the group arrangement. Every agent is pulled
/// toward `center` and pushed away from its two nearest fellow members.
pub fn force_step(members: &[Point], center: Point, params: &ForceParams, dt: f64) -> Vec<Point> {
    members
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut force = (center - x) * params.k_center;
            for j in nearest_two(members, i) {
                let diff = x - members[j];
                let dist = diff.norm();
                let dir = if dist > 0.0 {
                    diff * (1.0 / dist)
                } else {
                    // coincident agents split along a fixed axis
                    Point::new(if i < j { -1.0 } else { 1.0 }, 0.0)
                };
                force = force + dir * (params.k_repel / dist.max(FORCE_EPSILON));
            }
            let mut step = force * dt;
            let len = step.norm();
            if len > params.max_step {
                step = step * (params.max_step / len);
            }
            x + step
        })
        .collect()
}

fn nearest_two(members: &[Point], i: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (members[i].distance(*p), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(2).map(|(_, j)| j).collect()
}

/// Potential whose negative gradient is the force field when every agent's
/// two nearest neighbours are all of the others (groups of two or three).
pub fn force_potential(members: &[Point], center: Point, params: &ForceParams) -> f64 {
    let mut u: f64 = members
        .iter()
        .map(|x| 0.5 * params.k_center * (*x - center).norm().powi(2))
        .sum();
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            u -= params.k_repel * members[i].distance(members[j]).max(FORCE_EPSILON).ln();
        }
    }
    u
}

/// Generated trace with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub frames: Vec<TraceFrame>,
    pub truth: Vec<GroundTruthFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Walking,
    Joining(usize),
}

#[derive(Debug, Clone)]
struct Walker {
    pos: Point,
    heading: f64,
    mean_heading: f64,
    speed: f64,
    level: usize,
    angle: f64,
    mode: Mode,
    free_at: f64,
    arrived: bool,
    jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Gathering,
    Resting { until: f64 },
    Moving { until: f64, heading: f64 },
}

#[derive(Debug, Clone)]
struct Group {
    members: Vec<usize>,
    center: Point,
    moving: bool,
    phase: Phase,
}

struct Sim<'a> {
    cfg: &'a MobilityConfig,
    rng: ChaCha8Rng,
    walkers: Vec<Walker>,
    groups: Vec<Option<Group>>,
    jitter: Option<Normal<f64>>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a MobilityConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let walkers = (0..cfg.n_agents)
            .map(|_| {
                let heading = rng.random_range(0.0..TAU);
                let level = rng.random_range(0..cfg.speed_levels.len());
                Walker {
                    pos: Point::new(rng.random_range(0.0..cfg.area[0]), rng.random_range(0.0..cfg.area[1])),
                    heading,
                    mean_heading: heading,
                    speed: cfg.speed_levels[level],
                    level,
                    angle: heading,
                    mode: Mode::Walking,
                    free_at: 0.0,
                    arrived: false,
                    jitter: 0.0,
                }
            })
            .collect();
        let jitter = (cfg.angle_jitter_sigma > 0.0).then(|| Normal::new(0.0, cfg.angle_jitter_sigma).expect("checked"));
        Self {
            cfg,
            rng,
            walkers,
            groups: Vec::new(),
            jitter,
        }
    }

    fn gauss(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn step(&mut self, now: f64, dt: f64) {
        let p_form = 1.0 - (-self.cfg.group_formation_rate * dt).exp();
        if self.rng.random::<f64>() < p_form {
            self.form_group(now);
        }
        for i in 0..self.walkers.len() {
            if self.walkers[i].mode == Mode::Walking {
                self.walk(i, dt);
            }
        }
        for g in 0..self.groups.len() {
            self.advance_group(g, now, dt);
        }
    }

    fn form_group(&mut self, now: f64) {
        let idle: Vec<usize> = (0..self.walkers.len())
            .filter(|&i| self.walkers[i].mode == Mode::Walking && self.walkers[i].free_at <= now)
            .collect();
        if idle.len() < 2 {
            return;
        }
        let dist = &self.cfg.group_size_distribution;
        let &(size, _) = dist
            .choose_weighted(&mut self.rng, |p| p.1)
            .expect("validated non-empty with positive total weight");
        let size = size.min(idle.len());
        let seed = *idle.choose(&mut self.rng).expect("non-empty");
        let origin = self.walkers[seed].pos;
        let mut rest: Vec<usize> = idle.into_iter().filter(|&i| i != seed).collect();
        rest.sort_by(|&a, &b| {
            origin
                .distance(self.walkers[a].pos)
                .total_cmp(&origin.distance(self.walkers[b].pos))
                .then(a.cmp(&b))
        });
        let mut members = vec![seed];
        members.extend(rest.into_iter().take(size - 1));
        members.sort_unstable();
        let sum = members.iter().fold(Point::default(), |acc, &i| acc + self.walkers[i].pos);
        let c = sum * (1.0 / members.len() as f64);
        let center = Point::new(
            c.x.clamp(MEETING_MARGIN, self.cfg.area[0] - MEETING_MARGIN),
            c.y.clamp(MEETING_MARGIN, self.cfg.area[1] - MEETING_MARGIN),
        );
        let moving = self.rng.random::<f64>() < self.cfg.moving_group_ratio;
        let id = self.groups.len();
        for &m in &members {
            let w = &mut self.walkers[m];
            w.mode = Mode::Joining(id);
            w.arrived = false;
        }
        self.groups.push(Some(Group {
            members,
            center,
            moving,
            phase: Phase::Gathering,
        }));
    }

    fn walk(&mut self, i: usize, dt: f64) {
        let alpha = self.cfg.gauss_markov_alpha.powf(dt);
        let noise = (1.0 - alpha * alpha).sqrt();
        // Markov speed level, transition matrix scaled to the step length
        let w_level = self.walkers[i].level;
        let row = &self.cfg.speed_transitions[w_level];
        let draw: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut level = w_level;
        for (j, p) in row.iter().enumerate() {
            let q = if j == w_level { 1.0 - dt.min(1.0) * (1.0 - p) } else { dt.min(1.0) * p };
            acc += q;
            if draw < acc {
                level = j;
                break;
            }
        }
        let (g1, g2) = (self.gauss(), self.gauss());
        let w = &mut self.walkers[i];
        w.level = level;
        let target = self.cfg.speed_levels[level];
        w.speed = (alpha * w.speed + (1.0 - alpha) * target + noise * self.cfg.speed_sigma * g1).max(0.0);
        w.heading = alpha * w.heading + (1.0 - alpha) * w.mean_heading + noise * self.cfg.heading_sigma * g2;
        let step = Point::new(w.heading.cos(), w.heading.sin()) * (w.speed * dt);
        let (pos, reflected_x, reflected_y) = reflect(w.pos + step, self.cfg.area);
        w.pos = pos;
        if reflected_x {
            w.heading = PI - w.heading;
            w.mean_heading = PI - w.mean_heading;
        }
        if reflected_y {
            w.heading = -w.heading;
            w.mean_heading = -w.mean_heading;
        }
        if w.speed > 1e-3 {
            w.angle = wrap_angle(w.heading);
        }
    }

    fn force_params(&self, dt: f64) -> ForceParams {
        ForceParams {
            k_center: self.cfg.force_k_center,
            k_repel: self.cfg.force_k_repel,
            max_step: self.cfg.walk_speed() * dt,
        }
    }

    fn advance_group(&mut self, g: usize, now: f64, dt: f64) {
        let Some(mut group) = self.groups[g].take() else {
            return;
        };
        let walk = self.cfg.walk_speed();
        let mut translation = Point::default();
        match group.phase {
            Phase::Gathering => {
                for &m in &group.members {
                    let w = &mut self.walkers[m];
                    if w.arrived {
                        continue;
                    }
                    let to = group.center - w.pos;
                    let d = to.norm();
                    if d <= self.cfg.interaction_distance {
                        w.arrived = true;
                        w.jitter = self.jitter.map_or(0.0, |n| n.sample(&mut self.rng));
                    } else {
                        let step = to * ((walk * dt).min(d) / d);
                        w.pos = w.pos + step;
                        w.angle = wrap_angle(to.y.atan2(to.x));
                    }
                }
                if group.members.iter().all(|&m| self.walkers[m].arrived) {
                    let [lo, hi] = self.cfg.resting_duration;
                    let until = now + if hi > lo { self.rng.random_range(lo..hi) } else { lo };
                    group.phase = if group.moving {
                        Phase::Moving {
                            until,
                            heading: self.rng.random_range(0.0..TAU),
                        }
                    } else {
                        Phase::Resting { until }
                    };
                }
            }
            Phase::Resting { until } | Phase::Moving { until, .. } if now >= until => {
                for &m in &group.members {
                    let heading = self.rng.random_range(0.0..TAU);
                    let w = &mut self.walkers[m];
                    w.mode = Mode::Walking;
                    w.arrived = false;
                    w.free_at = now + REGROUP_COOLDOWN_S;
                    w.heading = heading;
                    w.mean_heading = heading;
                }
                return;
            }
            Phase::Resting { .. } => {}
            Phase::Moving { until, heading } => {
                let g_noise = self.gauss();
                let mut heading = heading + 0.1 * dt.sqrt() * g_noise;
                let step = Point::new(heading.cos(), heading.sin()) * (self.cfg.group_speed * dt);
                let mut next = group.center + step;
                let [w, h] = self.cfg.area;
                if next.x < MEETING_MARGIN || next.x > w - MEETING_MARGIN {
                    heading = PI - heading;
                    next.x = group.center.x;
                }
                if next.y < MEETING_MARGIN || next.y > h - MEETING_MARGIN {
                    heading = -heading;
                    next.y = group.center.y;
                }
                translation = next - group.center;
                group.center = next;
                group.phase = Phase::Moving { until, heading };
            }
        }
        // arrange everyone already at the meeting point
        let arrived: Vec<usize> = group.members.iter().copied().filter(|&m| self.walkers[m].arrived).collect();
        if !arrived.is_empty() {
            let pts: Vec<Point> = arrived.iter().map(|&m| self.walkers[m].pos + translation).collect();
            let pts = if pts.len() >= 2 {
                force_step(&pts, group.center, &self.force_params(dt), dt)
            } else {
                pts
            };
            for (&m, p) in arrived.iter().zip(pts) {
                let (p, _, _) = reflect(p, self.cfg.area);
                let w = &mut self.walkers[m];
                w.pos = p;
                w.angle = match group.phase {
                    Phase::Moving { heading, .. } => wrap_angle(heading),
                    _ => {
                        let to = group.center - p;
                        let base = if to.norm() > 1e-9 { to.y.atan2(to.x) } else { w.angle };
                        wrap_angle(base + w.jitter)
                    }
                };
            }
        }
        self.groups[g] = Some(group);
    }

    fn frame(&self, time: Tick) -> TraceFrame {
        TraceFrame {
            time,
            poses: self
                .walkers
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    (
                        agent_id(i),
                        Pose {
                            position: w.pos,
                            angle: w.angle,
                        },
                    )
                })
                .collect(),
        }
    }

    fn truth(&self, time: Tick) -> GroundTruthFrame {
        let mut block_of: BTreeMap<usize, usize> = BTreeMap::new();
        for (g, group) in self.groups.iter().enumerate() {
            let Some(group) = group else { continue };
            let labelled: Vec<usize> = match group.phase {
                Phase::Gathering if self.cfg.label_waiting_phase => {
                    group.members.iter().copied().filter(|&m| self.walkers[m].arrived).collect()
                }
                Phase::Gathering => Vec::new(),
                _ => group.members.clone(),
            };
            if labelled.len() >= 2 {
                block_of.extend(labelled.into_iter().map(|m| (m, g)));
            }
        }
        let mut blocks: BTreeMap<(bool, usize), Vec<AgentId>> = BTreeMap::new();
        for i in 0..self.walkers.len() {
            let key = block_of.get(&i).map_or((false, i), |&g| (true, g));
            blocks.entry(key).or_default().push(agent_id(i));
        }
        GroundTruthFrame {
            time,
            partition: Partition::new(blocks.into_values()).expect("each walker placed once"),
        }
    }
}

fn agent_id(index: usize) -> AgentId {
    AgentId(index as u64 + 1)
}

/// Mirrors a point back into `[0, w] × [0, h]`.
fn reflect(p: Point, area: [f64; 2]) -> (Point, bool, bool) {
    let fold = |v: f64, max: f64| -> (f64, bool) {
        if v < 0.0 {
            ((-v).min(max), true)
        } else if v > max {
            ((2.0 * max - v).max(0.0), true)
        } else {
            (v, false)
        }
    };
    let (x, rx) = fold(p.x, area[0]);
    let (y, ry) = fold(p.y, area[1]);
    (Point::new(x, y), rx, ry)
}

/// Simulates `duration` milliseconds at a step of `dt` milliseconds and
/// returns one frame per step, starting at time 0.
pub fn generate(config: &MobilityConfig, duration: Tick, dt: Tick) -> Result<Generated, MobilityError> {
    config.validate()?;
    if duration == 0 || dt == 0 {
        return Err(MobilityError::InvalidConfig("duration and dt must be positive".into()));
    }
    let mut sim = Sim::new(config);
    let steps = duration / dt;
    let dt_s = dt as f64 / 1000.0;
    let mut frames = Vec::with_capacity(steps as usize);
    let mut truth = Vec::with_capacity(steps as usize);
    for k in 0..steps {
        let time = k * dt;
        if k > 0 {
            sim.step(time as f64 / 1000.0, dt_s);
        }
        frames.push(sim.frame(time));
        truth.push(sim.truth(time));
    }
    Ok(Generated { frames, truth })
}
