//! Continuous 2D point-robot environment: axis-aligned rectangular
//! obstacles in the unit square, eight-direction step dynamics with a
//! constant free-space cost and a large collision cost, transition
//! sampling, and expert demonstrations from an internal grid planner.

mod planner;

pub use planner::{expert_plan, Planner};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

pub const STEP_LEN: f64 = 0.025;
pub const FREE_COST: f64 = 0.025;
pub const COLLISION_COST: f64 = 10.0;
pub const N_ACTIONS: u8 = 8;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("state ({0}, {1}) is not in free space")]
    InvalidState(f64, f64),
    #[error("no collision-free path from ({0:?}) to ({1:?})")]
    Unreachable(Point, Point),
    #[error("invalid workspace: {0}")]
    BadWorkspace(String),
    #[error("free-space rejection sampling failed (workspace nearly fully blocked?)")]
    SamplingExhausted,
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Closed axis-aligned rectangle; boundary contact counts as inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(a: [f64; 4]) -> Self {
        Rect { x_min: a[0], y_min: a[1], x_max: a[2], y_max: a[3] }
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x_min, r.y_min, r.x_max, r.y_max]
    }
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn inflate(&self, m: f64) -> Rect {
        Rect {
            x_min: (self.x_min - m).max(0.0),
            y_min: (self.y_min - m).max(0.0),
            x_max: (self.x_max + m).min(1.0),
            y_max: (self.y_max + m).min(1.0),
        }
    }

    /// Parameter interval of `p + t (q - p)`, `t in [0, 1]`, inside the
    /// closed rectangle, or None when the segment misses it.
    pub fn clip_segment(&self, p: Point, q: Point) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for axis in 0..2 {
            let (lo, hi) = if axis == 0 {
                (self.x_min, self.x_max)
            } else {
                (self.y_min, self.y_max)
            };
            let d = q[axis] - p[axis];
            if d.abs() < 1e-15 {
                if p[axis] < lo || p[axis] > hi {
                    return None;
                }
            } else {
                let (mut a, mut b) = ((lo - p[axis]) / d, (hi - p[axis]) / d);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }
}

/// Unit-square workspace with rectangular obstacles. Free space is
/// `[0,1]^2` minus the (closed) obstacles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Workspace {
    pub name: String,
    pub obstacles: Vec<Rect>,
}

impl Workspace {
    pub fn new(name: &str, obstacles: Vec<Rect>) -> Result<Self, EnvError> {
        for r in &obstacles {
            let ok = 0.0 <= r.x_min
                && r.x_min < r.x_max
                && r.x_max <= 1.0
                && 0.0 <= r.y_min
                && r.y_min < r.y_max
                && r.y_max <= 1.0;
            if !ok {
                return Err(EnvError::BadWorkspace(format!("bad obstacle {r:?}")));
            }
            if r.x_min == 0.0 && r.y_min == 0.0 && r.x_max == 1.0 && r.y_max == 1.0 {
                return Err(EnvError::BadWorkspace("obstacle covers the whole square".into()));
            }
        }
        Ok(Workspace { name: name.to_string(), obstacles })
    }

    /// The four named benchmark workspaces.
    pub fn by_name(name: &str) -> Result<Self, EnvError> {
        let obstacles: Vec<Rect> = match name {
            // single block in the middle of the square
            "center" => vec![[0.4, 0.4, 0.6, 0.6].into()],
            // two offset bars forming an S-shaped corridor
            "rl" => vec![[0.2, 0.0, 0.45, 0.7].into(), [0.55, 0.3, 0.8, 1.0].into()],
            // one wall with a single gap: unimodal left-to-right motion
            "simple" => vec![[0.45, 0.0, 0.55, 0.4].into(), [0.45, 0.6, 0.55, 1.0].into()],
            // two walls, two gaps each: four route combinations
            "hard" => vec![
                [0.3, 0.0, 0.35, 0.15].into(),
                [0.3, 0.3, 0.35, 0.7].into(),
                [0.3, 0.85, 0.35, 1.0].into(),
                [0.65, 0.0, 0.7, 0.15].into(),
                [0.65, 0.3, 0.7, 0.7].into(),
                [0.65, 0.85, 0.7, 1.0].into(),
            ],
            other => return Err(EnvError::BadWorkspace(format!("unknown workspace '{other}'"))),
        };
        Workspace::new(name, obstacles)
    }

    pub fn in_obstacle(&self, p: Point) -> bool {
        self.obstacles.iter().any(|r| r.contains(p))
    }

    pub fn in_free_space(&self, p: Point) -> bool {
        (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]) && !self.in_obstacle(p)
    }

    /// True iff the closed segment `p -> q` touches any obstacle.
    pub fn collides(&self, p: Point, q: Point) -> bool {
        self.obstacles.iter().any(|r| r.clip_segment(p, q).is_some())
    }

    /// Fraction of the segment's length lying inside obstacles
    /// (overlapping rectangles are not double counted).
    pub fn segment_blocked_fraction(&self, p: Point, q: Point) -> f64 {
        let mut intervals: Vec<(f64, f64)> = self
            .obstacles
            .iter()
            .filter_map(|r| r.clip_segment(p, q))
            .collect();
        if intervals.is_empty() {
            return 0.0;
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let (mut lo, mut hi) = intervals[0];
        for &(a, b) in &intervals[1..] {
            if a > hi {
                covered += hi - lo;
                lo = a;
                hi = b;
            } else {
                hi = hi.max(b);
            }
        }
        covered += hi - lo;
        covered
    }

    pub fn sample_free(&self, rng: &mut impl Rng) -> Result<Point, EnvError> {
        for _ in 0..100_000 {
            let p = [rng.gen::<f64>(), rng.gen::<f64>()];
            if self.in_free_space(p) {
                return Ok(p);
            }
        }
        Err(EnvError::SamplingExhausted)
    }
}

/// Unit direction of action `u`, at angle `45 deg * u`.
pub fn action_dir(u: u8) -> Point {
    let theta = std::f64::consts::FRAC_PI_4 * u as f64;
    [theta.cos(), theta.sin()]
}

/// One environment step: move 0.025 in direction `u` for cost 0.025, or
/// stay put with cost 10 when the move would leave free space.
pub fn step(ws: &Workspace, s: Point, u: u8) -> Result<(Point, f64), EnvError> {
    assert!(u < N_ACTIONS, "action index out of range");
    if !ws.in_free_space(s) {
        return Err(EnvError::InvalidState(s[0], s[1]));
    }
    let d = action_dir(u);
    let cand = [s[0] + STEP_LEN * d[0], s[1] + STEP_LEN * d[1]];
    let inside = (0.0..=1.0).contains(&cand[0]) && (0.0..=1.0).contains(&cand[1]);
    if inside && !ws.collides(s, cand) {
        Ok((cand, FREE_COST))
    } else {
        Ok((s, COLLISION_COST))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionTuple {
    pub s: Point,
    pub u: u8,
    pub c: f64,
    pub s_next: Point,
}

#[derive(Debug, Clone, Default)]
pub struct TransitionDataset {
    pub tuples: Vec<TransitionTuple>,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn to_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["sx", "sy", "u", "c", "spx", "spy"])?;
        for t in &self.tuples {
            wtr.write_record([
                t.s[0].to_string(),
                t.s[1].to_string(),
                t.u.to_string(),
                t.c.to_string(),
                t.s_next[0].to_string(),
                t.s_next[1].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_csv<R: std::io::Read>(r: R) -> anyhow::Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut tuples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            tuples.push(TransitionTuple {
                s: [rec[0].parse()?, rec[1].parse()?],
                u: rec[2].parse()?,
                c: rec[3].parse()?,
                s_next: [rec[4].parse()?, rec[5].parse()?],
            });
        }
        Ok(TransitionDataset { tuples })
    }
}

/// Uniform states (rejection sampled over free space) and uniform
/// actions; deterministic given `seed`.
pub fn sample_transitions(
    ws: &Workspace,
    n: usize,
    seed: u64,
) -> Result<TransitionDataset, EnvError> {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples = Vec::with_capacity(n);
    for _ in 0..n {
        let s = ws.sample_free(&mut rng)?;
        let u = rng.gen_range(0..N_ACTIONS);
        let (s_next, c) = step(ws, s, u)?;
        tuples.push(TransitionTuple { s, u, c, s_next });
    }
    Ok(TransitionDataset { tuples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Point>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn arclength(&self) -> f64 {
        self.states.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

/// Arclength-uniform resampling to exactly `t_out + 1` states with the
/// endpoints preserved bitwise.
pub fn resample(traj: &Trajectory, t_out: usize) -> Trajectory {
    assert!(t_out >= 1 && t_out.is_power_of_two(), "horizon must be a power of two");
    assert!(!traj.states.is_empty());
    let src = &traj.states;
    let first = src[0];
    let last = *src.last().unwrap();
    let total = traj.arclength();
    if total == 0.0 || src.len() == 1 {
        let mut states = vec![first; t_out + 1];
        states[t_out] = last;
        return Trajectory { states };
    }
    let mut cum = Vec::with_capacity(src.len());
    cum.push(0.0);
    for w in src.windows(2) {
        cum.push(cum.last().unwrap() + dist(w[0], w[1]));
    }
    let mut states = Vec::with_capacity(t_out + 1);
    states.push(first);
    let mut seg = 0usize;
    for t in 1..t_out {
        let target = total * t as f64 / t_out as f64;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let alpha = if seg_len > 0.0 { (target - cum[seg]) / seg_len } else { 0.0 };
        let (a, b) = (src[seg], src[seg + 1]);
        states.push([a[0] + alpha * (b[0] - a[0]), a[1] + alpha * (b[1] - a[1])]);
    }
    states.push(last);
    Trajectory { states }
}

#[derive(Debug, Clone)]
pub struct DemoSet {
    pub workspace: String,
    pub horizon: usize,
    pub trajectories: Vec<Trajectory>,
}

impl DemoSet {
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["traj_id", "t", "x", "y"])?;
        for (id, traj) in self.trajectories.iter().enumerate() {
            for (t, s) in traj.states.iter().enumerate() {
                wtr.write_record([
                    id.to_string(),
                    t.to_string(),
                    s[0].to_string(),
                    s[1].to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_csv<R: std::io::Read>(r: R, workspace: &str) -> anyhow::Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut trajectories: Vec<Trajectory> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id: usize = rec[0].parse()?;
            if id == trajectories.len() {
                trajectories.push(Trajectory { states: Vec::new() });
            }
            trajectories[id].states.push([rec[2].parse()?, rec[3].parse()?]);
        }
        let horizon = trajectories.first().map(|t| t.horizon()).unwrap_or(0);
        Ok(DemoSet { workspace: workspace.to_string(), horizon, trajectories })
    }
}

/// Start/goal room constraint used by the left-to-right workspaces.
fn sample_endpoint(
    ws: &Workspace,
    rng: &mut impl Rng,
    side: Option<(f64, f64)>,
) -> Result<Point, EnvError> {
    match side {
        None => ws.sample_free(rng),
        Some((lo, hi)) => {
            for _ in 0..100_000 {
                let p = [lo + rng.gen::<f64>() * (hi - lo), rng.gen::<f64>()];
                if ws.in_free_space(p) {
                    return Ok(p);
                }
            }
            Err(EnvError::SamplingExhausted)
        }
    }
}

/// Expert demonstrations: sampled start/goal pairs, planned, then
/// resampled to a fixed power-of-two horizon. For the "simple" and
/// "hard" workspaces the start is drawn in the left room and the goal
/// in the right room.
pub fn generate_demos(
    ws: &Workspace,
    n: usize,
    t_out: usize,
    seed: u64,
) -> Result<DemoSet, EnvError> {
    assert!(n >= 1);
    let (start_side, goal_side) = match ws.name.as_str() {
        "simple" => (Some((0.0, 0.45)), Some((0.55, 1.0))),
        "hard" => (Some((0.0, 0.3)), Some((0.7, 1.0))),
        _ => (None, None),
    };
    let planner = Planner::new(ws, planner::DEMO_INFLATION);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(n);
    while trajectories.len() < n {
        let s = sample_endpoint(ws, &mut rng, start_side)?;
        let g = sample_endpoint(ws, &mut rng, goal_side)?;
        let raw = match planner.plan(s, g) {
            Ok(t) => t,
            // endpoints inside the inflated margin: draw a fresh pair
            Err(EnvError::Unreachable(..)) => continue,
            Err(e) => return Err(e),
        };
        let demo = resample(&raw, t_out);
        // chords of the resampled path may cut corners; reject those
        let ok = demo.states.windows(2).all(|w| !ws.collides(w[0], w[1]));
        if ok {
            trajectories.push(demo);
        }
    }
    Ok(DemoSet { workspace: ws.name.clone(), horizon: t_out, trajectories })
}
