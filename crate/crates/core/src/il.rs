//! Behavioral-cloning trajectory representations: sequential (next
//! state given current state and goal), sub-goal tree (recursive
//! midpoint prediction), and direct (every intermediate state straight
//! from start, goal and time index), all backed by the same MDN.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{mdn::mdn_train_with, ApproxError, MdnModel, MdnSample, TrainLog, TrainOpts};
use crate::env2d::{dist, DemoSet, Point, Workspace};
use crate::util::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Sequential,
    Sgt,
    Direct,
}

impl std::str::FromStr for Representation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Representation::Sequential),
            "sgt" => Ok(Representation::Sgt),
            "direct" => Ok(Representation::Direct),
            other => Err(format!("unknown representation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcConfig {
    pub representation: Representation,
    /// mixture modes M
    pub modes: usize,
    /// trajectory horizon T (power of two)
    pub horizon: usize,
    pub hidden: usize,
    pub train_steps: usize,
    pub batch: usize,
    pub stop_on_collision: bool,
    /// sequential early-stop distance to the goal
    pub goal_eps: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            representation: Representation::Sgt,
            modes: 1,
            horizon: 32,
            hidden: 64,
            train_steps: 20_000,
            batch: 50,
            stop_on_collision: false,
            goal_eps: 0.05,
            seed: 0,
        }
    }
}

impl BcConfig {
    /// Max sub-goal-tree depth: log2 of the horizon.
    pub fn max_depth(&self) -> usize {
        assert!(self.horizon.is_power_of_two());
        self.horizon.trailing_zeros() as usize
    }
}

/// Prediction output before scoring: states plus work counters.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub states: Vec<Point>,
    /// total model invocations
    pub calls: usize,
    /// longest chain of dependent model invocations
    pub depth: usize,
}

/// A scored trajectory: collision flags per segment, success, severity
/// (fraction of arclength inside obstacles) and the work counters.
#[derive(Debug, Clone)]
pub struct PredictedTrajectory {
    pub states: Vec<Point>,
    pub collision_flags: Vec<bool>,
    pub success: bool,
    pub severity: f64,
    pub calls: usize,
    pub depth: usize,
    pub wall_ms: f64,
}

fn demo_samples_sequential(demos: &DemoSet, rng: &mut ChaCha8Rng) -> MdnSample {
    let traj = &demos.trajectories[rng.gen_range(0..demos.trajectories.len())];
    let t = rng.gen_range(0..traj.horizon());
    let s = traj.states[t];
    let g = *traj.states.last().unwrap();
    (vec![s[0], s[1], g[0], g[1]], traj.states[t + 1])
}

fn demo_samples_sgt(demos: &DemoSet, rng: &mut ChaCha8Rng) -> MdnSample {
    let traj = &demos.trajectories[rng.gen_range(0..demos.trajectories.len())];
    let t_len = traj.horizon();
    // even gap >= 2 so the midpoint index is integral
    let gap = 2 * rng.gen_range(1..=t_len / 2);
    let a = rng.gen_range(0..=t_len - gap);
    let b = a + gap;
    let (sa, sb) = (traj.states[a], traj.states[b]);
    (vec![sa[0], sa[1], sb[0], sb[1]], traj.states[(a + b) / 2])
}

fn demo_samples_direct(demos: &DemoSet, rng: &mut ChaCha8Rng) -> MdnSample {
    let traj = &demos.trajectories[rng.gen_range(0..demos.trajectories.len())];
    let t_len = traj.horizon();
    let t = rng.gen_range(1..t_len);
    let s = traj.states[0];
    let g = *traj.states.last().unwrap();
    (
        vec![s[0], s[1], g[0], g[1], t as f64 / t_len as f64],
        traj.states[t],
    )
}

fn sampler_for(
    rep: Representation,
) -> fn(&DemoSet, &mut ChaCha8Rng) -> MdnSample {
    match rep {
        Representation::Sequential => demo_samples_sequential,
        Representation::Sgt => demo_samples_sgt,
        Representation::Direct => demo_samples_direct,
    }
}

/// Condition dimension for each representation.
pub fn condition_dim(rep: Representation) -> usize {
    match rep {
        Representation::Sequential | Representation::Sgt => 4,
        Representation::Direct => 5,
    }
}

/// Train the MDN for `cfg.representation` on the demo set, with early
/// stopping on a fixed validation sample.
pub fn train_bc(
    train: &DemoSet,
    val: &DemoSet,
    cfg: &BcConfig,
) -> Result<(MdnModel, TrainLog), ApproxError> {
    if train.trajectories.is_empty() {
        return Err(ApproxError::EmptyData);
    }
    let sampler = sampler_for(cfg.representation);
    let mut model = MdnModel::new(condition_dim(cfg.representation), cfg.modes, cfg.hidden, cfg.seed);
    let mut val_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xa1, 0));
    let val_samples: Vec<MdnSample> =
        (0..2000).map(|_| sampler(val, &mut val_rng)).collect();
    let opts = TrainOpts {
        steps: cfg.train_steps,
        batch: cfg.batch,
        seed: mix_seed(cfg.seed, 0xb2, 1),
        ..TrainOpts::default()
    };
    let log = mdn_train_with(
        &mut model,
        &mut |rng, batch| {
            for _ in 0..cfg.batch {
                batch.push(sampler(train, rng));
            }
        },
        &val_samples,
        &opts,
    )?;
    Ok((model, log))
}

pub fn train_sequential(
    train: &DemoSet,
    val: &DemoSet,
    cfg: &BcConfig,
) -> Result<(MdnModel, TrainLog), ApproxError> {
    let cfg = BcConfig { representation: Representation::Sequential, ..cfg.clone() };
    train_bc(train, val, &cfg)
}

pub fn train_sgt(
    train: &DemoSet,
    val: &DemoSet,
    cfg: &BcConfig,
) -> Result<(MdnModel, TrainLog), ApproxError> {
    let cfg = BcConfig { representation: Representation::Sgt, ..cfg.clone() };
    train_bc(train, val, &cfg)
}

pub fn train_direct(
    train: &DemoSet,
    val: &DemoSet,
    cfg: &BcConfig,
) -> Result<(MdnModel, TrainLog), ApproxError> {
    let cfg = BcConfig { representation: Representation::Direct, ..cfg.clone() };
    train_bc(train, val, &cfg)
}

/// Iterate next-state predictions until close to the goal or the step
/// budget runs out, then connect to the goal.
pub fn predict_sequential(
    model: &MdnModel,
    s: Point,
    g: Point,
    max_steps: usize,
    goal_eps: f64,
    seed: u64,
) -> Prediction {
    let mut states = vec![s];
    let mut cur = s;
    let mut calls = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_steps {
        if dist(cur, g) <= goal_eps {
            break;
        }
        cur = model.sample(&[cur[0], cur[1], g[0], g[1]], &mut rng);
        calls += 1;
        states.push(cur);
    }
    states.push(g);
    Prediction { states, calls, depth: calls }
}

// SmallRng: each tree node draws a single mode-selection uniform, so a
// buffered generator would spend more time refilling than sampling.
fn node_rng(seed: u64, level: usize, index: usize) -> rand::rngs::SmallRng {
    rand::rngs::SmallRng::seed_from_u64(mix_seed(seed, level as u64, index as u64))
}

/// Recursive sub-goal-tree prediction to depth `k`; mode sampling is
/// seeded per tree node so the parallel variant reproduces it exactly.
pub fn predict_sgt(model: &MdnModel, s: Point, g: Point, k: usize, seed: u64) -> Prediction {
    let mut states = Vec::with_capacity((1usize << k) + 1);
    states.push(s);
    let mut calls = 0;
    fn rec(
        model: &MdnModel,
        s1: Point,
        s2: Point,
        level: usize,
        index: usize,
        seed: u64,
        out: &mut Vec<Point>,
        calls: &mut usize,
    ) {
        if level == 0 {
            out.push(s2);
            return;
        }
        let mut rng = node_rng(seed, level, index);
        let m = model.sample(&[s1[0], s1[1], s2[0], s2[1]], &mut rng);
        *calls += 1;
        rec(model, s1, m, level - 1, 2 * index, seed, out, calls);
        rec(model, m, s2, level - 1, 2 * index + 1, seed, out, calls);
    }
    rec(model, s, g, k, 0, seed, &mut states, &mut calls);
    Prediction { states, calls, depth: k }
}

/// Level-synchronous variant: each depth level's segment queue is
/// expanded concurrently. Per-node seeds make the output bitwise equal
/// to the recursive version.
pub fn predict_sgt_parallel(
    model: &MdnModel,
    s: Point,
    g: Point,
    k: usize,
    seed: u64,
) -> Prediction {
    // queue entries: (start, end, index within level)
    let mut current: Vec<(Point, Point, usize)> = vec![(s, g, 0)];
    let mut calls = 0;
    for level in (1..=k).rev() {
        let expand = |&(s1, s2, index): &(Point, Point, usize)| {
            let mut rng = node_rng(seed, level, index);
            let m = model.sample(&[s1[0], s1[1], s2[0], s2[1]], &mut rng);
            [(s1, m, 2 * index), (m, s2, 2 * index + 1)]
        };
        let n_threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let next: Vec<[(Point, Point, usize); 2]> = if current.len() >= 2 * n_threads && n_threads > 1 {
            let chunk = current.len().div_ceil(n_threads);
            std::thread::scope(|scope| {
                let handles: Vec<_> = current
                    .chunks(chunk)
                    .map(|part| scope.spawn(move || part.iter().map(expand).collect::<Vec<_>>()))
                    .collect();
                handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
            })
        } else {
            current.iter().map(expand).collect()
        };
        calls += current.len();
        current = next.into_iter().flatten().collect();
    }
    let mut states = Vec::with_capacity(current.len() + 1);
    states.push(s);
    for &(_, end, _) in &current {
        states.push(end);
    }
    Prediction { states, calls, depth: k }
}

/// Direct prediction: T - 1 independent per-index calls, depth 1.
pub fn predict_direct(model: &MdnModel, s: Point, g: Point, t_len: usize, seed: u64) -> Prediction {
    let mut states = vec![s];
    for t in 1..t_len {
        let mut rng = node_rng(seed, 0, t);
        states.push(model.sample(
            &[s[0], s[1], g[0], g[1], t as f64 / t_len as f64],
            &mut rng,
        ));
    }
    states.push(g);
    Prediction { states, calls: t_len - 1, depth: 1 }
}

/// Score a predicted state sequence: per-segment collision flags,
/// success (no collision at all) and severity (blocked arclength over
/// total arclength). With `stop_on_collision`, the trajectory is
/// truncated at its first colliding segment and reconnected straight to
/// the goal before scoring.
pub fn assemble_and_score(
    ws: &Workspace,
    pred: &Prediction,
    stop_on_collision: bool,
    wall_ms: f64,
) -> PredictedTrajectory {
    assert!(pred.states.len() >= 2);
    let goal = *pred.states.last().unwrap();
    let mut states = pred.states.clone();
    if stop_on_collision {
        if let Some(first_bad) = states.windows(2).position(|w| ws.collides(w[0], w[1])) {
            states.truncate(first_bad + 1);
            states.push(goal);
        }
    }
    let collision_flags: Vec<bool> =
        states.windows(2).map(|w| ws.collides(w[0], w[1])).collect();
    let success = !collision_flags.iter().any(|&c| c);
    let total: f64 = states.windows(2).map(|w| dist(w[0], w[1])).sum();
    let severity = if total == 0.0 {
        0.0
    } else {
        states
            .windows(2)
            .map(|w| ws.segment_blocked_fraction(w[0], w[1]) * dist(w[0], w[1]))
            .sum::<f64>()
            / total
    };
    PredictedTrajectory {
        states,
        collision_flags,
        success,
        severity,
        calls: pred.calls,
        depth: pred.depth,
        wall_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env2d::Trajectory;

    #[test]
    #[ignore = "throughput probe, not a correctness test"]
    fn bench_predictor_walls() {
        let model = MdnModel::new(4, 2, 64, 7);
        let s = [0.1, 0.1];
        let g = [0.9, 0.9];
        let reps = 2000usize;
        let mut acc = 0usize;
        let (mut seq, mut sgt) = (0.0, 0.0);
        // alternate blocks so background load drift hits both sides equally
        for block in 0..20 {
            let t0 = std::time::Instant::now();
            for i in 0..reps / 20 {
                // goal_eps 0 forces the full 32-call budget
                acc += predict_sequential(&model, s, g, 32, 0.0, (block * 100 + i) as u64).calls;
            }
            seq += t0.elapsed().as_secs_f64() / reps as f64;
            let t1 = std::time::Instant::now();
            for i in 0..reps / 20 {
                acc += predict_sgt(&model, s, g, 5, (block * 100 + i) as u64).calls;
            }
            sgt += t1.elapsed().as_secs_f64() / reps as f64;
        }
        eprintln!(
            "seq {:.2}us/traj ({:.0}ns/call)  sgt {:.2}us/traj ({:.0}ns/call)  checksum {acc}",
            seq * 1e6,
            seq * 1e9 / 32.0,
            sgt * 1e6,
            sgt * 1e9 / 31.0,
        );
    }

    /// Straight-line demos with a fixed step toward the goal.
    fn line_demos(n: usize, t_len: usize, seed: u64) -> DemoSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajectories = (0..n)
            .map(|_| {
                let s = [rng.gen::<f64>() * 0.4, rng.gen::<f64>() * 0.4];
                let g = [0.6 + rng.gen::<f64>() * 0.4, 0.6 + rng.gen::<f64>() * 0.4];
                let states = (0..=t_len)
                    .map(|t| {
                        let a = t as f64 / t_len as f64;
                        [s[0] + a * (g[0] - s[0]), s[1] + a * (g[1] - s[1])]
                    })
                    .collect();
                Trajectory { states }
            })
            .collect();
        DemoSet { workspace: "none".into(), horizon: t_len, trajectories }
    }

    fn quick_cfg(rep: Representation) -> BcConfig {
        BcConfig {
            representation: rep,
            horizon: 8,
            hidden: 32,
            train_steps: 6000,
            ..BcConfig::default()
        }
    }

    #[test]
    fn sequential_learns_straight_step() {
        let demos = line_demos(200, 8, 1);
        let (model, _) = train_bc(&demos, &demos, &quick_cfg(Representation::Sequential)).unwrap();
        // expert moves |g - s| / T per step along the line
        let (s, g) = ([0.2, 0.2], [0.8, 0.8]);
        let mix = model.mixture(&[s[0], s[1], g[0], g[1]]);
        let step = dist(s, g) / 8.0;
        let d = [(g[0] - s[0]) / dist(s, g), (g[1] - s[1]) / dist(s, g)];
        let want = [s[0] + step * d[0], s[1] + step * d[1]];
        let got = mix.means[0];
        assert!(dist(got, want) < 0.01, "got {got:?}, want {want:?}");
    }

    #[test]
    fn sgt_learns_midpoints() {
        let demos = line_demos(200, 8, 2);
        let (model, _) = train_bc(&demos, &demos, &quick_cfg(Representation::Sgt)).unwrap();
        let (sa, sb) = ([0.25, 0.3], [0.75, 0.7]);
        let mix = model.mixture(&[sa[0], sa[1], sb[0], sb[1]]);
        let want = [0.5, 0.5];
        assert!(dist(mix.means[0], want) < 0.01, "{:?}", mix.means[0]);
    }

    #[test]
    fn direct_learns_interpolation() {
        let demos = line_demos(200, 8, 3);
        let (model, _) = train_bc(&demos, &demos, &quick_cfg(Representation::Direct)).unwrap();
        let (s, g) = ([0.2, 0.3], [0.8, 0.7]);
        for t in [2usize, 4, 6] {
            let a = t as f64 / 8.0;
            let want = [s[0] + a * (g[0] - s[0]), s[1] + a * (g[1] - s[1])];
            let mix = model.mixture(&[s[0], s[1], g[0], g[1], a]);
            assert!(dist(mix.means[0], want) < 0.02, "t={t}: {:?}", mix.means[0]);
        }
    }

    #[test]
    fn sgt_sampler_emits_even_gaps_only() {
        let demos = line_demos(5, 32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let (cond, target) = demo_samples_sgt(&demos, &mut rng);
            // on a straight line the midpoint of the two condition
            // states must equal the target exactly (integral index)
            let mid = [(cond[0] + cond[2]) / 2.0, (cond[1] + cond[3]) / 2.0];
            assert!(dist(mid, target) < 1e-9);
        }
    }

    #[test]
    fn predict_sequential_trivial_and_bounds() {
        let model = MdnModel::new(4, 1, 8, 0);
        let p = predict_sequential(&model, [0.5, 0.5], [0.5, 0.5], 32, 0.05, 0);
        assert_eq!(p.states, vec![[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(p.calls, 0);
        let p = predict_sequential(&model, [0.0, 0.0], [1.0, 1.0], 32, 0.05, 0);
        assert!(p.calls <= 32 && p.depth <= 32);
        assert_eq!(*p.states.last().unwrap(), [1.0, 1.0]);
    }

    #[test]
    fn sequential_reaches_goal_on_line_expert() {
        let demos = line_demos(200, 8, 5);
        let (model, _) = train_bc(&demos, &demos, &quick_cfg(Representation::Sequential)).unwrap();
        let (s, g) = ([0.3, 0.3], [0.7, 0.75]);
        let p = predict_sequential(&model, s, g, 32, 0.05, 1);
        assert!(p.calls < 32, "did not stop early ({} calls)", p.calls);
    }

    #[test]
    fn predict_sgt_shapes_and_counts() {
        let model = MdnModel::new(4, 2, 8, 1);
        let p0 = predict_sgt(&model, [0.1, 0.1], [0.9, 0.9], 0, 7);
        assert_eq!(p0.states, vec![[0.1, 0.1], [0.9, 0.9]]);
        assert_eq!((p0.calls, p0.depth), (0, 0));
        let p3 = predict_sgt(&model, [0.1, 0.1], [0.9, 0.9], 3, 7);
        assert_eq!(p3.states.len(), 9);
        assert_eq!((p3.calls, p3.depth), (7, 3));
        assert_eq!(p3.states[0], [0.1, 0.1]);
        assert_eq!(*p3.states.last().unwrap(), [0.9, 0.9]);
    }

    #[test]
    fn recursive_and_parallel_sgt_agree_bitwise() {
        let model = MdnModel::new(4, 4, 16, 3);
        for seed in 0..5u64 {
            let a = predict_sgt(&model, [0.05, 0.2], [0.9, 0.8], 4, seed);
            let b = predict_sgt_parallel(&model, [0.05, 0.2], [0.9, 0.8], 4, seed);
            assert_eq!(a.states, b.states);
            assert_eq!(a.calls, b.calls);
        }
    }

    #[test]
    fn predict_direct_counters() {
        let model = MdnModel::new(5, 1, 8, 2);
        let p = predict_direct(&model, [0.1, 0.1], [0.9, 0.9], 32, 0);
        assert_eq!(p.states.len(), 33);
        assert_eq!(p.calls, 31);
        assert_eq!(p.depth, 1);
    }

    #[test]
    fn score_collision_free_polyline() {
        let ws = Workspace::by_name("center").unwrap();
        let pred = Prediction {
            states: vec![[0.1, 0.1], [0.2, 0.1], [0.3, 0.1]],
            calls: 2,
            depth: 2,
        };
        let t = assemble_and_score(&ws, &pred, false, 0.0);
        assert!(t.success);
        assert_eq!(t.severity, 0.0);
        assert_eq!(t.collision_flags, vec![false, false]);
    }

    #[test]
    fn score_crossing_segment_severity() {
        let ws = Workspace::by_name("center").unwrap();
        // single segment of length 0.8 with 0.2 inside the obstacle
        let pred = Prediction { states: vec![[0.1, 0.5], [0.9, 0.5]], calls: 0, depth: 0 };
        let t = assemble_and_score(&ws, &pred, false, 0.0);
        assert!(!t.success);
        assert!((t.severity - 0.25).abs() < 1e-12);
    }

    #[test]
    fn score_degenerate_point() {
        let ws = Workspace::by_name("center").unwrap();
        let pred = Prediction { states: vec![[0.1, 0.5], [0.1, 0.5]], calls: 0, depth: 0 };
        let t = assemble_and_score(&ws, &pred, false, 0.0);
        assert!(t.success);
        assert_eq!(t.severity, 0.0);
    }

    #[test]
    fn stop_on_collision_truncates_and_reconnects() {
        let ws = Workspace::by_name("center").unwrap();
        let pred = Prediction {
            // second segment ends inside the center obstacle
            states: vec![[0.1, 0.1], [0.3, 0.1], [0.5, 0.5], [0.9, 0.9]],
            calls: 3,
            depth: 3,
        };
        let t = assemble_and_score(&ws, &pred, true, 0.0);
        // truncated before the first colliding segment, goal appended
        assert_eq!(t.states, vec![[0.1, 0.1], [0.3, 0.1], [0.9, 0.9]]);
    }

    #[test]
    fn severity_zero_iff_success_without_stopping() {
        let ws = Workspace::by_name("center").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let states: Vec<Point> =
                (0..4).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            let pred = Prediction { states, calls: 0, depth: 0 };
            let t = assemble_and_score(&ws, &pred, false, 0.0);
            assert!(t.severity >= 0.0 && t.severity <= 1.0);
            if t.success {
                assert_eq!(t.severity, 0.0);
            } else {
                // colliding segments may only touch the boundary, but a
                // strictly crossing one must register positive severity
                let crosses = t.states.windows(2).any(|w| {
                    ws.segment_blocked_fraction(w[0], w[1]) > 1e-9
                });
                assert_eq!(crosses, t.severity > 1e-12);
            }
        }
    }
}
