//! Approximate sub-goal-tree dynamic programming with KNN value
//! approximation. Level 0 is fitted to observed transition costs plus
//! high-cost random pairs and zero-cost self pairs; each later level
//! regresses grid-search targets
//! `min over s_m of V_{k-1}(s, s_m) + V_{k-1}(s_m, g)`
//! onto fresh random goal pairs.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{knn_fit, ApproxError, KnnModel};
use crate::env2d::{Point, TransitionDataset};
use crate::graph::SubGoalTree;

#[derive(Debug, Error)]
pub enum StdpError {
    #[error("C_max {c_max} must exceed the maximum observed cost {max_c}")]
    BadCmax { c_max: f64, max_c: f64 },
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("stack snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("stack snapshot format: {0}")]
    Format(#[from] serde_json::Error),
}

pub const DEFAULT_GRID_RES: usize = 50;

/// Discrete midpoint set searched by the minimization; by default the
/// centers of a 50x50 lattice over the unit square, in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MidpointGrid {
    pub points: Vec<Point>,
    /// lattice resolution when uniform, None for a custom point set
    pub res: Option<usize>,
}

impl MidpointGrid {
    pub fn uniform(res: usize) -> MidpointGrid {
        let mut points = Vec::with_capacity(res * res);
        for row in 0..res {
            for col in 0..res {
                points.push([
                    (col as f64 + 0.5) / res as f64,
                    (row as f64 + 0.5) / res as f64,
                ]);
            }
        }
        MidpointGrid { points, res: Some(res) }
    }

    pub fn from_points(points: Vec<Point>) -> MidpointGrid {
        MidpointGrid { points, res: None }
    }

    /// Lattice restricted to the workspace's free space. Midpoints are
    /// candidate states, and states never sit inside obstacles; keeping
    /// blocked cells would let the minimization tunnel through walls
    /// (the regressor has no in-obstacle data and parrots boundary
    /// values there).
    pub fn free_space(ws: &crate::env2d::Workspace, res: usize) -> MidpointGrid {
        let mut grid = MidpointGrid::uniform(res);
        grid.points.retain(|&p| ws.in_free_space(p));
        grid.res = None;
        grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for MidpointGrid {
    fn default() -> Self {
        MidpointGrid::uniform(DEFAULT_GRID_RES)
    }
}

#[derive(Debug, Clone)]
pub struct StdpConfig {
    /// number of value-iteration levels K (stack holds V_0..V_K)
    pub k_max: usize,
    pub c_max: f64,
    /// high-cost random pairs in the V_0 fit; None = |dataset| / 5
    pub n_random: Option<usize>,
    /// zero-cost self pairs in the V_0 fit; None = |dataset| / 5
    pub n_self: Option<usize>,
    pub n_goal_pairs: usize,
    pub k_neighbors: usize,
    /// fit each level on every ordered pair of distinct dataset states
    /// instead of sampling; used by the discrete-graph bridge
    pub exhaustive_goal_pairs: bool,
    pub seed: u64,
}

impl Default for StdpConfig {
    fn default() -> Self {
        StdpConfig {
            k_max: 5,
            c_max: 10.0,
            n_random: None,
            n_self: None,
            n_goal_pairs: 10_000,
            k_neighbors: 5,
            exhaustive_goal_pairs: false,
            seed: 0,
        }
    }
}

/// Fitted value functions V_0..V_K over (s, s') in R^4.
pub struct ApproxValueStack {
    pub levels: Vec<KnnModel>,
    pub c_max: f64,
    pub grid: MidpointGrid,
}

impl ApproxValueStack {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn value(&self, k: usize, s: Point, g: Point) -> f64 {
        self.levels[k].predict_scalar(&[s[0], s[1], g[0], g[1]])
    }
}

/// States appearing as `s` in the dataset; the random-state pool.
fn state_pool(dataset: &TransitionDataset) -> Vec<Point> {
    dataset.tuples.iter().map(|t| t.s).collect()
}

/// Fit V_0: observed transition costs, C_max on random pairs, zero on
/// self pairs. Collision tuples (s' = s) are dropped from the
/// transition set; they would pin self pairs at the collision cost and
/// contradict V(s, s) = 0.
pub fn fit_v0(
    dataset: &TransitionDataset,
    c_max: f64,
    n_random: usize,
    n_self: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<KnnModel, StdpError> {
    if dataset.is_empty() {
        return Err(ApproxError::EmptyData.into());
    }
    let mut points = Vec::new();
    let mut targets = Vec::new();
    let mut max_c = 0.0f64;
    for t in &dataset.tuples {
        if t.s_next == t.s {
            continue;
        }
        max_c = max_c.max(t.c);
        points.extend_from_slice(&[t.s[0], t.s[1], t.s_next[0], t.s_next[1]]);
        targets.push(t.c);
    }
    if c_max <= max_c {
        return Err(StdpError::BadCmax { c_max, max_c });
    }
    let pool = state_pool(dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random {
        let a = pool[rng.gen_range(0..pool.len())];
        let b = pool[rng.gen_range(0..pool.len())];
        points.extend_from_slice(&[a[0], a[1], b[0], b[1]]);
        targets.push(c_max);
    }
    for _ in 0..n_self {
        let a = pool[rng.gen_range(0..pool.len())];
        points.extend_from_slice(&[a[0], a[1], a[0], a[1]]);
        targets.push(0.0);
    }
    Ok(knn_fit(points, targets, 4, 1, k_neighbors)?)
}

/// Exhaustive minimization over the grid; ties keep the first
/// (row-major) grid point.
pub fn min_over_grid(v_prev: &KnnModel, s: Point, g: Point, grid: &MidpointGrid) -> (Point, f64) {
    let mut best = f64::INFINITY;
    let mut best_m = grid.points[0];
    for &m in &grid.points {
        // both summands are non-negative, so once the first alone
        // reaches the running best the pair cannot improve on it
        let left = v_prev.predict_scalar(&[s[0], s[1], m[0], m[1]]);
        if left >= best {
            continue;
        }
        let v = left + v_prev.predict_scalar(&[m[0], m[1], g[0], g[1]]);
        if v < best {
            best = v;
            best_m = m;
        }
    }
    (best_m, best)
}

/// Run the full approximate STDP loop.
pub fn approx_stdp(
    dataset: &TransitionDataset,
    grid: MidpointGrid,
    cfg: &StdpConfig,
) -> Result<ApproxValueStack, StdpError> {
    assert!(cfg.k_max >= 1);
    let n_random = cfg.n_random.unwrap_or(dataset.len() / 5);
    let n_self = cfg.n_self.unwrap_or(dataset.len() / 5);
    let v0 = fit_v0(dataset, cfg.c_max, n_random, n_self, cfg.k_neighbors, cfg.seed)?;
    let mut levels = vec![v0];
    let pool = state_pool(dataset);
    let exhaustive_pairs: Vec<(Point, Point)> = if cfg.exhaustive_goal_pairs {
        let mut uniq: Vec<Point> = Vec::new();
        for &p in &pool {
            if !uniq.contains(&p) {
                uniq.push(p);
            }
        }
        let mut pairs = Vec::with_capacity(uniq.len() * uniq.len());
        for &a in &uniq {
            for &b in &uniq {
                pairs.push((a, b));
            }
        }
        pairs
    } else {
        Vec::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    for k in 1..=cfg.k_max {
        let prev = levels.last().unwrap();
        let pairs: Vec<(Point, Point)> = if cfg.exhaustive_goal_pairs {
            exhaustive_pairs.clone()
        } else {
            (0..cfg.n_goal_pairs)
                .map(|_| {
                    (
                        pool[rng.gen_range(0..pool.len())],
                        pool[rng.gen_range(0..pool.len())],
                    )
                })
                .collect()
        };
        let mut points = Vec::with_capacity(pairs.len() * 4);
        let mut targets = Vec::with_capacity(pairs.len());
        let bound = (1u64 << k) as f64 * cfg.c_max;
        for &(s, g) in &pairs {
            let (_, v) = min_over_grid(prev, s, g, &grid);
            assert!(
                (0.0..=bound).contains(&v),
                "level {k} target {v} outside [0, {bound}]"
            );
            points.extend_from_slice(&[s[0], s[1], g[0], g[1]]);
            targets.push(v);
        }
        levels.push(knn_fit(points, targets, 4, 1, cfg.k_neighbors)?);
    }
    Ok(ApproxValueStack { levels, c_max: cfg.c_max, grid })
}

/// Recursive sub-goal extraction: the midpoint of `(s, g)` at level `d`
/// is the grid argmin under the level d-1 value function.
pub fn extract_tree_approx(
    stack: &ApproxValueStack,
    s: Point,
    g: Point,
    depth: usize,
) -> SubGoalTree<Point> {
    assert!(depth <= stack.depth());
    let mut flat = Vec::with_capacity((1usize << depth) + 1);
    flat.push(s);
    fn rec(stack: &ApproxValueStack, s: Point, g: Point, d: usize, out: &mut Vec<Point>) {
        if d == 0 {
            out.push(g);
            return;
        }
        let (m, _) = min_over_grid(&stack.levels[d - 1], s, g, &stack.grid);
        rec(stack, s, m, d - 1, out);
        rec(stack, m, g, d - 1, out);
    }
    rec(stack, s, g, depth, &mut flat);
    SubGoalTree::new(depth, flat)
}

/// V_k(cell, g) over the stack's grid, in grid order.
pub fn heatmap_values(stack: &ApproxValueStack, g: Point, k: usize) -> Vec<f64> {
    stack.grid.points.iter().map(|&c| stack.value(k, c, g)).collect()
}

/// Fraction of grid cells with V_k(cell, g) below `threshold`.
pub fn reachable_fraction(stack: &ApproxValueStack, g: Point, k: usize, threshold: f64) -> f64 {
    let vals = heatmap_values(stack, g, k);
    vals.iter().filter(|&&v| v < threshold).count() as f64 / vals.len() as f64
}

#[derive(Serialize, Deserialize)]
struct StackManifest {
    #[serde(rename = "K")]
    k_max: usize,
    #[serde(rename = "C_max")]
    c_max: f64,
    grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_points: Option<Vec<Point>>,
}

/// One KnnModel JSON per level plus a manifest.
pub fn save_stack(stack: &ApproxValueStack, dir: &Path) -> Result<(), StdpError> {
    std::fs::create_dir_all(dir)?;
    let manifest = StackManifest {
        k_max: stack.depth(),
        c_max: stack.c_max,
        grid: stack.grid.res.unwrap_or(0),
        grid_points: if stack.grid.res.is_none() {
            Some(stack.grid.points.clone())
        } else {
            None
        },
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    for (k, model) in stack.levels.iter().enumerate() {
        std::fs::write(dir.join(format!("v{k}.json")), serde_json::to_string(model)?)?;
    }
    Ok(())
}

pub fn load_stack(dir: &Path) -> Result<ApproxValueStack, StdpError> {
    let manifest: StackManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let grid = match manifest.grid_points {
        Some(points) => MidpointGrid::from_points(points),
        None => MidpointGrid::uniform(manifest.grid),
    };
    let mut levels = Vec::with_capacity(manifest.k_max + 1);
    for k in 0..=manifest.k_max {
        let model: KnnModel =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("v{k}.json")))?)?;
        levels.push(model);
    }
    Ok(ApproxValueStack { levels, c_max: manifest.c_max, grid })
}
