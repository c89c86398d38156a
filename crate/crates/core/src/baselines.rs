//! Baseline batch-RL algorithms: goal-conditioned fitted-Q with a
//! universal (goal-input) KNN Q-function, and the approximate
//! Floyd-Warshall relaxation whose values collapse under function
//! approximation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{knn_fit, KnnModel};
use crate::env2d::{dist, Point, TransitionDataset, N_ACTIONS};
use crate::stdp::{fit_v0, StdpError};

/// Goal-conditioned Q-function over (s, u, g) in R^5; the action enters
/// the KNN metric as the scalar u/7 in [0, 1].
#[derive(Serialize, Deserialize)]
pub struct QModel {
    pub knn: KnnModel,
    pub delta: f64,
}

#[inline]
fn action_coord(u: u8) -> f64 {
    u as f64 / (N_ACTIONS - 1) as f64
}

impl QModel {
    pub fn value(&self, s: Point, u: u8, g: Point) -> f64 {
        self.knn.predict_scalar(&[s[0], s[1], action_coord(u), g[0], g[1]])
    }
}

#[derive(Debug, Clone)]
pub struct FittedQConfig {
    pub k_iters: usize,
    pub delta: f64,
    pub n_goal_targets: usize,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for FittedQConfig {
    fn default() -> Self {
        FittedQConfig {
            k_iters: 20,
            delta: 0.15,
            n_goal_targets: 10_000,
            k_neighbors: 5,
            seed: 0,
        }
    }
}

/// Fitted-Q with universal function approximation: initialize on the
/// observed one-step costs, then repeatedly regress Bellman targets
/// `c + min over u' of Q(s', u', g)` (zeroed once `|s' - g| <= delta`)
/// for random goals drawn from the dataset states.
pub fn fitted_q(dataset: &TransitionDataset, cfg: &FittedQConfig) -> Result<QModel, StdpError> {
    assert!(!dataset.is_empty());
    assert!(cfg.delta > 0.0);
    let mut points = Vec::with_capacity(dataset.len() * 5);
    let mut targets = Vec::with_capacity(dataset.len());
    for t in &dataset.tuples {
        points.extend_from_slice(&[t.s[0], t.s[1], action_coord(t.u), t.s_next[0], t.s_next[1]]);
        targets.push(t.c);
    }
    let mut q = QModel {
        knn: knn_fit(points, targets, 5, 1, cfg.k_neighbors)?,
        delta: cfg.delta,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.k_iters {
        let mut points = Vec::with_capacity(cfg.n_goal_targets * 5);
        let mut targets = Vec::with_capacity(cfg.n_goal_targets);
        for _ in 0..cfg.n_goal_targets {
            let t = &dataset.tuples[rng.gen_range(0..dataset.len())];
            let g = dataset.tuples[rng.gen_range(0..dataset.len())].s;
            let future = if dist(t.s_next, g) > cfg.delta {
                (0..N_ACTIONS).map(|u| q.value(t.s_next, u, g)).fold(f64::INFINITY, f64::min)
            } else {
                0.0
            };
            let target = t.c + future;
            debug_assert!(target >= 0.0);
            points.extend_from_slice(&[t.s[0], t.s[1], action_coord(t.u), g[0], g[1]]);
            targets.push(target);
        }
        q.knn = knn_fit(points, targets, 5, 1, cfg.k_neighbors)?;
    }
    Ok(q)
}

/// Greedy argmin over the eight actions; ties keep the smallest index.
pub fn q_greedy_action(q: &QModel, s: Point, g: Point) -> u8 {
    let mut best = 0u8;
    let mut best_v = q.value(s, 0, g);
    for u in 1..N_ACTIONS {
        let v = q.value(s, u, g);
        if v < best_v {
            best_v = v;
            best = u;
        }
    }
    best
}

/// Single value model refit every iteration; no depth index.
pub struct FwValueModel {
    pub knn: KnnModel,
}

#[derive(Debug, Clone)]
pub struct ApproxFwConfig {
    pub k_iters: usize,
    pub c_max: f64,
    pub n_goal_targets: usize,
    pub k_neighbors: usize,
    /// refit zero-cost self pairs each iteration (Algorithm line the
    /// instability analysis toggles)
    pub fit_self: bool,
    pub seed: u64,
}

impl Default for ApproxFwConfig {
    fn default() -> Self {
        ApproxFwConfig {
            k_iters: 8,
            c_max: 10.0,
            n_goal_targets: 10_000,
            k_neighbors: 5,
            fit_self: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FwDispersionLog {
    /// (iteration, standard deviation of V over the fixed probe set);
    /// iteration 0 is the initial fit
    pub rows: Vec<(usize, f64)>,
}

pub fn probe_std(model: &KnnModel, probes: &[(Point, Point)]) -> f64 {
    let vals: Vec<f64> = probes
        .iter()
        .map(|&(s, g)| model.predict_scalar(&[s[0], s[1], g[0], g[1]]))
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
}

/// Fixed probe pairs for dispersion logging.
pub fn probe_pairs(dataset: &TransitionDataset, n: usize, seed: u64) -> Vec<(Point, Point)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (
                dataset.tuples[rng.gen_range(0..dataset.len())].s,
                dataset.tuples[rng.gen_range(0..dataset.len())].s,
            )
        })
        .collect()
}

/// Approximate Floyd-Warshall: initialize exactly like the STDP V_0,
/// then refit relaxation targets
/// `min { V(s, g), V(s, s_m) + V(s_m, g) }` on random triples, plus
/// zero-cost self pairs. Logs the probe-set dispersion per iteration.
pub fn approx_fw(
    dataset: &TransitionDataset,
    cfg: &ApproxFwConfig,
) -> Result<(FwValueModel, FwDispersionLog), StdpError> {
    assert!(!dataset.is_empty());
    let n_random = dataset.len() / 5;
    let n_self = dataset.len() / 5;
    let mut v = fit_v0(dataset, cfg.c_max, n_random, n_self, cfg.k_neighbors, cfg.seed)?;
    let probes = probe_pairs(dataset, 1000, cfg.seed.wrapping_add(77));
    let mut log = FwDispersionLog { rows: vec![(0, probe_std(&v, &probes))] };
    let pool: Vec<Point> = dataset.tuples.iter().map(|t| t.s).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    for iter in 1..=cfg.k_iters {
        let mut points = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..cfg.n_goal_targets {
            let s = pool[rng.gen_range(0..pool.len())];
            let m = pool[rng.gen_range(0..pool.len())];
            let g = pool[rng.gen_range(0..pool.len())];
            let direct = v.predict_scalar(&[s[0], s[1], g[0], g[1]]);
            let via = v.predict_scalar(&[s[0], s[1], m[0], m[1]])
                + v.predict_scalar(&[m[0], m[1], g[0], g[1]]);
            let target = direct.min(via);
            // the relaxation never raises a value
            debug_assert!(target <= direct + 1e-12);
            points.extend_from_slice(&[s[0], s[1], g[0], g[1]]);
            targets.push(target);
        }
        if cfg.fit_self {
            // same self-pair volume as the initial fit: dense diagonal
            // zeros are what drags nearby values down each refit
            for _ in 0..dataset.len() / 5 {
                let s = pool[rng.gen_range(0..pool.len())];
                points.extend_from_slice(&[s[0], s[1], s[0], s[1]]);
                targets.push(0.0);
            }
        }
        v = knn_fit(points, targets, 4, 1, cfg.k_neighbors)?;
        log.rows.push((iter, probe_std(&v, &probes)));
    }
    Ok((FwValueModel { knn: v }, log))
}
