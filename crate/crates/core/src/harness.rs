//! Evaluation and reporting: sub-goal tracking rollouts, RL and IL
//! metric tables, heatmap export, and run configuration plumbing.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{InverseModel, MdnModel};
use crate::baselines::{q_greedy_action, QModel};
use crate::env2d::{dist, step, Point, Workspace, COLLISION_COST};
use crate::graph::SubGoalTree;
use crate::il::{
    assemble_and_score, predict_direct, predict_sequential, predict_sgt, BcConfig, Representation,
};
use crate::stdp::{extract_tree_approx, ApproxValueStack, MidpointGrid};

pub const SUBGOAL_THRESHOLD: f64 = 0.15;
pub const PER_SUBGOAL_BUDGET: usize = 40;
pub const EPISODE_BUDGET: usize = 800;

/// Low-level action selector used when tracking sub-goals.
pub enum Controller<'a> {
    InverseModel(&'a InverseModel),
    QGreedy(&'a QModel),
}

impl Controller<'_> {
    fn act(&self, s: Point, target: Point) -> u8 {
        match self {
            Controller::InverseModel(im) => {
                // desired next state: one step toward the target
                let d = dist(s, target);
                let scale = (crate::env2d::STEP_LEN / d).min(1.0);
                let want = [s[0] + scale * (target[0] - s[0]), s[1] + scale * (target[1] - s[1])];
                crate::approx::inverse_query(im, s, want)
            }
            Controller::QGreedy(q) => q_greedy_action(q, s, target),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeRecord {
    pub final_dist: f64,
    pub collided: bool,
    pub steps: usize,
}

/// Visit the tree's flattened sub-goals in order, applying controller
/// actions until each is reached within `threshold` or its step budget
/// runs out; a total episode budget caps the rollout.
pub fn track_subgoals(
    ws: &Workspace,
    tree: &SubGoalTree<Point>,
    controller: &Controller,
    threshold: f64,
    per_subgoal_budget: usize,
    episode_budget: usize,
) -> EpisodeRecord {
    let goal = *tree.flattening.last().unwrap();
    let mut s = tree.flattening[0];
    let mut steps = 0;
    let mut collided = false;
    for &sub in &tree.flattening[1..] {
        let mut local = 0;
        while dist(s, sub) > threshold && local < per_subgoal_budget && steps < episode_budget {
            let u = controller.act(s, sub);
            let (s2, c) = step(ws, s, u).expect("state inside unit square");
            if c >= COLLISION_COST {
                collided = true;
            }
            s = s2;
            local += 1;
            steps += 1;
        }
        if steps >= episode_budget {
            break;
        }
    }
    EpisodeRecord { final_dist: dist(s, goal), collided, steps }
}

/// Greedy Q rollout straight toward the goal (no sub-goals).
pub fn rollout_q(
    ws: &Workspace,
    q: &QModel,
    s0: Point,
    g: Point,
    threshold: f64,
    episode_budget: usize,
) -> EpisodeRecord {
    let mut s = s0;
    let mut steps = 0;
    let mut collided = false;
    while dist(s, g) > threshold && steps < episode_budget {
        let u = q_greedy_action(q, s, g);
        let (s2, c) = step(ws, s, u).expect("state inside unit square");
        if c >= COLLISION_COST {
            collided = true;
        }
        s = s2;
        steps += 1;
    }
    EpisodeRecord { final_dist: dist(s, g), collided, steps }
}

#[derive(Debug, Clone, Serialize)]
pub struct RlRow {
    pub method: String,
    pub avg_dist: f64,
    pub avg_collision_rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RlEvalReport {
    pub rows: Vec<RlRow>,
}

/// Shared evaluation pairs: a pure function of (workspace, seed).
pub fn eval_pairs(ws: &Workspace, n: usize, seed: u64) -> Vec<(Point, Point)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = ws.sample_free(&mut rng).expect("free space exists");
            let g = ws.sample_free(&mut rng).expect("free space exists");
            (s, g)
        })
        .collect()
}

/// Models entering the three-row RL comparison.
pub struct RlMethods<'a> {
    pub stack: &'a ApproxValueStack,
    pub tree_depth: usize,
    pub inverse: &'a InverseModel,
    pub q: &'a QModel,
}

/// Evaluate SGT+inverse-model, SGT+Q and Q-alone on identical pairs.
pub fn eval_rl(ws: &Workspace, m: &RlMethods, n_pairs: usize, seed: u64) -> RlEvalReport {
    let pairs = eval_pairs(ws, n_pairs, seed);
    let mut rows = Vec::new();
    for (name, use_tree, controller) in [
        ("sgt_im", true, Controller::InverseModel(m.inverse)),
        ("sgt_q", true, Controller::QGreedy(m.q)),
        ("q", false, Controller::QGreedy(m.q)),
    ] {
        let mut dist_sum = 0.0;
        let mut collisions = 0usize;
        for &(s, g) in &pairs {
            let rec = if use_tree {
                let tree = extract_tree_approx(m.stack, s, g, m.tree_depth);
                track_subgoals(
                    ws,
                    &tree,
                    &controller,
                    SUBGOAL_THRESHOLD,
                    PER_SUBGOAL_BUDGET,
                    EPISODE_BUDGET,
                )
            } else {
                rollout_q(ws, m.q, s, g, SUBGOAL_THRESHOLD, EPISODE_BUDGET)
            };
            dist_sum += rec.final_dist;
            collisions += rec.collided as usize;
        }
        rows.push(RlRow {
            method: name.to_string(),
            avg_dist: dist_sum / pairs.len() as f64,
            avg_collision_rate: collisions as f64 / pairs.len() as f64,
            n: pairs.len(),
        });
    }
    RlEvalReport { rows }
}

#[derive(Debug, Clone, Serialize)]
pub struct IlRow {
    pub method: String,
    pub success_rate: f64,
    pub pred_time_s: f64,
    pub severity: f64,
    pub mean_calls: f64,
    pub max_depth: usize,
}

/// Run one representation's predictor over shared (start, goal) pairs.
pub fn eval_il_method(
    ws: &Workspace,
    model: &MdnModel,
    cfg: &BcConfig,
    pairs: &[(Point, Point)],
) -> IlRow {
    let k = cfg.max_depth();
    let mut successes = 0usize;
    let mut sev_sum = 0.0;
    let mut time_sum = 0.0;
    let mut calls_sum = 0usize;
    let mut max_depth = 0usize;
    for (i, &(s, g)) in pairs.iter().enumerate() {
        let seed = crate::util::mix_seed(cfg.seed, 0xe7, i as u64);
        let start = Instant::now();
        let pred = match cfg.representation {
            Representation::Sequential => {
                predict_sequential(model, s, g, cfg.horizon, cfg.goal_eps, seed)
            }
            Representation::Sgt => predict_sgt(model, s, g, k, seed),
            Representation::Direct => predict_direct(model, s, g, cfg.horizon, seed),
        };
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let t = assemble_and_score(ws, &pred, cfg.stop_on_collision, wall_ms);
        successes += t.success as usize;
        sev_sum += t.severity;
        time_sum += wall_ms / 1e3;
        calls_sum += t.calls;
        max_depth = max_depth.max(t.depth);
    }
    IlRow {
        method: match cfg.representation {
            Representation::Sequential => "sequential",
            Representation::Sgt => "sgt",
            Representation::Direct => "direct",
        }
        .to_string(),
        success_rate: successes as f64 / pairs.len() as f64,
        pred_time_s: time_sum / pairs.len() as f64,
        severity: sev_sum / pairs.len() as f64,
        mean_calls: calls_sum as f64 / pairs.len() as f64,
        max_depth,
    }
}

/// Min-max scaled P2 PGM of the value heatmap plus the raw CSV grid.
pub fn export_heatmap(
    stack: &ApproxValueStack,
    g: Point,
    k: usize,
    res: usize,
    pgm_path: &Path,
    csv_path: &Path,
) -> std::io::Result<()> {
    // render on the full lattice, whatever midpoint set the stack used
    let vals: Vec<f64> = MidpointGrid::uniform(res)
        .points
        .iter()
        .map(|&c| stack.value(k, c, g))
        .collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut pgm = String::new();
    pgm.push_str(&format!("P2\n{res} {res}\n255\n"));
    for row in 0..res {
        let line: Vec<String> = (0..res)
            .map(|col| {
                let v = vals[row * res + col];
                let px = if span == 0.0 { 0 } else { ((v - lo) / span * 255.0).round() as u32 };
                px.to_string()
            })
            .collect();
        pgm.push_str(&line.join(" "));
        pgm.push('\n');
    }
    std::fs::write(pgm_path, pgm)?;
    let mut csv = String::new();
    for row in 0..res {
        let line: Vec<String> =
            (0..res).map(|col| format!("{:?}", vals[row * res + col])).collect();
        csv.push_str(&line.join(","));
        csv.push('\n');
    }
    std::fs::write(csv_path, csv)
}

/// Parse the raw heatmap CSV back into grid order.
pub fn read_heatmap_csv(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut vals = Vec::new();
    for line in text.lines() {
        for cell in line.split(',') {
            vals.push(cell.trim().parse::<f64>()?);
        }
    }
    Ok(vals)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub workspace: String,
    pub seed: u64,
    pub n_transitions: usize,
    pub n_demos_train: usize,
    pub n_demos_val: usize,
    pub n_demos_test: usize,
    pub horizon: usize,
    pub modes: usize,
    pub hidden: usize,
    pub train_steps: usize,
    pub k_max: usize,
    pub c_max: f64,
    pub grid_res: usize,
    pub k_neighbors: usize,
    pub n_goal_pairs: usize,
    pub q_iters: usize,
    pub fw_iters: usize,
    pub fw_fit_self: bool,
    pub n_eval_pairs: usize,
    pub representation: String,
    pub stop_on_collision: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workspace: "rl".into(),
            seed: 0,
            n_transitions: 125_000,
            n_demos_train: 10_000,
            n_demos_val: 1_000,
            n_demos_test: 200,
            horizon: 32,
            modes: 1,
            hidden: 64,
            train_steps: 20_000,
            k_max: 5,
            c_max: 10.0,
            grid_res: 50,
            k_neighbors: 5,
            n_goal_pairs: 10_000,
            q_iters: 20,
            fw_iters: 8,
            fw_fit_self: true,
            n_eval_pairs: 200,
            representation: "sgt".into(),
            stop_on_collision: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(
            self.horizon.is_power_of_two() && self.horizon >= 2,
            "horizon must be a power of two >= 2"
        );
        anyhow::ensure!(self.modes >= 1, "modes must be >= 1");
        anyhow::ensure!(self.c_max > 0.0, "c_max must be positive");
        anyhow::ensure!(self.grid_res >= 1 && self.k_max >= 1, "grid_res and k_max must be >= 1");
        Workspace::by_name(&self.workspace).map_err(|e| anyhow::anyhow!("{e}"))?;
        self.representation
            .parse::<Representation>()
            .map_err(|e| anyhow::anyhow!(e))?;
        Ok(())
    }

    /// Stable hash of the canonical JSON encoding; stamped on reports.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

pub fn write_rl_report<W: std::io::Write>(
    mut w: W,
    report: &RlEvalReport,
    config_hash: &str,
) -> std::io::Result<()> {
    writeln!(w, "method,avg_dist,avg_collision_rate,n,config_hash")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{},{}",
            r.method, r.avg_dist, r.avg_collision_rate, r.n, config_hash
        )?;
    }
    Ok(())
}

pub fn write_il_report<W: std::io::Write>(
    mut w: W,
    rows: &[IlRow],
    config_hash: &str,
) -> std::io::Result<()> {
    writeln!(w, "method,success_rate,pred_time_s,severity,config_hash")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{}",
            r.method, r.success_rate, r.pred_time_s, r.severity, config_hash
        )?;
    }
    Ok(())
}
