//! Internal expert planner: A* over a 100x100 occupancy grid with
//! 8-connectivity, followed by greedy shortcutting. Demonstrations are
//! planned against slightly inflated obstacles so that resampled chords
//! keep clear of the true geometry.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{dist, EnvError, Point, Trajectory, Workspace};

pub const GRID_RES: usize = 100;
/// Obstacle inflation used when planning demonstrations.
pub const DEMO_INFLATION: f64 = 0.02;

pub struct Planner {
    ws: Workspace,
    inflated: Workspace,
    /// cell centers that lie in the inflated free space
    free: Vec<bool>,
}

impl Planner {
    pub fn new(ws: &Workspace, inflation: f64) -> Self {
        let inflated = Workspace {
            name: ws.name.clone(),
            obstacles: ws.obstacles.iter().map(|r| r.inflate(inflation)).collect(),
        };
        let mut free = vec![false; GRID_RES * GRID_RES];
        for ix in 0..GRID_RES {
            for iy in 0..GRID_RES {
                free[ix * GRID_RES + iy] = inflated.in_free_space(Self::center(ix, iy));
            }
        }
        Planner { ws: ws.clone(), inflated, free }
    }

    fn center(ix: usize, iy: usize) -> Point {
        [(ix as f64 + 0.5) / GRID_RES as f64, (iy as f64 + 0.5) / GRID_RES as f64]
    }

    fn cell_of(p: Point) -> (usize, usize) {
        let clamp = |v: f64| ((v * GRID_RES as f64) as usize).min(GRID_RES - 1);
        (clamp(p[0]), clamp(p[1]))
    }

    /// Nearest free cell whose center connects to `p` without collision,
    /// searched over growing rings around `p`'s own cell.
    fn attach(&self, p: Point) -> Option<(usize, usize)> {
        let (cx, cy) = Self::cell_of(p);
        for ring in 0..=4i64 {
            let mut best: Option<((usize, usize), f64)> = None;
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    let (ix, iy) = (cx as i64 + dx, cy as i64 + dy);
                    if ix < 0 || iy < 0 || ix >= GRID_RES as i64 || iy >= GRID_RES as i64 {
                        continue;
                    }
                    let (ix, iy) = (ix as usize, iy as usize);
                    if !self.free[ix * GRID_RES + iy] {
                        continue;
                    }
                    let c = Self::center(ix, iy);
                    if self.ws.collides(p, c) {
                        continue;
                    }
                    let d = dist(p, c);
                    if best.map_or(true, |(_, bd)| d < bd) {
                        best = Some(((ix, iy), d));
                    }
                }
            }
            if best.is_some() {
                return best.map(|(c, _)| c);
            }
        }
        None
    }

    /// Raw grid A* between attached cells; returns the polyline of cell
    /// centers (without the continuous endpoints).
    fn astar(&self, start: (usize, usize), goal: (usize, usize)) -> Option<Vec<(usize, usize)>> {
        let idx = |(x, y): (usize, usize)| x * GRID_RES + y;
        let n = GRID_RES * GRID_RES;
        let mut g_cost = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        let h = |(x, y): (usize, usize)| {
            let (dx, dy) = (
                (x as f64 - goal.0 as f64).abs(),
                (y as f64 - goal.1 as f64).abs(),
            );
            // octile distance in cell units, scaled to workspace units
            (dx.max(dy) + (2f64.sqrt() - 1.0) * dx.min(dy)) / GRID_RES as f64
        };
        let mut heap = BinaryHeap::new();
        g_cost[idx(start)] = 0.0;
        heap.push(Reverse((crate::util::TotalF64(h(start)), idx(start))));
        while let Some(Reverse((_, cur))) = heap.pop() {
            if closed[cur] {
                continue;
            }
            closed[cur] = true;
            let (cx, cy) = (cur / GRID_RES, cur % GRID_RES);
            if (cx, cy) == goal {
                let mut path = vec![(cx, cy)];
                let mut node = cur;
                while parent[node] != usize::MAX {
                    node = parent[node];
                    path.push((node / GRID_RES, node % GRID_RES));
                }
                path.reverse();
                return Some(path);
            }
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= GRID_RES as i64 || ny >= GRID_RES as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let ni = idx((nx, ny));
                    if closed[ni] || !self.free[ni] {
                        continue;
                    }
                    // diagonal moves must not clip an inflated corner
                    if dx != 0
                        && dy != 0
                        && self
                            .inflated
                            .collides(Self::center(cx, cy), Self::center(nx, ny))
                    {
                        continue;
                    }
                    let step = if dx != 0 && dy != 0 {
                        2f64.sqrt() / GRID_RES as f64
                    } else {
                        1.0 / GRID_RES as f64
                    };
                    let cand = g_cost[cur] + step;
                    if cand < g_cost[ni] {
                        g_cost[ni] = cand;
                        parent[ni] = cur;
                        heap.push(Reverse((crate::util::TotalF64(cand + h((nx, ny))), ni)));
                    }
                }
            }
        }
        None
    }

    /// Greedy shortcutting against the inflated obstacles: from each
    /// waypoint, jump to the farthest later waypoint reachable by a
    /// collision-free straight segment.
    fn shortcut(&self, pts: &[Point]) -> Vec<Point> {
        let mut out = vec![pts[0]];
        let mut i = 0;
        while i + 1 < pts.len() {
            let mut j = pts.len() - 1;
            while j > i + 1 && self.inflated.collides(pts[i], pts[j]) {
                j -= 1;
            }
            out.push(pts[j]);
            i = j;
        }
        out
    }

    pub fn plan(&self, s: Point, g: Point) -> Result<Trajectory, EnvError> {
        if !self.ws.in_free_space(s) {
            return Err(EnvError::InvalidState(s[0], s[1]));
        }
        if !self.ws.in_free_space(g) {
            return Err(EnvError::InvalidState(g[0], g[1]));
        }
        if s == g {
            return Ok(Trajectory { states: vec![s, g] });
        }
        if !self.inflated.collides(s, g) {
            return Ok(Trajectory { states: vec![s, g] });
        }
        let unreachable = || EnvError::Unreachable(s, g);
        let cs = self.attach(s).ok_or_else(unreachable)?;
        let cg = self.attach(g).ok_or_else(unreachable)?;
        let cells = self.astar(cs, cg).ok_or_else(unreachable)?;
        let mut pts = Vec::with_capacity(cells.len() + 2);
        pts.push(s);
        pts.extend(cells.iter().map(|&(x, y)| Self::center(x, y)));
        pts.push(g);
        let states = self.shortcut(&pts);
        debug_assert!(states.windows(2).all(|w| !self.ws.collides(w[0], w[1])));
        Ok(Trajectory { states })
    }

    /// Raw A* polyline length (before shortcutting), for sanity checks.
    pub fn raw_plan_length(&self, s: Point, g: Point) -> Result<f64, EnvError> {
        if s == g || !self.inflated.collides(s, g) {
            return Ok(dist(s, g));
        }
        let unreachable = || EnvError::Unreachable(s, g);
        let cs = self.attach(s).ok_or_else(unreachable)?;
        let cg = self.attach(g).ok_or_else(unreachable)?;
        let cells = self.astar(cs, cg).ok_or_else(unreachable)?;
        let mut pts = vec![s];
        pts.extend(cells.iter().map(|&(x, y)| Self::center(x, y)));
        pts.push(g);
        Ok(pts.windows(2).map(|w| dist(w[0], w[1])).sum())
    }
}

/// Plan with the default demonstration inflation, falling back to the
/// exact geometry when the endpoints sit inside the inflated margin.
pub fn expert_plan(ws: &Workspace, s: Point, g: Point) -> Result<Trajectory, EnvError> {
    match Planner::new(ws, DEMO_INFLATION).plan(s, g) {
        Ok(t) => Ok(t),
        Err(EnvError::Unreachable(..)) => Planner::new(ws, 0.0).plan(s, g),
        Err(e) => Err(e),
    }
}
