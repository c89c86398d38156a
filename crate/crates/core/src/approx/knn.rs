//! K-nearest-neighbor regression over a k-d tree, and the KNN inverse
//! model mapping (s, s') to the connecting action.
//!
//! Predictions are the unweighted mean of the K nearest targets under
//! the Euclidean metric; distance ties break by insertion order. The
//! mean is accumulated in insertion order so that it is bitwise equal
//! to a linear-scan oracle doing the same.

use serde::{Deserialize, Serialize};

use super::ApproxError;
use crate::env2d::{Point, TransitionDataset};

const LEAF_SIZE: usize = 16;

enum Node {
    Split { dim: u8, val: f64, left: u32, right: u32 },
    Leaf { start: u32, end: u32 },
}

struct KdTree {
    nodes: Vec<Node>,
    /// permutation of point indices; leaves own contiguous slices
    order: Vec<u32>,
    /// point coordinates rearranged into `order` so leaf scans read
    /// memory sequentially
    packed: Vec<f64>,
}

impl KdTree {
    fn build(points: &[f64], d: usize) -> KdTree {
        let n = points.len() / d;
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            Self::build_rec(points, d, &mut order, 0, n, &mut nodes);
        }
        let mut packed = Vec::with_capacity(points.len());
        for &i in &order {
            packed.extend_from_slice(&points[i as usize * d..(i as usize + 1) * d]);
        }
        KdTree { nodes, order, packed }
    }

    fn build_rec(
        points: &[f64],
        d: usize,
        order: &mut [u32],
        offset: usize,
        len: usize,
        nodes: &mut Vec<Node>,
    ) -> u32 {
        let me = nodes.len() as u32;
        if len <= LEAF_SIZE {
            nodes.push(Node::Leaf { start: offset as u32, end: (offset + len) as u32 });
            return me;
        }
        // split along the widest dimension of this cell
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in order[..len].iter() {
            for a in 0..d {
                let v = points[i as usize * d + a];
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let dim = (0..d).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        let mid = len / 2;
        order[..len].select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize * d + dim].total_cmp(&points[b as usize * d + dim])
        });
        let val = points[order[mid] as usize * d + dim];
        nodes.push(Node::Leaf { start: 0, end: 0 }); // placeholder
        let (left_slice, right_slice) = order.split_at_mut(mid);
        let left = Self::build_rec(points, d, left_slice, offset, mid, nodes);
        let right = Self::build_rec(points, d, right_slice, offset + mid, len - mid, nodes);
        nodes[me as usize] = Node::Split { dim: dim as u8, val, left, right };
        me
    }
}

#[derive(Clone, Copy)]
struct Best {
    d2: f64,
    idx: u32,
}

/// KNN regressor with vector-valued targets.
#[derive(Serialize, Deserialize)]
#[serde(from = "KnnSnapshot", into = "KnnSnapshot")]
pub struct KnnModel {
    d: usize,
    k: usize,
    t_dim: usize,
    points: Vec<f64>,
    targets: Vec<f64>,
    #[serde(skip)]
    tree: Option<KdTree>,
}

#[derive(Serialize, Deserialize)]
struct KnnSnapshot {
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    t_dim: usize,
    points: Vec<f64>,
    targets: Vec<f64>,
}

impl From<KnnSnapshot> for KnnModel {
    fn from(s: KnnSnapshot) -> Self {
        let tree = Some(KdTree::build(&s.points, s.d));
        KnnModel { d: s.d, k: s.k, t_dim: s.t_dim, points: s.points, targets: s.targets, tree }
    }
}

impl From<KnnModel> for KnnSnapshot {
    fn from(m: KnnModel) -> Self {
        KnnSnapshot { d: m.d, k: m.k, t_dim: m.t_dim, points: m.points, targets: m.targets }
    }
}

impl Clone for KnnModel {
    fn clone(&self) -> Self {
        KnnModel {
            d: self.d,
            k: self.k,
            t_dim: self.t_dim,
            points: self.points.clone(),
            targets: self.targets.clone(),
            tree: Some(KdTree::build(&self.points, self.d)),
        }
    }
}

pub fn knn_fit(
    points: Vec<f64>,
    targets: Vec<f64>,
    d: usize,
    t_dim: usize,
    k: usize,
) -> Result<KnnModel, ApproxError> {
    if points.is_empty() {
        return Err(ApproxError::EmptyData);
    }
    assert!(k >= 1 && d >= 1 && t_dim >= 1);
    assert_eq!(points.len() % d, 0, "point buffer not a multiple of d");
    let n = points.len() / d;
    assert_eq!(targets.len(), n * t_dim, "target buffer size mismatch");
    if n < k {
        return Err(ApproxError::TooFewPoints { n, k });
    }
    let tree = Some(KdTree::build(&points, d));
    Ok(KnnModel { d, k, t_dim, points, targets, tree })
}

impl KnnModel {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t_dim(&self) -> usize {
        self.t_dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of the K nearest stored points, sorted by insertion order.
    pub fn neighbors(&self, q: &[f64]) -> Vec<usize> {
        assert_eq!(q.len(), self.d, "query dimension mismatch");
        let tree = self.tree.as_ref().expect("tree built at fit time");
        let mut best: Vec<Best> = Vec::with_capacity(self.k);
        let mut off = [0.0f64; 8];
        assert!(self.d <= off.len(), "dimension exceeds search buffer");
        self.search(tree, 0, q, &mut off, 0.0, &mut best);
        let mut out: Vec<usize> = best.iter().map(|b| b.idx as usize).collect();
        out.sort_unstable();
        out
    }

    /// `off` holds the per-dimension offset from `q` to the current
    /// cell and `cell_d2` its squared norm: the exact lower bound on
    /// any distance inside the cell. Pruning on it keeps results
    /// identical to a full scan (`<=` so equal-distance points with
    /// smaller insertion index are still found).
    fn search(
        &self,
        tree: &KdTree,
        node: u32,
        q: &[f64],
        off: &mut [f64; 8],
        cell_d2: f64,
        best: &mut Vec<Best>,
    ) {
        match &tree.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for j in *start as usize..*end as usize {
                    let p = &tree.packed[j * self.d..(j + 1) * self.d];
                    let mut d2 = 0.0;
                    for a in 0..self.d {
                        let diff = p[a] - q[a];
                        d2 += diff * diff;
                    }
                    let cand = Best { d2, idx: tree.order[j] };
                    if best.len() < self.k {
                        let pos = best
                            .iter()
                            .position(|b| Self::worse(b, &cand))
                            .unwrap_or(best.len());
                        best.insert(pos, cand);
                    } else if Self::worse(best.last().unwrap(), &cand) {
                        best.pop();
                        let pos = best
                            .iter()
                            .position(|b| Self::worse(b, &cand))
                            .unwrap_or(best.len());
                        best.insert(pos, cand);
                    }
                }
            }
            Node::Split { dim, val, left, right } => {
                let dim = *dim as usize;
                let delta = q[dim] - val;
                let (near, far) = if delta < 0.0 { (*left, *right) } else { (*right, *left) };
                self.search(tree, near, q, off, cell_d2, best);
                let old = off[dim];
                let far_d2 = cell_d2 - old * old + delta * delta;
                if best.len() < self.k || far_d2 <= best.last().unwrap().d2 {
                    off[dim] = delta;
                    self.search(tree, far, q, off, far_d2, best);
                    off[dim] = old;
                }
            }
        }
    }

    /// Lexicographic (distance, insertion index): is `a` worse than `b`?
    #[inline]
    fn worse(a: &Best, b: &Best) -> bool {
        a.d2 > b.d2 || (a.d2 == b.d2 && a.idx > b.idx)
    }

    /// Mean of the K nearest targets, componentwise.
    pub fn predict_into(&self, q: &[f64], out: &mut [f64]) {
        assert_eq!(out.len(), self.t_dim);
        let nn = self.neighbors(q);
        out.fill(0.0);
        for &i in &nn {
            for a in 0..self.t_dim {
                out[a] += self.targets[i * self.t_dim + a];
            }
        }
        for v in out.iter_mut() {
            *v /= nn.len() as f64;
        }
    }

    pub fn predict(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.t_dim];
        self.predict_into(q, &mut out);
        out
    }

    /// Scalar-target convenience path.
    pub fn predict_scalar(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(self.t_dim, 1);
        let nn = self.neighbors(q);
        let mut acc = 0.0;
        for &i in &nn {
            acc += self.targets[i];
        }
        acc / nn.len() as f64
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.t_dim..(i + 1) * self.t_dim]
    }
}

/// Linear-scan reference used by tests and the acceptance suite; kept
/// here so callers can cross-check without reimplementing tie rules.
pub fn linear_scan_predict(
    points: &[f64],
    targets: &[f64],
    d: usize,
    t_dim: usize,
    k: usize,
    q: &[f64],
) -> Vec<f64> {
    let n = points.len() / d;
    let mut scored: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for a in 0..d {
                let diff = points[i * d + a] - q[a];
                acc += diff * diff;
            }
            (acc, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut nn: Vec<usize> = scored[..k.min(n)].iter().map(|s| s.1).collect();
    nn.sort_unstable();
    let mut out = vec![0.0; t_dim];
    for &i in &nn {
        for a in 0..t_dim {
            out[a] += targets[i * t_dim + a];
        }
    }
    for v in out.iter_mut() {
        *v /= nn.len() as f64;
    }
    out
}

/// Inverse model: (s, s') -> action, majority vote over the K nearest
/// non-collision transitions; vote ties break by smallest action index.
#[derive(Clone, Serialize, Deserialize)]
pub struct InverseModel {
    knn: KnnModel,
    actions: Vec<u8>,
}

pub fn inverse_fit(dataset: &TransitionDataset) -> Result<InverseModel, ApproxError> {
    let mut points = Vec::new();
    let mut actions = Vec::new();
    for t in &dataset.tuples {
        if t.s_next == t.s {
            continue; // collision tuples carry no motion information
        }
        points.extend_from_slice(&[t.s[0], t.s[1], t.s_next[0], t.s_next[1]]);
        actions.push(t.u);
    }
    if actions.is_empty() {
        return Err(ApproxError::EmptyData);
    }
    let targets = actions.iter().map(|&u| u as f64).collect();
    let knn = knn_fit(points, targets, 4, 1, 5.min(actions.len()))?;
    Ok(InverseModel { knn, actions })
}

pub fn inverse_query(model: &InverseModel, s: Point, s_next: Point) -> u8 {
    let q = [s[0], s[1], s_next[0], s_next[1]];
    let nn = model.knn.neighbors(&q);
    let mut votes = [0u32; 8];
    for &i in &nn {
        votes[model.actions[i] as usize] += 1;
    }
    let mut best = 0u8;
    for u in 1..8u8 {
        if votes[u as usize] > votes[best as usize] {
            best = u;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_data_predicts_constant() {
        let points = vec![0.5; 5 * 3];
        let targets = vec![7.0; 5];
        let m = knn_fit(points, targets, 3, 1, 5).unwrap();
        assert_eq!(m.predict_scalar(&[0.5, 0.5, 0.5]), 7.0);
    }

    #[test]
    fn k1_exact_match_returns_stored_target() {
        let points = vec![0.0, 0.0, 1.0, 1.0, 0.3, 0.7];
        let targets = vec![1.0, 2.0, 3.0];
        let m = knn_fit(points, targets, 2, 1, 1).unwrap();
        assert_eq!(m.predict_scalar(&[0.3, 0.7]), 3.0);
    }

    #[test]
    fn matches_linear_scan_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, d) = (1000, 4);
        let points: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0).collect();
        let m = knn_fit(points.clone(), targets.clone(), d, 1, 5).unwrap();
        for _ in 0..200 {
            let q: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let want = linear_scan_predict(&points, &targets, d, 1, 5, &q)[0];
            let got = m.predict_scalar(&q);
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn distance_ties_break_by_insertion_order() {
        // four copies of the same point; k=2 must pick indices 0 and 1
        let points = vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        let targets = vec![1.0, 2.0, 3.0, 4.0];
        let m = knn_fit(points, targets, 2, 1, 2).unwrap();
        assert_eq!(m.neighbors(&[0.5, 0.5]), vec![0, 1]);
        assert_eq!(m.predict_scalar(&[0.5, 0.5]), 1.5);
    }

    #[test]
    fn prediction_in_convex_hull_of_neighbor_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, d) = (300, 2);
        let points: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let m = knn_fit(points, targets.clone(), d, 1, 5).unwrap();
        for _ in 0..100 {
            let q = [rng.gen::<f64>(), rng.gen::<f64>()];
            let nn = m.neighbors(&q);
            let lo = nn.iter().map(|&i| targets[i]).fold(f64::INFINITY, f64::min);
            let hi = nn.iter().map(|&i| targets[i]).fold(f64::NEG_INFINITY, f64::max);
            let p = m.predict_scalar(&q);
            assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }

    #[test]
    fn empty_and_undersized_data_rejected() {
        assert!(matches!(knn_fit(vec![], vec![], 2, 1, 1), Err(ApproxError::EmptyData)));
        assert!(matches!(
            knn_fit(vec![0.0, 0.0], vec![1.0], 2, 1, 5),
            Err(ApproxError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<f64> = (0..50 * 2).map(|_| rng.gen::<f64>()).collect();
        let targets: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
        let m = knn_fit(points, targets, 2, 1, 3).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let m2: KnnModel = serde_json::from_str(&s).unwrap();
        for _ in 0..20 {
            let q = [rng.gen::<f64>(), rng.gen::<f64>()];
            assert_eq!(m.predict_scalar(&q).to_bits(), m2.predict_scalar(&q).to_bits());
        }
    }

    #[test]
    fn inverse_model_recovers_actions() {
        use crate::env2d::{action_dir, sample_transitions, Workspace, STEP_LEN};
        let ws = Workspace::by_name("center").unwrap();
        let ds = sample_transitions(&ws, 200_000, 2).unwrap();
        let model = inverse_fit(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0;
        let trials = 400;
        for _ in 0..trials {
            let s = ws.sample_free(&mut rng).unwrap();
            let u = rng.gen_range(0..8u8);
            let d = action_dir(u);
            let s2 = [s[0] + STEP_LEN * d[0], s[1] + STEP_LEN * d[1]];
            if inverse_query(&model, s, s2) == u {
                hits += 1;
            }
        }
        assert!(
            hits as f64 / trials as f64 >= 0.95,
            "inverse model accuracy {}",
            hits as f64 / trials as f64
        );
    }

    #[test]
    #[ignore = "throughput probe, not a correctness test"]
    fn bench_query_throughput() {
        // data shaped like a fitted V_0: short transitions near the 4D
        // diagonal, uniform random pairs, exact self pairs
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut points: Vec<f64> = Vec::new();
        for _ in 0..110_000 {
            let s = [rng.gen::<f64>(), rng.gen::<f64>()];
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            points.extend_from_slice(&[s[0], s[1], s[0] + 0.025 * a.cos(), s[1] + 0.025 * a.sin()]);
        }
        for _ in 0..25_000 {
            points.extend_from_slice(&[rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
        }
        for _ in 0..25_000 {
            let s = [rng.gen::<f64>(), rng.gen::<f64>()];
            points.extend_from_slice(&[s[0], s[1], s[0], s[1]]);
        }
        let n = points.len() / 4;
        let targets: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let m = knn_fit(points, targets, 4, 1, 5).unwrap();
        // queries pair a free state with a midpoint-grid point
        let queries: Vec<[f64; 4]> = (0..200_000)
            .map(|_| {
                let gx = (rng.gen_range(0..50) as f64 + 0.5) / 50.0;
                let gy = (rng.gen_range(0..50) as f64 + 0.5) / 50.0;
                [rng.gen(), rng.gen(), gx, gy]
            })
            .collect();
        let t0 = std::time::Instant::now();
        let mut acc = 0.0;
        for q in &queries {
            acc += m.predict_scalar(q);
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("{} queries in {dt:.2}s ({:.2} us/query, acc {acc})", queries.len(), 1e6 * dt / queries.len() as f64);
    }

    #[test]
    fn inverse_majority_tie_prefers_smallest_action() {
        // five transitions equidistant from the query: votes {0,0,1,2,3}
        let mut ds = TransitionDataset::default();
        for &u in &[0u8, 0, 1, 2, 3] {
            ds.tuples.push(crate::env2d::TransitionTuple {
                s: [0.5, 0.5],
                u,
                c: 0.025,
                s_next: [0.6, 0.6],
            });
        }
        let m = inverse_fit(&ds).unwrap();
        assert_eq!(inverse_query(&m, [0.5, 0.5], [0.6, 0.6]), 0);
    }
}
