//! Exact sub-goal-tree dynamic programming on weighted graphs.
//!
//! `stdp_solve` computes the family `V_0..V_K`, where `V_k(s, s')` is the
//! cost of the cheapest path from `s` to `s'` using at most `2^k` edges,
//! via the midpoint recursion
//! `V_k(s, s') = min over m of V_{k-1}(s, m) + V_{k-1}(m, s')`.
//! Floyd-Warshall and all-sources Dijkstra are kept as independent oracles.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("negative weight {weight} on edge ({from}, {to})")]
    NegativeWeight { from: usize, to: usize, weight: f64 },
    #[error("no path from {from} to {to} within 2^{depth} steps")]
    InfiniteValue { from: usize, to: usize, depth: usize },
    #[error("node index {0} out of range (n = {1})")]
    NodeOutOfRange(usize, usize),
    #[error("graph parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Directed, logically complete graph over `n` nodes. Missing edges are
/// stored as `f64::INFINITY`; the diagonal is pinned to 0.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    n: usize,
    weights: Vec<f64>,
}

impl WeightedGraph {
    /// Graph with no edges (everything infinite except the diagonal).
    pub fn empty(n: usize) -> Self {
        assert!(n >= 1, "graph needs at least one node");
        let mut weights = vec![f64::INFINITY; n * n];
        for i in 0..n {
            weights[i * n + i] = 0.0;
        }
        WeightedGraph { n, weights }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut g = Self::empty(n);
        for &(i, j, w) in edges {
            g.set_weight(i, j, w)?;
        }
        Ok(g)
    }

    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) -> Result<(), GraphError> {
        if i >= self.n {
            return Err(GraphError::NodeOutOfRange(i, self.n));
        }
        if j >= self.n {
            return Err(GraphError::NodeOutOfRange(j, self.n));
        }
        if w < 0.0 {
            return Err(GraphError::NegativeWeight { from: i, to: j, weight: w });
        }
        if i != j {
            self.weights[i * self.n + j] = w;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Parse the text format: first line `n`, then `i j w` per finite edge.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (line, first) = lines.next().ok_or(GraphError::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let n: usize = first.trim().parse().map_err(|e| GraphError::Parse {
            line: line + 1,
            msg: format!("bad node count: {e}"),
        })?;
        if n == 0 {
            return Err(GraphError::Parse { line: line + 1, msg: "n must be >= 1".into() });
        }
        let mut g = Self::empty(n);
        for (line, text) in lines {
            let mut it = text.split_whitespace();
            let parse_err = |msg: String| GraphError::Parse { line: line + 1, msg };
            let i: usize = it
                .next()
                .ok_or_else(|| parse_err("missing source".into()))?
                .parse()
                .map_err(|e| parse_err(format!("bad source: {e}")))?;
            let j: usize = it
                .next()
                .ok_or_else(|| parse_err("missing target".into()))?
                .parse()
                .map_err(|e| parse_err(format!("bad target: {e}")))?;
            let w: f64 = it
                .next()
                .ok_or_else(|| parse_err("missing weight".into()))?
                .parse()
                .map_err(|e| parse_err(format!("bad weight: {e}")))?;
            g.set_weight(i, j, w)?;
        }
        Ok(g)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.weight(i, j);
                if i != j && w.is_finite() {
                    let _ = writeln!(out, "{i} {j} {w}");
                }
            }
        }
        out
    }
}

/// One `n x n` table of path costs at depth `k`.
#[derive(Debug, Clone)]
pub struct ValueTable {
    n: usize,
    pub depth: usize,
    values: Vec<f64>,
}

impl ValueTable {
    fn new(n: usize, depth: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * n);
        ValueTable { n, depth, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_abs_diff(&self, other: &ValueTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                if a.is_infinite() && b.is_infinite() {
                    0.0
                } else {
                    (a - b).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// The family `V_0..V_K` plus one recorded minimizing midpoint per
/// `(k, s, s')` for deterministic reconstruction.
#[derive(Debug, Clone)]
pub struct ValueStack {
    pub tables: Vec<ValueTable>,
    /// midpoints[k - 1][s * n + s'] for k = 1..=K.
    midpoints: Vec<Vec<u32>>,
}

impl ValueStack {
    pub fn depth(&self) -> usize {
        self.tables.len() - 1
    }

    pub fn table(&self, k: usize) -> &ValueTable {
        &self.tables[k]
    }

    fn midpoint(&self, k: usize, s: usize, g: usize) -> usize {
        let n = self.tables[0].n;
        self.midpoints[k - 1][s * n + g] as usize
    }
}

/// Complete binary midpoint tree of depth `K`, stored as its in-order
/// flattening of `2^K + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGoalTree<T> {
    pub depth: usize,
    pub flattening: Vec<T>,
}

impl<T> SubGoalTree<T> {
    pub fn new(depth: usize, flattening: Vec<T>) -> Self {
        assert_eq!(flattening.len(), (1usize << depth) + 1);
        SubGoalTree { depth, flattening }
    }
}

/// Run the midpoint recursion up to depth `k_max`.
pub fn stdp_solve(graph: &WeightedGraph, k_max: usize) -> ValueStack {
    let n = graph.n();
    let mut v0 = graph.weights.clone();
    for i in 0..n {
        v0[i * n + i] = 0.0;
    }
    let mut tables = vec![ValueTable::new(n, 0, v0)];
    let mut midpoints = Vec::new();
    for k in 1..=k_max {
        let prev = &tables[k - 1].values;
        let mut next = vec![0.0f64; n * n];
        let mut mids = vec![0u32; n * n];
        for s in 0..n {
            for g in 0..n {
                if s == g {
                    mids[s * n + g] = s as u32;
                    continue;
                }
                let mut best = f64::INFINITY;
                let mut best_m = s;
                for m in 0..n {
                    let c = prev[s * n + m] + prev[m * n + g];
                    if c < best {
                        best = c;
                        best_m = m;
                    }
                }
                next[s * n + g] = best;
                mids[s * n + g] = best_m as u32;
            }
        }
        tables.push(ValueTable::new(n, k, next));
        midpoints.push(mids);
    }
    ValueStack { tables, midpoints }
}

/// Recover the recorded-midpoint tree for `(s, g)` at depth `k`.
pub fn extract_subgoal_tree(
    stack: &ValueStack,
    s: usize,
    g: usize,
    k: usize,
) -> Result<SubGoalTree<usize>, GraphError> {
    assert!(k <= stack.depth(), "requested depth exceeds stack depth");
    let n = stack.tables[0].n;
    assert!(s < n && g < n);
    if stack.table(k).get(s, g).is_infinite() {
        return Err(GraphError::InfiniteValue { from: s, to: g, depth: k });
    }
    let mut flat = Vec::with_capacity((1usize << k) + 1);
    flat.push(s);
    fn rec(stack: &ValueStack, s: usize, g: usize, k: usize, out: &mut Vec<usize>) {
        if k == 0 {
            out.push(g);
            return;
        }
        let m = if s == g { s } else { stack.midpoint(k, s, g) };
        rec(stack, s, m, k - 1, out);
        rec(stack, m, g, k - 1, out);
    }
    rec(stack, s, g, k, &mut flat);
    Ok(SubGoalTree::new(k, flat))
}

/// Classical Floyd-Warshall relaxation; second APSP oracle.
pub fn floyd_warshall(graph: &WeightedGraph) -> ValueTable {
    let n = graph.n();
    let mut d = graph.weights.clone();
    for i in 0..n {
        d[i * n + i] = 0.0;
    }
    for m in 0..n {
        for s in 0..n {
            let via = d[s * n + m];
            if via.is_infinite() {
                continue;
            }
            for g in 0..n {
                let cand = via + d[m * n + g];
                if cand < d[s * n + g] {
                    d[s * n + g] = cand;
                }
            }
        }
    }
    ValueTable::new(n, 0, d)
}

/// Single-source Dijkstra from every node; independent APSP oracle.
pub fn dijkstra_apsp(graph: &WeightedGraph) -> Result<ValueTable, GraphError> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = graph.n();
    for i in 0..n {
        for j in 0..n {
            let w = graph.weight(i, j);
            if w.is_finite() && w < 0.0 {
                return Err(GraphError::NegativeWeight { from: i, to: j, weight: w });
            }
        }
    }
    let mut all = vec![f64::INFINITY; n * n];
    for src in 0..n {
        let dist = &mut all[src * n..(src + 1) * n];
        dist[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((OrdF64(0.0), src)));
        let mut done = vec![false; n];
        while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for v in 0..n {
                let w = graph.weight(u, v);
                if !w.is_finite() {
                    continue;
                }
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Reverse((OrdF64(nd), v)));
                }
            }
        }
    }
    Ok(ValueTable::new(n, 0, all))
}

/// Sum of edge weights along a flattened path; repeated nodes are free.
pub fn path_cost(graph: &WeightedGraph, path: &[usize]) -> f64 {
    assert!(!path.is_empty(), "path must be nonempty");
    path.windows(2)
        .map(|w| if w[0] == w[1] { 0.0 } else { graph.weight(w[0], w[1]) })
        .sum()
}

// Total order on finite nonnegative distances for the heap.
#[derive(PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_node() -> WeightedGraph {
        // direct a->b costs 5, detour through m costs 2
        WeightedGraph::from_edges(3, &[(0, 1, 5.0), (0, 2, 1.0), (2, 1, 1.0)]).unwrap()
    }

    #[test]
    fn stdp_base_case_two_nodes() {
        let g = WeightedGraph::from_edges(2, &[(0, 1, 3.0)]).unwrap();
        let stack = stdp_solve(&g, 0);
        assert_eq!(stack.table(0).get(0, 1), 3.0);
        assert_eq!(stack.table(0).get(0, 0), 0.0);
        assert!(stack.table(0).get(1, 0).is_infinite());
    }

    #[test]
    fn stdp_one_level_midpoint() {
        let stack = stdp_solve(&three_node(), 1);
        assert_eq!(stack.table(1).get(0, 1), 2.0);
        assert_eq!(stack.midpoint(1, 0, 1), 2);
    }

    #[test]
    fn extract_self_path_is_all_start() {
        let stack = stdp_solve(&three_node(), 2);
        let tree = extract_subgoal_tree(&stack, 1, 1, 2).unwrap();
        assert_eq!(tree.flattening, vec![1; 5]);
        assert_eq!(path_cost(&three_node(), &tree.flattening), 0.0);
    }

    #[test]
    fn extract_three_node_tree() {
        let g = three_node();
        let stack = stdp_solve(&g, 1);
        let tree = extract_subgoal_tree(&stack, 0, 1, 1).unwrap();
        assert_eq!(tree.flattening, vec![0, 2, 1]);
        assert_eq!(path_cost(&g, &tree.flattening), 2.0);
    }

    #[test]
    fn extract_infinite_pair_errors() {
        let g = WeightedGraph::from_edges(2, &[(0, 1, 3.0)]).unwrap();
        let stack = stdp_solve(&g, 3);
        assert!(matches!(
            extract_subgoal_tree(&stack, 1, 0, 3),
            Err(GraphError::InfiniteValue { .. })
        ));
    }

    #[test]
    fn floyd_warshall_three_node() {
        let t = floyd_warshall(&three_node());
        assert_eq!(t.get(0, 1), 2.0);
        assert_eq!(t.get(0, 0), 0.0);
        assert!(t.get(1, 0).is_infinite());
    }

    #[test]
    fn dijkstra_single_node() {
        let g = WeightedGraph::empty(1);
        let t = dijkstra_apsp(&g).unwrap();
        assert_eq!(t.get(0, 0), 0.0);
    }

    #[test]
    fn dijkstra_three_node() {
        let t = dijkstra_apsp(&three_node()).unwrap();
        assert_eq!(t.get(0, 1), 2.0);
    }

    #[test]
    fn dijkstra_unit_chain() {
        let edges: Vec<_> = (0..4).map(|i| (i, i + 1, 1.0)).collect();
        let g = WeightedGraph::from_edges(5, &edges).unwrap();
        let t = dijkstra_apsp(&g).unwrap();
        assert_eq!(t.get(0, 4), 4.0);
    }

    #[test]
    fn dijkstra_rejects_negative_weight() {
        let mut g = WeightedGraph::empty(2);
        g.weights[1] = -1.0;
        assert!(matches!(
            dijkstra_apsp(&g),
            Err(GraphError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn path_cost_examples() {
        let g2 = WeightedGraph::from_edges(2, &[(0, 1, 3.0)]).unwrap();
        assert_eq!(path_cost(&g2, &[0]), 0.0);
        assert_eq!(path_cost(&g2, &[0, 0, 1]), 3.0);
        assert_eq!(path_cost(&three_node(), &[0, 2, 1]), 2.0);
    }

    #[test]
    fn parse_round_trip() {
        let g = three_node();
        let g2 = WeightedGraph::parse(&g.to_text()).unwrap();
        assert_eq!(g2.n(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (g.weight(i, j), g2.weight(i, j));
                assert!(a == b || (a.is_infinite() && b.is_infinite()));
            }
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(WeightedGraph::parse("").is_err());
        assert!(WeightedGraph::parse("3\n0 1").is_err());
        assert!(WeightedGraph::parse("3\n0 1 -2.0").is_err());
        assert!(WeightedGraph::parse("2\n0 5 1.0").is_err());
    }
}
