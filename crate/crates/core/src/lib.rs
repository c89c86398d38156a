//! Workbench for sub-goal-tree trajectory planning: exact divide-and-
//! conquer shortest-path recursion on graphs, a 2D motion-planning
//! environment, KNN/MDN function approximators, batch RL via the
//! approximate recursion, fitted-Q and relaxation baselines, and three
//! behavioral-cloning trajectory representations.

pub mod approx;
pub mod baselines;
pub mod env2d;
pub mod graph;
pub mod harness;
pub mod il;
pub mod stdp;
pub mod util;
