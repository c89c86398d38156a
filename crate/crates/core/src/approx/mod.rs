//! Function approximators: KNN regression (value functions, inverse
//! model) and a small mixture-density regressor for behavioral cloning.

pub mod knn;
pub mod mdn;

pub use knn::{inverse_fit, inverse_query, knn_fit, linear_scan_predict, InverseModel, KnnModel};
pub use mdn::{mdn_train, mean_nll, MdnModel, MdnSample, Mixture, TrainLog, TrainOpts};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("empty training data")]
    EmptyData,
    #[error("only {n} points for K = {k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("loss became non-finite at step {0}")]
    NumericalFailure(usize),
}
