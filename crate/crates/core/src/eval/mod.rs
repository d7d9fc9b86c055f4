//! Counterfactual quality metrics and reports.

pub mod distance;
pub mod metrics;

pub use distance::{d_a, d_frob, graph_distance, DistanceWeights, ShapeError};
pub use metrics::{aggregate, evaluate, proximity, validity, EvalError, EvalReport, MeanStd, Outcome, PerGraph, Summary};
