//! Approximate graph edit distance between padded graphs.

use serde::{Deserialize, Serialize};

use crate::chem::graph::PaddedGraph;
use crate::nn::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceWeights {
    pub lambda_a: f64,
    pub lambda_x: f64,
    pub lambda_e: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        Self { lambda_a: 10.0, lambda_x: 1.0, lambda_e: 1.0 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("shape mismatch: {0}")]
pub struct ShapeError(pub String);

fn same_dim(name: &str, a: &Mat, b: &Mat) -> Result<(), ShapeError> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(ShapeError(format!("{name}: {:?} vs {:?}", a.dim(), b.dim())))
    }
}

/// `‖A₁ ⊙ (1 − A₂)‖` over the strict upper triangle: edges of the first
/// graph missing from the second. Not symmetric.
pub fn d_a(a1: &Mat, a2: &Mat) -> Result<f64, ShapeError> {
    same_dim("adjacency", a1, a2)?;
    if !a1.is_square() {
        return Err(ShapeError(format!("adjacency is not square: {:?}", a1.dim())));
    }
    let m = a1.nrows();
    let mut s = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let v = a1[[i, j]] * (1.0 - a2[[i, j]]);
            s += v * v;
        }
    }
    Ok(s.sqrt())
}

/// Frobenius norm of the difference.
pub fn d_frob(x1: &Mat, x2: &Mat) -> Result<f64, ShapeError> {
    same_dim("attributes", x1, x2)?;
    Ok((x1 - x2).iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Weighted sum of the three terms for dense matrices of equal shape.
pub fn dense_distance(
    (a1, x1, e1): (&Mat, &Mat, &Mat),
    (a2, x2, e2): (&Mat, &Mat, &Mat),
    w: DistanceWeights,
) -> Result<f64, ShapeError> {
    Ok(w.lambda_a * d_a(a1, a2)? + w.lambda_x * d_frob(x1, x2)? + w.lambda_e * d_frob(e1, e2)?)
}

pub fn graph_distance(g: &PaddedGraph, cf: &PaddedGraph, w: DistanceWeights) -> Result<f64, ShapeError> {
    dense_distance((&g.a, &g.x, &g.e), (&cf.a, &cf.x, &cf.e), w)
}
