//! Dense double-precision numerics: matrices, a small reverse-mode tape,
//! MLPs, cosine scores, temperature cross-entropy and gradient checking.

mod gradcheck;
mod graph;
mod mlp;
mod params;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, CoordFailure, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, Var};
pub use mlp::{Activation, Mlp, MlpSpec};
pub use params::{ParamId, ParamStore};
pub use rng::SeededRng;
pub use tensor::{dot, matmul_nn, matmul_nt, matmul_tn, norm, Tensor2};

use thiserror::Error;

/// Norms at or below this are treated as zero vectors.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate vector (row {row}, norm {norm:e})")]
    Degenerate { row: usize, norm: f64 },
    #[error("{0}")]
    Empty(&'static str),
    #[error("missing parameter {0}")]
    Missing(String),
}

/// `u·v / (‖u‖‖v‖)`. The denominator is `√(u·u · v·v)`, so `cosine(v, v)`
/// is exactly 1.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, NumericsError> {
    if u.len() != v.len() {
        return Err(NumericsError::Shape(format!(
            "cosine of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if !(nu > NORM_EPS) {
        return Err(NumericsError::Degenerate { row: 0, norm: nu });
    }
    if !(nv > NORM_EPS) {
        return Err(NumericsError::Degenerate { row: 1, norm: nv });
    }
    let prod = (dot(u, u) * dot(v, v)).sqrt();
    let denom = if prod.is_finite() && prod > 0.0 { prod } else { nu * nv };
    Ok((dot(u, v) / denom).clamp(-1.0, 1.0))
}

/// `−log softmax(scores/τ)[target]`, stabilised by max-subtraction.
pub fn softmax_ce(scores: &[f64], target: usize, temperature: f64) -> Result<f64, NumericsError> {
    if scores.is_empty() {
        return Err(NumericsError::Empty("softmax over an empty label set"));
    }
    if target >= scores.len() {
        return Err(NumericsError::Shape(format!(
            "target {target} outside {} labels",
            scores.len()
        )));
    }
    Ok(graph::ce_row(scores, target, temperature).0)
}
