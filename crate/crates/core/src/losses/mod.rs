//! Semi-adversarial loss terms: pixelwise dissimilarity `J_D`, matching
//! `J_M`, gender `J_G` and their weighted total.
//!
//! Scalar functions work on plain `f64` slices; the `graph_*` builders
//! record the same quantities on a [`Graph`] for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::graph::bce;
use crate::learn::{Graph, Real, Tensor, Var};

/// Probability clamp inside every cross-entropy.
pub const EPS: f64 = 1e-7;

/// `H(p, q) = -(p log q + (1-p) log(1-q))` with `q` clamped to `[ε, 1-ε]`.
pub fn binary_cross_entropy(p: f64, q: f64) -> f64 {
    bce(p, q, EPS)
}

/// Mean per-pixel cross-entropy between a target image and a SAN output.
pub fn loss_pixelwise(target: &[f64], output: &[f64]) -> Result<f64> {
    if target.len() != output.len() || target.is_empty() {
        return Err(Error::Shape(format!(
            "pixelwise loss on {} vs {} pixels",
            target.len(),
            output.len()
        )));
    }
    let s: f64 = target.iter().zip(output).map(|(&p, &q)| binary_cross_entropy(p, q)).sum();
    Ok(s / target.len() as f64)
}

/// Squared L2 distance between two representation vectors.
pub fn loss_matching(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "matching loss on {}- vs {}-dimensional vectors",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `H(y, g_sm) + H(1-y, g_op)`: the same-prototype output keeps the label,
/// the opposite-prototype output targets the flipped one.
pub fn loss_gender(y: u8, g_sm: f64, g_op: f64) -> f64 {
    let y = f64::from(y);
    binary_cross_entropy(y, g_sm) + binary_cross_entropy(1.0 - y, g_op)
}

/// `λ1, λ2, λ3` of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pixel: f64,
    pub matching: f64,
    pub gender: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::UNIFORM
    }
}

impl LossWeights {
    pub const UNIFORM: Self = Self {
        pixel: 1.0,
        matching: 1.0,
        gender: 1.0,
    };

    /// Down-weighted matching term for when the raw representation
    /// distance dominates at small scale.
    pub const TUNED: Self = Self {
        pixel: 1.0,
        matching: 0.1,
        gender: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let w = [self.pixel, self.matching, self.gender];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {w:?}")));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("loss weights are all zero".into()));
        }
        Ok(())
    }
}

pub fn loss_total(w: &LossWeights, jd: f64, jm: f64, jg: f64) -> f64 {
    w.pixel * jd + w.matching * jm + w.gender * jg
}

/// Batch-mean `J_D` of `output` against constant `target` images.
pub fn graph_pixelwise<T: Real>(g: &mut Graph<T>, output: Var, target: Tensor<T>) -> Result<Var> {
    let rows = g.bce_rows(output, target, T::lit(EPS))?;
    Ok(g.mean(rows))
}

/// Batch-mean `J_M` between `repr` and constant target representations.
pub fn graph_matching<T: Real>(g: &mut Graph<T>, repr: Var, target: Tensor<T>) -> Result<Var> {
    let rows = g.sq_dist_rows(repr, target)?;
    Ok(g.mean(rows))
}

/// Batch-mean `J_G` from `[N,1]` probabilities on both SAN outputs.
pub fn graph_gender<T: Real>(g: &mut Graph<T>, p_sm: Var, p_op: Var, labels: &[u8]) -> Result<Var> {
    let n = labels.len();
    let same = Tensor::from_fn(&[n, 1], |i| T::lit(f64::from(labels[i])));
    let flipped = Tensor::from_fn(&[n, 1], |i| T::lit(1.0 - f64::from(labels[i])));
    let a = g.bce_rows(p_sm, same, T::lit(EPS))?;
    let b = g.bce_rows(p_op, flipped, T::lit(EPS))?;
    let both = g.add(a, b)?;
    Ok(g.mean(both))
}

pub fn graph_total<T: Real>(g: &mut Graph<T>, w: &LossWeights, jd: Var, jm: Var, jg: Var) -> Result<Var> {
    g.weighted_sum(&[
        (jd, T::lit(w.pixel)),
        (jm, T::lit(w.matching)),
        (jg, T::lit(w.gender)),
    ])
}
