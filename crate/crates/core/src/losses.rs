//! Pair-based metric-learning losses with analytic embedding gradients.
//!
//! Distances are ℓ2 except for multi-similarity, which works on cosine
//! similarity. Pair and triplet losses are averaged over their active
//! (non-zero) terms. Multi-similarity is averaged over the anchors that have
//! at least one positive in the batch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};
use crate::math;
use crate::sampling::{Pair, Triplet};

/// Distances below this contribute no gradient (subgradient at coincident
/// points).
pub const MIN_GRAD_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
    pub active_count: usize,
    /// ∂value/∂β for the margin loss; zero for other losses.
    pub grad_beta: f64,
}

impl LossOutput {
    fn zeros(n: usize, d: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![vec![0.0; d]; n],
            active_count: 0,
            grad_beta: 0.0,
        }
    }

    fn scale(&mut self, s: f64) {
        self.value *= s;
        self.grad_beta *= s;
        for g in &mut self.grad {
            for x in g {
                *x *= s;
            }
        }
    }

    /// Divides value and gradients by the active count, if any.
    fn average(mut self) -> Self {
        if self.active_count > 0 {
            self.scale(1.0 / self.active_count as f64);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Contrastive,
    #[default]
    Triplet,
    Margin,
    #[serde(rename = "ms", alias = "multi_similarity")]
    MultiSimilarity,
}

impl FromStr for LossKind {
    type Err = DasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            "margin" => Ok(LossKind::Margin),
            "ms" | "multi_similarity" => Ok(LossKind::MultiSimilarity),
            other => Err(DasError::InvalidConfig(format!("unknown loss {other:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
            LossKind::Margin => "margin",
            LossKind::MultiSimilarity => "ms",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for MsParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 50.0,
            lambda: 1.0,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSpec {
    pub kind: LossKind,
    pub contrastive_margin: f64,
    pub triplet_margin: f64,
    pub margin_alpha: f64,
    /// Initial value of the learnable margin-loss boundary.
    pub margin_beta: f64,
    /// Learning rate of β; `None` means the main learning rate.
    pub margin_beta_lr: Option<f64>,
    pub ms: MsParams,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::Triplet,
            contrastive_margin: 0.5,
            triplet_margin: 0.2,
            margin_alpha: 0.2,
            margin_beta: 1.2,
            margin_beta_lr: None,
            ms: MsParams::default(),
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("contrastive_margin", self.contrastive_margin),
            ("triplet_margin", self.triplet_margin),
            ("margin_alpha", self.margin_alpha),
            ("margin_beta", self.margin_beta),
            ("ms.alpha", self.ms.alpha),
            ("ms.beta", self.ms.beta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DasError::InvalidConfig(format!("loss.{name} must be > 0, got {v}")));
            }
        }
        if !self.ms.epsilon.is_finite() || !self.ms.lambda.is_finite() {
            return Err(DasError::InvalidConfig("loss.ms parameters must be finite".into()));
        }
        Ok(())
    }
}

fn check_batch<V: AsRef<[f64]>>(embeddings: &[V]) -> Result<usize> {
    let d = embeddings.first().map_or(0, |e| e.as_ref().len());
    for e in embeddings {
        if e.as_ref().len() != d {
            return Err(DasError::DimensionMismatch {
                expected: d,
                got: e.as_ref().len(),
            });
        }
    }
    Ok(d)
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(DasError::ShapeMismatch(format!("index {i} outside batch of {n}")));
    }
    Ok(())
}

/// Adds `coef · ∂D_ij/∂(v_i, v_j)` to the gradient buffers.
fn add_distance_grad(grad: &mut [Vec<f64>], vi: &[f64], vj: &[f64], i: usize, j: usize, dist: f64, coef: f64) {
    if dist < MIN_GRAD_DISTANCE || coef == 0.0 {
        return;
    }
    let s = coef / dist;
    for k in 0..vi.len() {
        let g = s * (vi[k] - vj[k]);
        grad[i][k] += g;
        grad[j][k] -= g;
    }
}

pub fn contrastive_loss<V: AsRef<[f64]>>(embeddings: &[V], pairs: &[Pair], margin: f64) -> Result<LossOutput> {
    let d = check_batch(embeddings)?;
    let n = embeddings.len();
    let mut out = LossOutput::zeros(n, d);
    for p in pairs {
        check_index(p.i, n)?;
        check_index(p.j, n)?;
        let (vi, vj) = (embeddings[p.i].as_ref(), embeddings[p.j].as_ref());
        let dist = math::distance(vi, vj);
        let (term, coef) = if p.positive {
            (dist, 1.0)
        } else {
            let h = margin - dist;
            if h > 0.0 {
                (h, -1.0)
            } else {
                (0.0, 0.0)
            }
        };
        if term > 0.0 {
            out.value += term;
            out.active_count += 1;
            add_distance_grad(&mut out.grad, vi, vj, p.i, p.j, dist, coef);
        }
    }
    Ok(out.average())
}

pub fn triplet_loss<V: AsRef<[f64]>>(embeddings: &[V], triplets: &[Triplet], margin: f64) -> Result<LossOutput> {
    let d = check_batch(embeddings)?;
    let n = embeddings.len();
    let mut out = LossOutput::zeros(n, d);
    for t in triplets {
        check_index(t.anchor, n)?;
        check_index(t.positive, n)?;
        check_index(t.negative, n)?;
        let a = embeddings[t.anchor].as_ref();
        let p = embeddings[t.positive].as_ref();
        let ng = embeddings[t.negative].as_ref();
        let dap = math::distance(a, p);
        let dan = math::distance(a, ng);
        let term = dap - dan + margin;
        if term > 0.0 {
            out.value += term;
            out.active_count += 1;
            add_distance_grad(&mut out.grad, a, p, t.anchor, t.positive, dap, 1.0);
            add_distance_grad(&mut out.grad, a, ng, t.anchor, t.negative, dan, -1.0);
        }
    }
    Ok(out.average())
}

/// `[α + y(D − β)]₊` with `y = +1` for positive and `−1` for negative pairs.
/// Also reports ∂value/∂β.
pub fn margin_loss<V: AsRef<[f64]>>(embeddings: &[V], pairs: &[Pair], alpha: f64, beta: f64) -> Result<LossOutput> {
    let d = check_batch(embeddings)?;
    let n = embeddings.len();
    let mut out = LossOutput::zeros(n, d);
    for p in pairs {
        check_index(p.i, n)?;
        check_index(p.j, n)?;
        let (vi, vj) = (embeddings[p.i].as_ref(), embeddings[p.j].as_ref());
        let dist = math::distance(vi, vj);
        let y = if p.positive { 1.0 } else { -1.0 };
        let term = alpha + y * (dist - beta);
        if term > 0.0 {
            out.value += term;
            out.active_count += 1;
            out.grad_beta -= y;
            add_distance_grad(&mut out.grad, vi, vj, p.i, p.j, dist, y);
        }
    }
    Ok(out.average())
}

/// Multi-similarity loss with its standard pair mining on cosine similarity.
pub fn multi_similarity_loss<V: AsRef<[f64]>>(embeddings: &[V], labels: &[usize], ms: &MsParams) -> Result<LossOutput> {
    let d = check_batch(embeddings)?;
    let n = embeddings.len();
    if labels.len() != n {
        return Err(DasError::LengthMismatch { left: n, right: labels.len() });
    }
    let mut out = LossOutput::zeros(n, d);
    let mut anchors_with_positives = 0usize;
    for i in 0..n {
        let vi = embeddings[i].as_ref();
        let sims: Vec<f64> = (0..n).map(|j| math::dot(vi, embeddings[j].as_ref())).collect();
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        let neg: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        anchors_with_positives += 1;
        let min_pos = pos.iter().map(|&j| sims[j]).fold(f64::INFINITY, f64::min);
        let max_neg = neg.iter().map(|&j| sims[j]).fold(f64::NEG_INFINITY, f64::max);
        let mined_pos: Vec<usize> = pos.iter().copied().filter(|&j| sims[j] - ms.epsilon < max_neg).collect();
        let mined_neg: Vec<usize> = neg.iter().copied().filter(|&j| sims[j] + ms.epsilon > min_pos).collect();
        if mined_pos.is_empty() && mined_neg.is_empty() {
            continue;
        }
        out.active_count += 1;
        // Each side: (1/s)·log(1 + Σ exp(s·σ·(S − λ))) with σ = −1 for
        // positives and +1 for negatives. d/dS_ij = σ·e_j / (1 + Σ e).
        for (set, scale, sign) in [(&mined_pos, ms.alpha, -1.0), (&mined_neg, ms.beta, 1.0)] {
            if set.is_empty() {
                continue;
            }
            let exps: Vec<f64> = set.iter().map(|&j| (scale * sign * (sims[j] - ms.lambda)).exp()).collect();
            let denom = 1.0 + exps.iter().sum::<f64>();
            out.value += denom.ln() / scale;
            for (&j, e) in set.iter().zip(&exps) {
                let coef = sign * e / denom;
                let vj = embeddings[j].as_ref();
                for k in 0..d {
                    out.grad[i][k] += coef * vj[k];
                    out.grad[j][k] += coef * vi[k];
                }
            }
        }
    }
    if anchors_with_positives > 0 {
        out.scale(1.0 / anchors_with_positives as f64);
    }
    Ok(out)
}
