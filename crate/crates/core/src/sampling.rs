//! Batch construction and pair/triplet sampling.
//!
//! Samplers only see a distance matrix and labels. Real and produced
//! embeddings are indistinguishable to them; the only knob is the
//! [`AnchorPool`], which can restrict anchors to a prefix of the batch.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabeledPoint};
use crate::error::{DasError, Result};
use crate::math::DistanceMatrix;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    /// Classes per batch.
    #[serde(rename = "P")]
    pub classes: usize,
    /// Samples per class.
    #[serde(rename = "M")]
    pub per_class: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 2,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class < 2 {
            return Err(DasError::InvalidConfig(format!(
                "batch needs P >= 2 and M >= 2 (got P={}, M={})",
                self.classes, self.per_class
            )));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.classes * self.per_class
    }
}

/// `P` distinct training classes, `M` points each, class-contiguous.
/// Classes with fewer than `M` points are sampled with replacement.
pub fn sample_batch<'a>(
    dataset: &'a Dataset,
    spec: BatchSpec,
    rng: &mut SeededRng,
) -> Result<Vec<&'a LabeledPoint>> {
    spec.validate()?;
    let train = dataset.train_classes();
    if train.len() < spec.classes {
        return Err(DasError::NotEnoughClasses {
            needed: spec.classes,
            available: train.len(),
        });
    }
    let mut classes = train.to_vec();
    // Partial Fisher-Yates: the first P entries are a uniform draw.
    for i in 0..spec.classes {
        let j = i + rng.below(classes.len() - i);
        classes.swap(i, j);
    }
    let mut batch = Vec::with_capacity(spec.size());
    for &c in &classes[..spec.classes] {
        let members = dataset.indices_of(c);
        if members.len() >= spec.per_class {
            let mut pool = members.to_vec();
            for i in 0..spec.per_class {
                let j = i + rng.below(pool.len() - i);
                pool.swap(i, j);
            }
            batch.extend(pool[..spec.per_class].iter().map(|&i| &dataset.points()[i]));
        } else {
            for _ in 0..spec.per_class {
                let i = members[rng.below(members.len())];
                batch.push(&dataset.points()[i]);
            }
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub positive: bool,
}

/// Which batch indices may serve as anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorPool {
    #[default]
    All,
    /// Only indices `< n`.
    Prefix(usize),
}

impl AnchorPool {
    fn limit(self, n: usize) -> usize {
        match self {
            AnchorPool::All => n,
            AnchorPool::Prefix(k) => k.min(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Random,
    Semihard,
    Softhard,
    #[default]
    Distance,
    /// Every unordered pair of the batch; only meaningful for pair losses.
    All,
}

impl FromStr for Sampler {
    type Err = DasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Sampler::Random),
            "semihard" => Ok(Sampler::Semihard),
            "softhard" => Ok(Sampler::Softhard),
            "distance" => Ok(Sampler::Distance),
            "all" => Ok(Sampler::All),
            other => Err(DasError::InvalidConfig(format!("unknown sampler {other:?}"))),
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampler::Random => "random",
            Sampler::Semihard => "semihard",
            Sampler::Softhard => "softhard",
            Sampler::Distance => "distance",
            Sampler::All => "all",
        })
    }
}

/// Default lower clip on distances for distance-weighted sampling.
pub const DISTANCE_CLIP: f64 = 0.5;

fn check_shape(d: &DistanceMatrix, labels: &[usize]) -> Result<()> {
    if d.len() != labels.len() {
        return Err(DasError::LengthMismatch {
            left: d.len(),
            right: labels.len(),
        });
    }
    Ok(())
}

fn positives_of(labels: &[usize], a: usize) -> Vec<usize> {
    (0..labels.len())
        .filter(|&j| j != a && labels[j] == labels[a])
        .collect()
}

fn negatives_of(labels: &[usize], a: usize) -> Vec<usize> {
    (0..labels.len()).filter(|&j| labels[j] != labels[a]).collect()
}

/// `count` triplets with a uniform anchor (among anchors that have both a
/// positive and a negative), uniform positive and uniform negative.
pub fn sample_random_triplets(
    labels: &[usize],
    count: usize,
    pool: AnchorPool,
    rng: &mut SeededRng,
) -> Result<Vec<Triplet>> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let n = labels.len();
    let anchors: Vec<usize> = (0..pool.limit(n))
        .filter(|&a| by_label[&labels[a]].len() >= 2 && by_label[&labels[a]].len() < n)
        .collect();
    if anchors.is_empty() {
        return Err(DasError::NoValidTriplet);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = anchors[rng.below(anchors.len())];
        let same = &by_label[&labels[anchor]];
        // Uniform over same-label members excluding the anchor itself.
        let mut k = rng.below(same.len() - 1);
        if same[k] >= anchor {
            k += 1;
        }
        let positive = same[k];
        // Uniform over the other labels' members.
        let mut r = rng.below(n - same.len());
        let mut negative = 0;
        for j in 0..n {
            if labels[j] != labels[anchor] {
                if r == 0 {
                    negative = j;
                    break;
                }
                r -= 1;
            }
        }
        out.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    Ok(out)
}

/// Negative for one `(anchor, positive)` pair under the semi-hard rule:
/// uniform in the open window `D(a,p) < D(a,n) < D(a,p) + margin`; else the
/// nearest negative with `D(a,n) >= D(a,p)`; else (every negative is closer
/// than the positive) the farthest negative.
pub fn semihard_negative(
    d: &DistanceMatrix,
    anchor: usize,
    positive: usize,
    negatives: &[usize],
    margin: f64,
    rng: &mut SeededRng,
) -> Option<usize> {
    if negatives.is_empty() {
        return None;
    }
    let dap = d.get(anchor, positive);
    let dist = |n: usize| d.get(anchor, n);
    let window: Vec<usize> = negatives
        .iter()
        .copied()
        .filter(|&n| dap < dist(n) && dist(n) < dap + margin)
        .collect();
    if let Some(&n) = rng.choose(&window) {
        return Some(n);
    }
    // Ties keep the lower index in both fallbacks.
    let nearest_valid = negatives
        .iter()
        .copied()
        .filter(|&n| dist(n) >= dap)
        .fold(None::<usize>, |best, n| match best {
            Some(b) if dist(b) <= dist(n) => Some(b),
            _ => Some(n),
        });
    nearest_valid.or_else(|| {
        negatives.iter().copied().fold(None::<usize>, |best, n| match best {
            Some(b) if dist(b) >= dist(n) => Some(b),
            _ => Some(n),
        })
    })
}

pub fn sample_semihard_triplets(
    d: &DistanceMatrix,
    labels: &[usize],
    margin: f64,
    pool: AnchorPool,
    rng: &mut SeededRng,
) -> Result<Vec<Triplet>> {
    check_shape(d, labels)?;
    let mut out = Vec::new();
    for anchor in 0..pool.limit(labels.len()) {
        let negatives = negatives_of(labels, anchor);
        for positive in positives_of(labels, anchor) {
            if let Some(negative) = semihard_negative(d, anchor, positive, &negatives, margin, rng) {
                out.push(Triplet {
                    anchor,
                    positive,
                    negative,
                });
            }
        }
    }
    Ok(out)
}

/// Unnormalized log-weight `−log q(d)` of the hypersphere distance density
/// `q(d) ∝ d^{dim−2} (1 − d²/4)^{(dim−3)/2}`, with `d` clipped below at `clip`.
pub fn distance_log_weight(distance: f64, dim: usize, clip: f64) -> f64 {
    let d = distance.max(clip);
    let n = dim as f64;
    // Keep the log finite at the antipode.
    let tail = (1.0 - 0.25 * d * d).max(1e-8);
    -((n - 2.0) * d.ln() + 0.5 * (n - 3.0) * tail.ln())
}

/// Sampling probabilities over `distances` proportional to `1/q(d)`.
/// The weights are rescaled by their maximum, which caps them at 1 and keeps
/// them finite for any input.
pub fn distance_weights(distances: &[f64], dim: usize, clip: f64) -> Vec<f64> {
    let logs: Vec<f64> = distances
        .iter()
        .map(|&d| distance_log_weight(d, dim, clip))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// One triplet per `(anchor, positive)`, negative drawn with probability
/// `∝ 1/q(D(a,n))` where `dim` is the embedding dimension.
pub fn sample_distance_weighted(
    d: &DistanceMatrix,
    labels: &[usize],
    dim: usize,
    clip: f64,
    pool: AnchorPool,
    rng: &mut SeededRng,
) -> Result<Vec<Triplet>> {
    check_shape(d, labels)?;
    let mut out = Vec::new();
    for anchor in 0..pool.limit(labels.len()) {
        let negatives = negatives_of(labels, anchor);
        if negatives.is_empty() {
            continue;
        }
        let dists: Vec<f64> = negatives.iter().map(|&n| d.get(anchor, n)).collect();
        let weights = distance_weights(&dists, dim, clip);
        for positive in positives_of(labels, anchor) {
            let k = rng
                .weighted_index(&weights)
                .unwrap_or_else(|| rng.below(negatives.len()));
            out.push(Triplet {
                anchor,
                positive,
                negative: negatives[k],
            });
        }
    }
    Ok(out)
}

/// Hard positives (farther than the nearest negative) and hard negatives
/// (closer than the farthest positive) of one anchor.
pub fn softhard_sets(
    d: &DistanceMatrix,
    anchor: usize,
    positives: &[usize],
    negatives: &[usize],
) -> (Vec<usize>, Vec<usize>) {
    let nearest_neg = negatives
        .iter()
        .map(|&n| d.get(anchor, n))
        .fold(f64::INFINITY, f64::min);
    let farthest_pos = positives
        .iter()
        .map(|&p| d.get(anchor, p))
        .fold(f64::NEG_INFINITY, f64::max);
    let hard_pos = positives
        .iter()
        .copied()
        .filter(|&p| d.get(anchor, p) > nearest_neg)
        .collect();
    let hard_neg = negatives
        .iter()
        .copied()
        .filter(|&n| d.get(anchor, n) < farthest_pos)
        .collect();
    (hard_pos, hard_neg)
}

/// One triplet per anchor from the hard sets, falling back to uniform draws
/// when a hard set is empty.
pub fn sample_softhard_triplets(
    d: &DistanceMatrix,
    labels: &[usize],
    pool: AnchorPool,
    rng: &mut SeededRng,
) -> Result<Vec<Triplet>> {
    check_shape(d, labels)?;
    let mut out = Vec::new();
    for anchor in 0..pool.limit(labels.len()) {
        let positives = positives_of(labels, anchor);
        let negatives = negatives_of(labels, anchor);
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let (hard_pos, hard_neg) = softhard_sets(d, anchor, &positives, &negatives);
        let pos_pool = if hard_pos.is_empty() { &positives } else { &hard_pos };
        let neg_pool = if hard_neg.is_empty() { &negatives } else { &hard_neg };
        let positive = pos_pool[rng.below(pos_pool.len())];
        let negative = neg_pool[rng.below(neg_pool.len())];
        out.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    Ok(out)
}

/// All unordered pairs `i < j`.
pub fn build_pairs(labels: &[usize]) -> Vec<Pair> {
    let n = labels.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(Pair {
                i,
                j,
                positive: labels[i] == labels[j],
            });
        }
    }
    out
}

/// Splits triplets into their anchor-positive and anchor-negative pairs.
pub fn triplets_to_pairs(triplets: &[Triplet]) -> Vec<Pair> {
    triplets
        .iter()
        .flat_map(|t| {
            [
                Pair {
                    i: t.anchor,
                    j: t.positive,
                    positive: true,
                },
                Pair {
                    i: t.anchor,
                    j: t.negative,
                    positive: false,
                },
            ]
        })
        .collect()
}

/// Checks the label constraints of every triplet.
pub fn validate_triplets(triplets: &[Triplet], labels: &[usize]) -> bool {
    triplets.iter().all(|t| {
        let n = labels.len();
        t.anchor < n
            && t.positive < n
            && t.negative < n
            && t.anchor != t.positive
            && labels[t.anchor] == labels[t.positive]
            && labels[t.anchor] != labels[t.negative]
    })
}
