//! Retrieval and clustering metrics: Recall@k, NMI and pairwise F1.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};
use crate::math;
use crate::rng::SeededRng;

/// Leave-one-out Recall@k under ℓ2 distance. Neighbors are ranked by
/// distance with ties going to the lower index.
pub fn recall_at_k<V: AsRef<[f64]>>(embeddings: &[V], labels: &[usize], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(DasError::LengthMismatch { left: n, right: labels.len() });
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if n < 2 || max_k >= n {
        return Err(DasError::KTooLarge { k: max_k, n });
    }
    if ks.contains(&0) {
        return Err(DasError::InvalidConfig("recall k must be >= 1".into()));
    }
    let dm = math::pairwise_distances(embeddings)?;
    // For each query, rank of its nearest same-label neighbor (1-based).
    let mut first_hit = Vec::with_capacity(n);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for q in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != q));
        let row = dm.row(q);
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        first_hit.push(order.iter().position(|&j| labels[j] == labels[q]).map(|p| p + 1));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = first_hit.iter().filter(|h| h.is_some_and(|r| r <= k)).count();
            (k, hits as f64 / n as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Lloyd's algorithm from k-means++ seeding. Deterministic given the RNG.
/// Empty clusters are re-seeded with the point farthest from its centroid.
pub fn kmeans<V: AsRef<[f64]>>(points: &[V], k: usize, rng: &mut SeededRng, max_iter: usize) -> Result<Clustering> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(DasError::KTooLarge { k, n });
    }
    let dim = points[0].as_ref().len();
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.below(n)].as_ref().to_vec());
    let mut closest: Vec<f64> = points.iter().map(|p| sq(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let next = rng.weighted_index(&closest).unwrap_or_else(|| {
            // All remaining mass is zero (duplicates): take the first point
            // not already used as a centroid, else any.
            (0..n)
                .find(|&i| !centroids.iter().any(|c| c.as_slice() == points[i].as_ref()))
                .unwrap_or(0)
        });
        let c = points[next].as_ref().to_vec();
        for (d, p) in closest.iter_mut().zip(points) {
            *d = d.min(sq(p.as_ref(), &c));
        }
        centroids.push(c);
    }

    let assign = |centroids: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = (f64::INFINITY, 0);
                for (c, cen) in centroids.iter().enumerate() {
                    let d = sq(p.as_ref(), cen);
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1
            })
            .collect()
    };

    let mut assignment = assign(&centroids);
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq(points[a].as_ref(), &centroids[assignment[a]]);
                        let db = sq(points[b].as_ref(), &centroids[assignment[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                centroids[c] = points[far].as_ref().to_vec();
            }
        }
        let next = assign(&centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| sq(p.as_ref(), &centroids[c]))
        .sum();
    Ok(Clustering {
        assignment,
        centroids,
        inertia,
        iterations,
    })
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(DasError::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(A; L) / sqrt(H(A) H(L))` with natural logarithms; 0 when either
/// entropy vanishes.
pub fn nmi(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(assignment, labels)?;
    let n = assignment.len();
    if n == 0 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cl: BTreeMap<usize, usize> = BTreeMap::new();
    for (&a, &l) in assignment.iter().zip(labels) {
        *joint.entry((a, l)).or_default() += 1;
        *ca.entry(a).or_default() += 1;
        *cl.entry(l).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), nf);
    let hl = entropy(cl.values().copied(), nf);
    if ha <= 0.0 || hl <= 0.0 {
        return Ok(0.0);
    }
    let mut cells: Vec<(&(usize, usize), &usize)> = joint.iter().collect();
    cells.sort();
    let mi: f64 = cells
        .into_iter()
        .map(|(&(a, l), &c)| {
            let pxy = c as f64 / nf;
            let px = ca[&a] as f64 / nf;
            let py = cl[&l] as f64 / nf;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((mi / (ha * hl).sqrt()).clamp(0.0, 1.0))
}

fn pairs_within(counts: impl Iterator<Item = usize>) -> u64 {
    counts.map(|c| (c as u64) * (c as u64).saturating_sub(1) / 2).sum()
}

/// Pairwise F1 between a clustering and the label partition.
pub fn f1_score(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(assignment, labels)?;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cl: HashMap<usize, usize> = HashMap::new();
    for (&a, &l) in assignment.iter().zip(labels) {
        *joint.entry((a, l)).or_default() += 1;
        *ca.entry(a).or_default() += 1;
        *cl.entry(l).or_default() += 1;
    }
    let tp = pairs_within(joint.values().copied());
    let same_cluster = pairs_within(ca.values().copied());
    let same_label = pairs_within(cl.values().copied());
    if tp == 0 || same_cluster == 0 || same_label == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / same_cluster as f64;
    let recall = tp as f64 / same_label as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub f1: f64,
    pub n_queries: usize,
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }

    /// Flat JSON object: `step`, `recall@{k}`, `nmi`, `f1`, `n_queries`.
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("step".into(), self.step.into());
        for (k, v) in &self.recall_at {
            m.insert(format!("recall@{k}"), (*v).into());
        }
        m.insert("nmi".into(), self.nmi.into());
        m.insert("f1".into(), self.f1.into());
        m.insert("n_queries".into(), self.n_queries.into());
        serde_json::Value::Object(m)
    }

    pub fn from_json_value(value: &serde_json::Value) -> Option<Self> {
        let obj = value.as_object()?;
        let mut recall_at = BTreeMap::new();
        for (key, v) in obj {
            if let Some(k) = key.strip_prefix("recall@") {
                recall_at.insert(k.parse().ok()?, v.as_f64()?);
            }
        }
        Some(Self {
            step: obj.get("step")?.as_u64()? as usize,
            recall_at,
            nmi: obj.get("nmi")?.as_f64()?,
            f1: obj.get("f1")?.as_f64()?,
            n_queries: obj.get("n_queries").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
        })
    }
}

/// Recall@k over `ks` (silently dropping k ≥ n), then k-means with one
/// cluster per distinct label for NMI and F1.
pub fn evaluate_embeddings<V: AsRef<[f64]>>(
    embeddings: &[V],
    labels: &[usize],
    ks: &[usize],
    kmeans_seed: u64,
    step: usize,
) -> Result<EvalReport> {
    let n = embeddings.len();
    let ks: Vec<usize> = ks.iter().copied().filter(|&k| k >= 1 && k < n).collect();
    let recall_at = if ks.is_empty() {
        BTreeMap::new()
    } else {
        recall_at_k(embeddings, labels, &ks)?
    };
    let classes = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let clustering = kmeans(embeddings, classes.max(1), &mut SeededRng::new(kmeans_seed), 100)?;
    Ok(EvalReport {
        step,
        recall_at,
        nmi: nmi(&clustering.assignment, labels)?,
        f1: f1_score(&clustering.assignment, labels)?,
        n_queries: n,
    })
}
