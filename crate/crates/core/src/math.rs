//! Vector primitives shared by every other module.

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};

/// Norms at or below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > ZERO_NORM_EPS) {
        return Err(DasError::ZeroNorm { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Symmetric matrix of pairwise ℓ2 distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from explicit row-major entries. Useful for fixtures;
    /// symmetry is checked, the metric axioms are not.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(DasError::ShapeMismatch(format!(
                "{} entries for a {n}x{n} distance matrix",
                entries.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(DasError::ShapeMismatch(format!(
                        "distance matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }
}

pub fn pairwise_distances<V: AsRef<[f64]>>(rows: &[V]) -> Result<DistanceMatrix> {
    let n = rows.len();
    if let Some(first) = rows.first() {
        let d = first.as_ref().len();
        for r in rows {
            if r.as_ref().len() != d {
                return Err(DasError::DimensionMismatch {
                    expected: d,
                    got: r.as_ref().len(),
                });
            }
        }
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = distance(rows[i].as_ref(), rows[j].as_ref());
            entries[i * n + j] = dij;
            entries[j * n + i] = dij;
        }
    }
    Ok(DistanceMatrix { n, entries })
}

/// Indices of the `k` largest entries of `v`, ties broken toward the lower
/// index, returned in ascending order.
pub fn top_k_indices<T: Copy + PartialOrd>(v: &[T], k: usize) -> Result<Vec<usize>> {
    if k < 1 || k > v.len() {
        return Err(DasError::KOutOfRange { k, dim: v.len() });
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    // Stable sort by descending value keeps lower indices first among ties.
    order.sort_by(|&a, &b| {
        v[b].partial_cmp(&v[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// Gradient of `x ↦ x / ‖x‖` pulled back from the normalized output.
///
/// Given the normalized vector `unit` and the pre-normalization norm, maps an
/// upstream gradient `g` to `(g − unit·⟨unit, g⟩) / norm`.
pub fn normalize_backward(unit: &[f64], pre_norm: f64, g: &[f64]) -> Vec<f64> {
    let proj = dot(unit, g);
    unit.iter()
        .zip(g)
        .map(|(u, gi)| (gi - u * proj) / pre_norm)
        .collect()
}
