//! Densely-anchored sampling: produce extra embeddings around each anchor.
//!
//! A produced embedding is `normalize(s ⊙ v + b)` where
//! * `s` rescales the class's most frequently highly-activated channels by a
//!   factor drawn from `Uniform[1 − r_s, 1 + r_s]` and leaves the others at 1
//!   (discriminative feature scaling), and
//! * `b = r_b · t` adds an intra-class difference `t = v_i − v_j` remembered
//!   in a per-class FIFO bank (memorized transformation shifting).
//!
//! Produced embeddings inherit the anchor's label. Gradients flow into the
//! anchor only; `s` and `b` are constants of each draw.

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};
use crate::math::{self, top_k_indices, ZERO_NORM_EPS};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DasConfig {
    pub enabled: bool,
    /// Produced embeddings per anchor.
    #[serde(rename = "T")]
    pub per_anchor: usize,
    /// Channels counted per embedding and scaled per class.
    #[serde(rename = "K")]
    pub top_k: usize,
    /// Transformation bank capacity per class.
    #[serde(rename = "Z")]
    pub bank_capacity: usize,
    #[serde(rename = "rs")]
    pub scale_radius: f64,
    #[serde(rename = "rb")]
    pub shift_magnitude: f64,
    /// Scaling only: shifting factors are zero.
    pub dfs_only: bool,
    /// Shifting only: scaling factors are one.
    pub mts_only: bool,
}

impl Default for DasConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            per_anchor: 3,
            top_k: 4,
            bank_capacity: 10,
            scale_radius: 1e-2,
            shift_magnitude: 1e-2,
            dfs_only: false,
            mts_only: false,
        }
    }
}

impl DasConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.top_k < 1 || self.top_k > dim {
            return Err(DasError::KOutOfRange { k: self.top_k, dim });
        }
        if self.bank_capacity < 1 {
            return Err(DasError::InvalidConfig("das.Z must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.scale_radius) {
            return Err(DasError::InvalidConfig(format!(
                "das.rs must be in [0, 1), got {}",
                self.scale_radius
            )));
        }
        if !(self.shift_magnitude >= 0.0) || !self.shift_magnitude.is_finite() {
            return Err(DasError::InvalidConfig(format!(
                "das.rb must be finite and >= 0, got {}",
                self.shift_magnitude
            )));
        }
        if self.dfs_only && self.mts_only {
            return Err(DasError::InvalidConfig(
                "das.dfs_only and das.mts_only are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    /// Scaling radius after the ablation toggles.
    pub fn effective_scale_radius(&self) -> f64 {
        if self.mts_only {
            0.0
        } else {
            self.scale_radius
        }
    }

    /// Shift magnitude after the ablation toggles.
    pub fn effective_shift_magnitude(&self) -> f64 {
        if self.dfs_only {
            0.0
        } else {
            self.shift_magnitude
        }
    }
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(DasError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Per-class counts of how often each channel was among an embedding's
/// top-K entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRecorder {
    classes: usize,
    dim: usize,
    counts: Vec<u64>,
}

impl FrequencyRecorder {
    pub fn new(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            counts: vec![0; classes * dim],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, class: usize) -> &[u64] {
        &self.counts[class * self.dim..(class + 1) * self.dim]
    }

    pub fn record(&mut self, embedding: &[f64], label: usize, k: usize) -> Result<()> {
        check_label(label, self.classes)?;
        if embedding.len() != self.dim {
            return Err(DasError::DimensionMismatch {
                expected: self.dim,
                got: embedding.len(),
            });
        }
        let top = top_k_indices(embedding, k)?;
        let row = &mut self.counts[label * self.dim..(label + 1) * self.dim];
        for i in top {
            row[i] += 1;
        }
        Ok(())
    }

    /// Records a batch. Validates every label and dimension before touching
    /// any counter.
    pub fn update<V: AsRef<[f64]>>(&mut self, embeddings: &[V], labels: &[usize], k: usize) -> Result<()> {
        if embeddings.len() != labels.len() {
            return Err(DasError::LengthMismatch {
                left: embeddings.len(),
                right: labels.len(),
            });
        }
        if k < 1 || k > self.dim {
            return Err(DasError::KOutOfRange { k, dim: self.dim });
        }
        for (e, &l) in embeddings.iter().zip(labels) {
            check_label(l, self.classes)?;
            if e.as_ref().len() != self.dim {
                return Err(DasError::DimensionMismatch {
                    expected: self.dim,
                    got: e.as_ref().len(),
                });
            }
        }
        for (e, &l) in embeddings.iter().zip(labels) {
            self.record(e.as_ref(), l, k)?;
        }
        Ok(())
    }

    pub fn mask(&self, k: usize) -> Result<ChannelMask> {
        if k < 1 || k > self.dim {
            return Err(DasError::KOutOfRange { k, dim: self.dim });
        }
        let mut bits = vec![false; self.classes * self.dim];
        for c in 0..self.classes {
            for i in top_k_indices(self.row(c), k)? {
                bits[c * self.dim + i] = true;
            }
        }
        Ok(ChannelMask {
            dim: self.dim,
            bits,
        })
    }
}

/// Class-wise binary mask of discriminative channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    dim: usize,
    bits: Vec<bool>,
}

impl ChannelMask {
    pub fn row(&self, class: usize) -> &[bool] {
        &self.bits[class * self.dim..(class + 1) * self.dim]
    }

    pub fn classes(&self) -> usize {
        self.bits.len() / self.dim.max(1)
    }
}

/// `s[k] = γ[k]` on masked channels, 1 elsewhere, with γ i.i.d.
/// `Uniform[1 − r_s, 1 + r_s]`. Only masked channels consume random draws.
pub fn scaling_factor(mask_row: &[bool], radius: f64, rng: &mut SeededRng) -> Vec<f64> {
    mask_row
        .iter()
        .map(|&m| {
            if m {
                rng.uniform(1.0 - radius, 1.0 + radius)
            } else {
                1.0
            }
        })
        .collect()
}

/// Applies given γ draws under a mask.
pub fn scaling_from_gamma(mask_row: &[bool], gamma: &[f64]) -> Vec<f64> {
    mask_row
        .iter()
        .zip(gamma)
        .map(|(&m, &g)| if m { g } else { 1.0 })
        .collect()
}

/// All ordered differences `v_i − v_j`, `i ≠ j`, in row-major order.
pub fn intra_class_transforms<V: AsRef<[f64]>>(group: &[V]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(group.len() * group.len().saturating_sub(1));
    for (i, vi) in group.iter().enumerate() {
        for (j, vj) in group.iter().enumerate() {
            if i != j {
                out.push(
                    vi.as_ref()
                        .iter()
                        .zip(vj.as_ref())
                        .map(|(a, b)| a - b)
                        .collect(),
                );
            }
        }
    }
    out
}

/// Per-class FIFO ring of intra-class transformations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationBank {
    classes: usize,
    capacity: usize,
    dim: usize,
    slots: Vec<f64>,
    cursor: Vec<usize>,
    filled: Vec<usize>,
}

impl TransformationBank {
    pub fn new(classes: usize, capacity: usize, dim: usize) -> Self {
        Self {
            classes,
            capacity,
            dim,
            slots: vec![0.0; classes * capacity * dim],
            cursor: vec![0; classes],
            filled: vec![0; classes],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn filled(&self, class: usize) -> usize {
        self.filled[class]
    }

    pub fn cursor(&self, class: usize) -> usize {
        self.cursor[class]
    }

    pub fn slot(&self, class: usize, z: usize) -> &[f64] {
        let start = (class * self.capacity + z) * self.dim;
        &self.slots[start..start + self.dim]
    }

    pub fn enqueue(&mut self, class: usize, transform: &[f64]) -> Result<()> {
        check_label(class, self.classes)?;
        if transform.len() != self.dim {
            return Err(DasError::DimensionMismatch {
                expected: self.dim,
                got: transform.len(),
            });
        }
        let z = self.cursor[class];
        let start = (class * self.capacity + z) * self.dim;
        self.slots[start..start + self.dim].copy_from_slice(transform);
        self.cursor[class] = (z + 1) % self.capacity;
        self.filled[class] = (self.filled[class] + 1).min(self.capacity);
        Ok(())
    }

    /// Enqueues the ordered transformations of one class group. Groups with
    /// fewer than two members are skipped. Returns the number enqueued.
    pub fn update_group<V: AsRef<[f64]>>(&mut self, class: usize, group: &[V]) -> Result<usize> {
        check_label(class, self.classes)?;
        if group.len() < 2 {
            return Ok(0);
        }
        let transforms = intra_class_transforms(group);
        for t in &transforms {
            self.enqueue(class, t)?;
        }
        Ok(transforms.len())
    }

    /// Groups a labeled batch by class (first-appearance order) and enqueues
    /// each group's transformations.
    pub fn update<V: AsRef<[f64]>>(&mut self, embeddings: &[V], labels: &[usize]) -> Result<usize> {
        if embeddings.len() != labels.len() {
            return Err(DasError::LengthMismatch {
                left: embeddings.len(),
                right: labels.len(),
            });
        }
        for &l in labels {
            check_label(l, self.classes)?;
        }
        let mut order: Vec<usize> = Vec::new();
        for &l in labels {
            if !order.contains(&l) {
                order.push(l);
            }
        }
        let mut total = 0;
        for c in order {
            let group: Vec<&[f64]> = embeddings
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(e, _)| e.as_ref())
                .collect();
            total += self.update_group(c, &group)?;
        }
        Ok(total)
    }

    /// Index of a uniformly chosen filled slot, or `None` for an empty class.
    pub fn sample_slot(&self, class: usize, rng: &mut SeededRng) -> Result<Option<usize>> {
        check_label(class, self.classes)?;
        let filled = self.filled[class];
        Ok((filled > 0).then(|| rng.below(filled)))
    }

    /// `b = r_b · t` for a uniformly chosen stored transformation, or the
    /// zero vector when the class has none yet.
    pub fn shifting_factor(&self, class: usize, magnitude: f64, rng: &mut SeededRng) -> Result<Vec<f64>> {
        Ok(match self.sample_slot(class, rng)? {
            Some(z) => self.slot(class, z).iter().map(|x| magnitude * x).collect(),
            None => vec![0.0; self.dim],
        })
    }
}

/// A produced embedding together with what is needed to pull gradients
/// back to its anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Produced {
    pub embedding: Vec<f64>,
    pub label: usize,
    /// Index of the anchor in the batch it was produced from.
    pub source: usize,
    scale: Vec<f64>,
    /// `None` for verbatim copies, whose Jacobian is the identity.
    pre_norm: Option<f64>,
}

impl Produced {
    /// A verbatim copy of an anchor.
    pub fn copy_of(anchor: &[f64], label: usize, source: usize) -> Self {
        Self {
            embedding: anchor.to_vec(),
            label,
            source,
            scale: vec![1.0; anchor.len()],
            pre_norm: None,
        }
    }

    /// Gradient with respect to the anchor given the gradient with respect
    /// to the produced embedding: `s ⊙ (I − v'v'ᵀ) g / ‖s ⊙ v + b‖`.
    pub fn anchor_grad(&self, g: &[f64]) -> Vec<f64> {
        let Some(pre_norm) = self.pre_norm else {
            return g.to_vec();
        };
        math::normalize_backward(&self.embedding, pre_norm, g)
            .into_iter()
            .zip(&self.scale)
            .map(|(x, s)| x * s)
            .collect()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
}

/// `normalize(s ⊙ v + b)`.
pub fn compose(anchor: &[f64], scale: &[f64], shift: &[f64], label: usize, source: usize) -> Result<Produced> {
    if scale.len() != anchor.len() || shift.len() != anchor.len() {
        return Err(DasError::DimensionMismatch {
            expected: anchor.len(),
            got: if scale.len() != anchor.len() { scale.len() } else { shift.len() },
        });
    }
    let raw: Vec<f64> = anchor
        .iter()
        .zip(scale)
        .zip(shift)
        .map(|((v, s), b)| s * v + b)
        .collect();
    let pre_norm = math::norm(&raw);
    if !(pre_norm > ZERO_NORM_EPS) {
        return Err(DasError::ZeroNorm { norm: pre_norm });
    }
    Ok(Produced {
        embedding: raw.iter().map(|x| x / pre_norm).collect(),
        label,
        source,
        scale: scale.to_vec(),
        pre_norm: Some(pre_norm),
    })
}

/// Produces `T` embeddings around one anchor, drawing a fresh scaling and
/// shifting factor for each. Degenerate results (zero norm) are dropped with
/// a warning, so fewer than `T` may be returned.
pub fn das_produce(
    anchor: &[f64],
    label: usize,
    source: usize,
    mask: &ChannelMask,
    bank: &TransformationBank,
    config: &DasConfig,
    rng: &mut SeededRng,
) -> Result<Vec<Produced>> {
    check_label(label, mask.classes())?;
    let mut out = Vec::with_capacity(config.per_anchor);
    for _ in 0..config.per_anchor {
        let s = scaling_factor(mask.row(label), config.effective_scale_radius(), rng);
        let b = bank.shifting_factor(label, config.effective_shift_magnitude(), rng)?;
        match compose(anchor, &s, &b, label, source) {
            Ok(p) => out.push(p),
            Err(DasError::ZeroNorm { norm }) => {
                log::warn!("dropping produced embedding of anchor {source}: norm {norm:e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
