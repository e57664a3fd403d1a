//! Labeled point clouds: a synthetic Gaussian generator and CSV ingestion.
//!
//! Every dataset carries a disjoint-class split: the first half of the class
//! ids (rounded up) is used for training and the remainder for retrieval
//! evaluation on unseen classes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<LabeledPoint>,
    class_index: BTreeMap<usize, Vec<usize>>,
    train_classes: Vec<usize>,
    test_classes: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from points whose labels are already dense
    /// (`0..C`), applying the first-half/second-half class split.
    pub fn from_points(points: Vec<LabeledPoint>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(DasError::InvalidConfig("dataset has no points".into()));
        };
        let dim = first.features.len();
        let mut class_index: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            if p.features.len() != dim {
                return Err(DasError::DimensionMismatch {
                    expected: dim,
                    got: p.features.len(),
                });
            }
            if p.features.iter().any(|x| !x.is_finite()) {
                return Err(DasError::InvalidConfig(format!(
                    "point {i} has non-finite features"
                )));
            }
            class_index.entry(p.label).or_default().push(i);
        }
        let classes: Vec<usize> = class_index.keys().copied().collect();
        if classes.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(DasError::InvalidConfig(
                "labels must be dense class ids 0..C".into(),
            ));
        }
        let n_train = classes.len().div_ceil(2);
        Ok(Self {
            points,
            class_index,
            train_classes: classes[..n_train].to_vec(),
            test_classes: classes[n_train..].to_vec(),
        })
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.points[0].features.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn class_index(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.class_index
    }

    pub fn train_classes(&self) -> &[usize] {
        &self.train_classes
    }

    pub fn test_classes(&self) -> &[usize] {
        &self.test_classes
    }

    pub fn indices_of(&self, class: usize) -> &[usize] {
        self.class_index.get(&class).map_or(&[], Vec::as_slice)
    }

    /// Points of the test classes, in dataset order.
    pub fn test_points(&self) -> Vec<&LabeledPoint> {
        let test: BTreeSet<usize> = self.test_classes.iter().copied().collect();
        self.points
            .iter()
            .filter(|p| test.contains(&p.label))
            .collect()
    }

    /// Writes the dataset as headerless CSV, features first and the label in
    /// the last column. Reals use the shortest representation that parses
    /// back to the same `f64`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for p in &self.points {
            line.clear();
            for x in &p.features {
                line.push_str(&format!("{x:?},"));
            }
            line.push_str(&p.label.to_string());
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self {
            classes: 16,
            per_class: 64,
            dim: 32,
            center_scale: 1.0,
            noise_sigma: 0.5,
        }
    }
}

/// `C` isotropic Gaussian clusters with centers uniform in
/// `[-center_scale, center_scale]^dim`. Points are grouped by class.
pub fn generate_gaussian_clusters(spec: &GaussianSpec, rng: &mut SeededRng) -> Result<Dataset> {
    if spec.classes < 2 || spec.per_class < 2 || spec.dim < 2 {
        return Err(DasError::InvalidConfig(format!(
            "gaussian generator needs classes >= 2, per_class >= 2, dim >= 2 (got {}, {}, {})",
            spec.classes, spec.per_class, spec.dim
        )));
    }
    if !(spec.noise_sigma > 0.0) || !spec.noise_sigma.is_finite() {
        return Err(DasError::InvalidConfig(format!(
            "noise_sigma must be positive, got {}",
            spec.noise_sigma
        )));
    }
    if !(spec.center_scale >= 0.0) || !spec.center_scale.is_finite() {
        return Err(DasError::InvalidConfig(format!(
            "center_scale must be non-negative, got {}",
            spec.center_scale
        )));
    }
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| rng.uniform(-spec.center_scale, spec.center_scale))
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(spec.classes * spec.per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            let features = center
                .iter()
                .map(|c| c + spec.noise_sigma * rng.normal())
                .collect();
            points.push(LabeledPoint { features, label });
        }
    }
    Dataset::from_points(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    pub path: String,
    #[serde(default)]
    pub label_col: usize,
    #[serde(default)]
    pub header: bool,
}

pub fn load_csv(path: impl AsRef<Path>, label_col: usize, header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let ds = read_csv(file, label_col, header)?;
    ds.ok_or_else(|| DasError::EmptyFile(path.to_path_buf()))
}

/// Parses CSV rows into a dataset. Returns `Ok(None)` when there are no data
/// rows. Labels are re-indexed densely in ascending order of their value.
pub fn read_csv<R: Read>(input: R, label_col: usize, header: bool) -> Result<Option<Dataset>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut arity = None;
    let mut raw: Vec<(Vec<f64>, i64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DasError::Parse {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        if header && row == 1 {
            continue;
        }
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        match arity {
            None => {
                if label_col >= record.len() {
                    return Err(DasError::Parse {
                        row,
                        col: label_col,
                        msg: format!("label column {label_col} beyond {} columns", record.len()),
                    });
                }
                if record.len() < 2 {
                    return Err(DasError::Parse {
                        row,
                        col: 0,
                        msg: "need at least one feature column and a label column".into(),
                    });
                }
                arity = Some(record.len());
            }
            Some(a) if a != record.len() => {
                return Err(DasError::Parse {
                    row,
                    col: record.len().min(a),
                    msg: format!("expected {a} fields, found {}", record.len()),
                });
            }
            _ => {}
        }
        let mut features = Vec::with_capacity(record.len() - 1);
        let mut label = 0i64;
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if col == label_col {
                label = field.parse().map_err(|_| DasError::Parse {
                    row,
                    col,
                    msg: format!("label {field:?} is not an integer"),
                })?;
            } else {
                let x: f64 = field.parse().map_err(|_| DasError::Parse {
                    row,
                    col,
                    msg: format!("{field:?} is not a real number"),
                })?;
                if !x.is_finite() {
                    return Err(DasError::Parse {
                        row,
                        col,
                        msg: "non-finite value".into(),
                    });
                }
                features.push(x);
            }
        }
        raw.push((features, label));
    }
    if raw.is_empty() {
        return Ok(None);
    }
    let distinct: BTreeSet<i64> = raw.iter().map(|(_, l)| *l).collect();
    let dense: BTreeMap<i64, usize> = distinct.into_iter().zip(0..).collect();
    let points = raw
        .into_iter()
        .map(|(features, l)| LabeledPoint {
            features,
            label: dense[&l],
        })
        .collect();
    Dataset::from_points(points).map(Some)
}
