//! Multi-seed comparisons of configuration variants: ablations and sweeps.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{DasError, Result};
use crate::train::train;

/// A named set of config overrides applied on top of a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<(String, Value)>,
}

impl Variant {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            overrides: Vec::new(),
        }
    }

    pub fn set(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.overrides.push((key.into(), value.into()));
        self
    }

    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        self.overrides
            .iter()
            .try_fold(base.clone(), |cfg, (k, v)| cfg.with_value(k, v.clone()))
    }
}

/// Baseline, scaling only, shifting only, and both.
pub fn ablation_variants() -> Vec<Variant> {
    vec![
        Variant::new("baseline").set("das.enabled", false),
        Variant::new("dfs_only")
            .set("das.enabled", true)
            .set("das.dfs_only", true)
            .set("das.mts_only", false),
        Variant::new("mts_only")
            .set("das.enabled", true)
            .set("das.dfs_only", false)
            .set("das.mts_only", true),
        Variant::new("dfs+mts")
            .set("das.enabled", true)
            .set("das.dfs_only", false)
            .set("das.mts_only", false),
    ]
}

/// One variant per value of `key`, named `key=value`.
pub fn sweep_variants(key: &str, values: &[Value]) -> Vec<Variant> {
    values
        .iter()
        .map(|v| {
            let shown = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            Variant::new(format!("{key}={shown}")).set(key, v.clone())
        })
        .collect()
}

/// Sweep grid of the top-K channel count.
pub const K_SWEEP: [usize; 6] = [1, 2, 4, 8, 16, 32];
/// Sweep grid of the bank capacity.
pub const Z_SWEEP: [usize; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub variant: String,
    pub seed: u64,
    pub recall_at_1: Option<f64>,
    pub nmi: Option<f64>,
    pub f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and sample standard deviation (0 for fewer than two values).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub completed: usize,
    pub failed: usize,
    pub recall_at_1: Option<Summary>,
    pub nmi: Option<Summary>,
    pub f1: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub cells: Vec<CellResult>,
}

fn fmt_opt(s: Option<Summary>, field: fn(Summary) -> f64) -> String {
    s.map_or_else(String::new, |s| format!("{:?}", field(s)))
}

impl ComparisonTable {
    pub fn row(&self, variant: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,completed,failed,recall@1_mean,recall@1_std,nmi_mean,nmi_std,f1_mean,f1_std\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.completed,
                r.failed,
                fmt_opt(r.recall_at_1, |s| s.mean),
                fmt_opt(r.recall_at_1, |s| s.std),
                fmt_opt(r.nmi, |s| s.mean),
                fmt_opt(r.nmi, |s| s.std),
                fmt_opt(r.f1, |s| s.mean),
                fmt_opt(r.f1, |s| s.std),
            );
        }
        out
    }

    /// Fixed-width table with percentages.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        let mut out = format!(
            "{:<width$}  {:>5}  {:>15}  {:>15}  {:>15}\n",
            "variant", "runs", "R@1", "NMI", "F1"
        );
        let cell = |s: Option<Summary>| {
            s.map_or_else(
                || "failed".to_string(),
                |s| format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
            )
        };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>15}  {:>15}  {:>15}",
                r.variant,
                format!("{}/{}", r.completed, r.completed + r.failed),
                cell(r.recall_at_1),
                cell(r.nmi),
                cell(r.f1),
            );
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        std::fs::write(dir.join("cells.json"), serde_json::to_string_pretty(&self.cells)?)?;
        Ok(())
    }
}

fn run_cell(base: &RunConfig, variant: &Variant, seed: u64) -> CellResult {
    let result = variant
        .apply(base)
        .and_then(|c| c.with_value("seed", seed.into()))
        .and_then(|mut c| {
            c.output_dir = None;
            train(c)
        })
        .and_then(|out| {
            out.log
                .final_eval()
                .cloned()
                .ok_or_else(|| DasError::InvalidConfig("run produced no evaluation".into()))
        });
    match result {
        Ok(report) => CellResult {
            variant: variant.name.clone(),
            seed,
            recall_at_1: report.recall(1),
            nmi: Some(report.nmi),
            f1: Some(report.f1),
            error: None,
        },
        Err(e) => {
            log::warn!("cell {} / seed {seed} failed: {e}", variant.name);
            CellResult {
                variant: variant.name.clone(),
                seed,
                recall_at_1: None,
                nmi: None,
                f1: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Trains every `(variant, seed)` cell and aggregates final metrics per
/// variant. Cells are independent and run in parallel; a failing cell is
/// recorded and the rest continue. Each cell's data and initialization are
/// derived from its seed unless the base config pins `data.seed`.
pub fn run_comparison(base: &RunConfig, variants: &[Variant], seeds: &[u64]) -> Result<ComparisonTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(DasError::InvalidConfig("comparison needs at least one variant and one seed".into()));
    }
    let jobs: Vec<(&Variant, u64)> = variants
        .iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|(v, s)| run_cell(base, v, *s))
        .collect();
    let rows = variants
        .iter()
        .map(|v| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.variant == v.name).collect();
            let ok: Vec<&&CellResult> = mine.iter().filter(|c| c.error.is_none()).collect();
            let collect = |f: fn(&CellResult) -> Option<f64>| -> Option<Summary> {
                let vals: Vec<f64> = ok.iter().filter_map(|c| f(c)).collect();
                Summary::of(&vals)
            };
            ComparisonRow {
                variant: v.name.clone(),
                completed: ok.len(),
                failed: mine.len() - ok.len(),
                recall_at_1: collect(|c| c.recall_at_1),
                nmi: collect(|c| c.nmi),
                f1: collect(|c| c.f1),
            }
        })
        .collect();
    Ok(ComparisonTable { rows, cells })
}
