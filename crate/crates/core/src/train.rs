//! The training loop.
//!
//! One step: sample a batch → encode → record channel frequencies → draw
//! scaling factors → compute intra-class transformations → enqueue them →
//! draw shifting factors → produce embeddings → sample pairs/triplets over
//! real + produced embeddings → loss → backward → optimizer update.
//!
//! Randomness comes from independent streams derived from the run seed
//! (initialization, batches, produced-embedding factors, pair sampling), so
//! toggling embedding production never perturbs batch or pair sampling.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, EvalConfig, RunConfig};
use crate::das::{self, FrequencyRecorder, Produced, TransformationBank};
use crate::dataset::{generate_gaussian_clusters, load_csv, Dataset};
use crate::encoder::{self, Checkpoint, EncoderParams, OptimizerState};
use crate::error::{DasError, Result};
use crate::losses::{self, LossKind, LossOutput};
use crate::math;
use crate::metrics::{evaluate_embeddings, EvalReport};
use crate::rng::SeededRng;
use crate::sampling::{self, AnchorPool, Sampler};

const STREAM_DATA: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_DAS: u64 = 3;
const STREAM_SAMPLE: u64 = 4;

/// Events emitted by a traced step, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Batch,
    Encode,
    Frm,
    Scale,
    Transform,
    Enqueue,
    Shift,
    Produce,
    Sample,
    Loss,
    Update,
}

/// How extra embeddings are made from the anchors of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Augmentation {
    /// Scaled and shifted embeddings.
    #[default]
    Das,
    /// `T` exact copies of every anchor with identity gradients. This is the
    /// reference the scaled/shifted path must match when both radii are 0.
    DuplicateAnchors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub active: usize,
    pub produced: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Step(StepRecord),
    Eval(EvalReport),
}

impl LogRecord {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            LogRecord::Step(s) => {
                let mut v = serde_json::Map::new();
                v.insert("kind".into(), "step".into());
                v.insert("step".into(), s.step.into());
                v.insert("loss".into(), s.loss.into());
                v.insert("active".into(), s.active.into());
                v.insert("produced".into(), s.produced.into());
                v.insert("dropped".into(), s.dropped.into());
                serde_json::Value::Object(v)
            }
            LogRecord::Eval(r) => {
                let mut v = serde_json::Map::new();
                v.insert("kind".into(), "eval".into());
                if let serde_json::Value::Object(m) = r.to_json_value() {
                    v.extend(m);
                }
                serde_json::Value::Object(v)
            }
        }
    }

    pub fn step(&self) -> usize {
        match self {
            LogRecord::Step(s) => s.step,
            LogRecord::Eval(r) => r.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalReport> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Eval(e) => Some(e),
            _ => None,
        })
    }

    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.evals().last()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json().to_string());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    match config.data.source {
        DataSource::Gaussian => generate_gaussian_clusters(
            &config.data.gaussian(),
            &mut SeededRng::derive(config.data_seed(), STREAM_DATA),
        ),
        DataSource::Csv => {
            let csv = config.data.csv()?;
            load_csv(&csv.path, csv.label_col, csv.header)
        }
    }
}

fn mark(trace: &mut Option<Vec<Stage>>, stage: Stage) {
    if let Some(t) = trace {
        t.push(stage);
    }
}

pub struct Trainer {
    config: RunConfig,
    dataset: Dataset,
    params: EncoderParams,
    optimizer: OptimizerState,
    margin_beta: f64,
    frm: FrequencyRecorder,
    bank: TransformationBank,
    batch_rng: SeededRng,
    das_rng: SeededRng,
    sample_rng: SeededRng,
    step: usize,
    log: RunLog,
    augmentation: Augmentation,
    trace: Option<Vec<Stage>>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dataset = load_dataset(&config)?;
        Self::with_dataset(config, dataset)
    }

    pub fn with_dataset(config: RunConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let classes = dataset.train_classes().len();
        if dataset.train_classes().iter().enumerate().any(|(i, &c)| i != c) {
            return Err(DasError::InvalidConfig("training classes must be 0..C".into()));
        }
        if classes < config.batch.classes {
            return Err(DasError::NotEnoughClasses {
                needed: config.batch.classes,
                available: classes,
            });
        }
        let mut sizes = vec![dataset.input_dim()];
        sizes.extend(&config.encoder.hidden);
        sizes.push(config.encoder.dim);
        let params = EncoderParams::init(
            &sizes,
            config.encoder.activation,
            &mut SeededRng::derive(config.seed, STREAM_INIT),
        )?;
        let optimizer = OptimizerState::new(
            config.optimizer.rule,
            config.optimizer.lr,
            config.optimizer.momentum,
            &params,
        );
        let dim = config.encoder.dim;
        Ok(Self {
            margin_beta: config.loss.margin_beta,
            frm: FrequencyRecorder::new(classes, dim),
            bank: TransformationBank::new(classes, config.das.bank_capacity, dim),
            batch_rng: SeededRng::derive(config.seed, STREAM_BATCH),
            das_rng: SeededRng::derive(config.seed, STREAM_DAS),
            sample_rng: SeededRng::derive(config.seed, STREAM_SAMPLE),
            step: 0,
            log: RunLog::default(),
            augmentation: Augmentation::Das,
            trace: None,
            config,
            dataset,
            params,
            optimizer,
        })
    }

    pub fn set_augmentation(&mut self, augmentation: Augmentation) {
        self.augmentation = augmentation;
    }

    /// Start recording [`Stage`] events.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<Stage> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }


    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn margin_beta(&self) -> f64 {
        self.margin_beta
    }

    pub fn frequency_recorder(&self) -> &FrequencyRecorder {
        &self.frm
    }

    pub fn bank(&self) -> &TransformationBank {
        &self.bank
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    /// Runs one training step and appends its record to the log.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step + 1;
        let record = self.step_inner(step).map_err(|e| e.at_step(step))?;
        self.step = step;
        self.log.records.push(LogRecord::Step(record.clone()));
        Ok(record)
    }

    fn produce(&mut self, embeddings: &[Vec<f64>], labels: &[usize]) -> Result<(Vec<Produced>, usize)> {
        let cfg = self.config.das;
        let per_anchor = cfg.per_anchor;
        let n = embeddings.len();
        if self.augmentation == Augmentation::DuplicateAnchors {
            let copies = (0..n)
                .flat_map(|i| (0..per_anchor).map(move |_| i))
                .map(|i| Produced::copy_of(&embeddings[i], labels[i], i))
                .collect();
            return Ok((copies, 0));
        }

        self.frm.update(embeddings, labels, cfg.top_k)?;
        mark(&mut self.trace, Stage::Frm);

        let mask = self.frm.mask(cfg.top_k)?;
        let radius = cfg.effective_scale_radius();
        let mut scales = Vec::with_capacity(n * per_anchor);
        for &label in labels {
            for _ in 0..per_anchor {
                scales.push(das::scaling_factor(mask.row(label), radius, &mut self.das_rng));
            }
        }
        mark(&mut self.trace, Stage::Scale);

        // Class groups in order of first appearance in the batch.
        let mut groups: Vec<(usize, Vec<&[f64]>)> = Vec::new();
        for (e, &l) in embeddings.iter().zip(labels) {
            match groups.iter_mut().find(|(c, _)| *c == l) {
                Some((_, g)) => g.push(e),
                None => groups.push((l, vec![e])),
            }
        }
        let transforms: Vec<(usize, Vec<Vec<f64>>)> = groups
            .iter()
            .map(|(c, g)| (*c, if g.len() < 2 { Vec::new() } else { das::intra_class_transforms(g) }))
            .collect();
        mark(&mut self.trace, Stage::Transform);
        for (c, ts) in &transforms {
            for t in ts {
                self.bank.enqueue(*c, t)?;
            }
        }
        mark(&mut self.trace, Stage::Enqueue);

        let magnitude = cfg.effective_shift_magnitude();
        let mut shifts = Vec::with_capacity(n * per_anchor);
        for &label in labels {
            for _ in 0..per_anchor {
                shifts.push(self.bank.shifting_factor(label, magnitude, &mut self.das_rng)?);
            }
        }
        mark(&mut self.trace, Stage::Shift);

        let mut produced = Vec::with_capacity(n * per_anchor);
        let mut dropped = 0;
        for i in 0..n {
            for t in 0..per_anchor {
                let j = i * per_anchor + t;
                match das::compose(&embeddings[i], &scales[j], &shifts[j], labels[i], i) {
                    Ok(p) => produced.push(p),
                    Err(DasError::ZeroNorm { norm }) => {
                        log::warn!("step {}: dropping produced embedding of anchor {i} (norm {norm:e})", self.step + 1);
                        dropped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok((produced, dropped))
    }

    fn compute_loss(&mut self, all: &[Vec<f64>], labels: &[usize], real: usize) -> Result<LossOutput> {
        let cfg = &self.config;
        let pool = if cfg.sampling.produced_as_anchors {
            AnchorPool::All
        } else {
            AnchorPool::Prefix(real)
        };
        let rng = &mut self.sample_rng;
        let triplets = |rng: &mut SeededRng| -> Result<Vec<sampling::Triplet>> {
            match cfg.sampler {
                Sampler::Random => {
                    let count = match pool {
                        AnchorPool::All => all.len(),
                        AnchorPool::Prefix(k) => k,
                    };
                    sampling::sample_random_triplets(labels, count, pool, rng)
                }
                Sampler::Semihard => {
                    let dm = math::pairwise_distances(all)?;
                    sampling::sample_semihard_triplets(&dm, labels, cfg.sampling.semihard_margin, pool, rng)
                }
                Sampler::Softhard => {
                    let dm = math::pairwise_distances(all)?;
                    sampling::sample_softhard_triplets(&dm, labels, pool, rng)
                }
                Sampler::Distance => {
                    let dm = math::pairwise_distances(all)?;
                    sampling::sample_distance_weighted(&dm, labels, cfg.encoder.dim, cfg.sampling.distance_clip, pool, rng)
                }
                Sampler::All => Err(DasError::InvalidConfig("sampler \"all\" yields pairs, not triplets".into())),
            }
        };
        let out = match cfg.loss.kind {
            LossKind::Triplet => {
                let t = triplets(rng)?;
                mark(&mut self.trace, Stage::Sample);
                losses::triplet_loss(all, &t, cfg.loss.triplet_margin)?
            }
            LossKind::Contrastive | LossKind::Margin => {
                let pairs = if cfg.sampler == Sampler::All {
                    sampling::build_pairs(labels)
                } else {
                    sampling::triplets_to_pairs(&triplets(rng)?)
                };
                mark(&mut self.trace, Stage::Sample);
                if cfg.loss.kind == LossKind::Contrastive {
                    losses::contrastive_loss(all, &pairs, cfg.loss.contrastive_margin)?
                } else {
                    losses::margin_loss(all, &pairs, cfg.loss.margin_alpha, self.margin_beta)?
                }
            }
            LossKind::MultiSimilarity => {
                // Mines its own pairs from the full batch.
                mark(&mut self.trace, Stage::Sample);
                losses::multi_similarity_loss(all, labels, &cfg.loss.ms)?
            }
        };
        mark(&mut self.trace, Stage::Loss);
        Ok(out)
    }

    fn step_inner(&mut self, step: usize) -> Result<StepRecord> {
        let batch = sampling::sample_batch(&self.dataset, self.config.batch, &mut self.batch_rng)?;
        let inputs: Vec<&[f64]> = batch.iter().map(|p| p.features.as_slice()).collect();
        let labels: Vec<usize> = batch.iter().map(|p| p.label).collect();
        mark(&mut self.trace, Stage::Batch);

        let (embeddings, tape) = encoder::encode(&self.params, &inputs)?;
        mark(&mut self.trace, Stage::Encode);

        let real = embeddings.len();
        let (produced, dropped) = if self.config.das.enabled {
            let out = self.produce(&embeddings, &labels)?;
            mark(&mut self.trace, Stage::Produce);
            out
        } else {
            (Vec::new(), 0)
        };

        let mut all = embeddings;
        let mut all_labels = labels;
        for p in &produced {
            all.push(p.embedding.clone());
            all_labels.push(p.label);
        }

        let out = self.compute_loss(&all, &all_labels, real)?;
        if !out.value.is_finite() || out.grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(DasError::NonFiniteLoss { step });
        }

        let mut grad_real: Vec<Vec<f64>> = out.grad[..real].to_vec();
        for (p, g) in produced.iter().zip(&out.grad[real..]) {
            for (acc, x) in grad_real[p.source].iter_mut().zip(p.anchor_grad(g)) {
                *acc += x;
            }
        }
        let grads = encoder::backward(&self.params, &tape, &grad_real)?;
        encoder::optimizer_step(&mut self.params, &grads, &mut self.optimizer)?;
        if self.config.loss.kind == LossKind::Margin {
            let lr = self.config.loss.margin_beta_lr.unwrap_or(self.config.optimizer.lr);
            self.margin_beta -= lr * out.grad_beta;
        }
        mark(&mut self.trace, Stage::Update);

        Ok(StepRecord {
            step,
            loss: out.value,
            active: out.active_count,
            produced: produced.len(),
            dropped,
        })
    }

    /// Encodes the test split and evaluates it. Does not touch the log.
    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate_params(&self.params, &self.dataset, &self.config.eval, self.step)
    }

    /// Evaluates and appends the report to the log.
    pub fn evaluate_and_log(&mut self) -> Result<EvalReport> {
        let report = self.evaluate()?;
        self.log.records.push(LogRecord::Eval(report.clone()));
        Ok(report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(&self.params, &self.optimizer, self.config.seed, self.step as u64);
        if self.config.loss.kind == LossKind::Margin {
            ck.margin_beta = Some(self.margin_beta);
        }
        ck
    }

    /// Runs all configured steps with periodic evaluation, writing outputs
    /// when an output directory is configured.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let total = self.config.steps;
        while self.step < total {
            self.step()?;
            if self.step.is_multiple_of(self.config.eval_interval) || self.step == total {
                self.evaluate_and_log().map_err(|e| e.at_step(self.step))?;
            }
        }
        if total == 0 {
            self.evaluate_and_log()?;
        }
        let outcome = TrainOutcome {
            checkpoint: self.checkpoint(),
            params: self.params,
            log: self.log,
        };
        if let Some(dir) = &self.config.output_dir {
            outcome.write(dir, &self.config)?;
        }
        Ok(outcome)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: RunLog,
    pub checkpoint: Checkpoint,
}

impl TrainOutcome {
    /// Writes `run.log.jsonl`, `checkpoint.json` and `config.json`.
    pub fn write(&self, dir: impl AsRef<Path>, config: &RunConfig) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.log.write(dir.join("run.log.jsonl"))?;
        self.checkpoint.save(dir.join("checkpoint.json"))?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
        Ok(())
    }
}

pub fn train(config: RunConfig) -> Result<TrainOutcome> {
    Trainer::new(config)?.run()
}

pub fn evaluate_params(params: &EncoderParams, dataset: &Dataset, eval: &EvalConfig, step: usize) -> Result<EvalReport> {
    if dataset.input_dim() != params.input_dim() {
        return Err(DasError::ShapeMismatch(format!(
            "dataset has {} features, encoder expects {}",
            dataset.input_dim(),
            params.input_dim()
        )));
    }
    let test = dataset.test_points();
    if test.len() < 2 {
        return Err(DasError::InvalidConfig("test split needs at least two points".into()));
    }
    let inputs: Vec<&[f64]> = test.iter().map(|p| p.features.as_slice()).collect();
    let labels: Vec<usize> = test.iter().map(|p| p.label).collect();
    let (embeddings, _) = encoder::encode(params, &inputs)?;
    evaluate_embeddings(&embeddings, &labels, &eval.ks, eval.kmeans_seed, step)
}

/// Evaluates a saved encoder on a dataset's test split.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset, eval: &EvalConfig) -> Result<EvalReport> {
    let params = checkpoint.encoder()?;
    evaluate_params(&params, dataset, eval, checkpoint.step as usize)
}
