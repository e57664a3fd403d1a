//! Shared fixtures, oracles and criterion checks for the integration tests.
//! Each `check_*` returns a one-line summary on success and a description of
//! the first violation on failure.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use das_dml::config::RunConfig;
use das_dml::das::{self, DasConfig, FrequencyRecorder, Produced, TransformationBank};
use das_dml::dataset::{generate_gaussian_clusters, GaussianSpec};
use das_dml::encoder::{self, Activation, EncoderParams};
use das_dml::experiment::{ablation_variants, run_comparison, sweep_variants, ComparisonTable, K_SWEEP, Z_SWEEP};
use das_dml::losses::{self, LossKind, LossOutput, MsParams};
use das_dml::math::{self, DistanceMatrix};
use das_dml::metrics;
use das_dml::sampling::{self, AnchorPool, Pair, Triplet};
use das_dml::train::{Augmentation, Trainer};
use das_dml::SeededRng;

pub type Check = Result<String, String>;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const GRAD_INSTANCES: usize = 50;
pub const ORACLE_TRIALS: usize = 1000;

/// Runs a criterion, prints its PASS/FAIL line and returns whether it passed.
pub fn report(id: usize, title: &str, budget_secs: Option<f64>, check: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = check();
    let elapsed = start.elapsed().as_secs_f64();
    let over_budget = budget_secs.is_some_and(|b| elapsed > b);
    let budget = budget_secs.map_or(String::new(), |b| format!(" / budget {b:.0}s"));
    let (status, detail) = match (&result, over_budget) {
        (Ok(msg), false) => ("PASS", msg.clone()),
        (Ok(msg), true) => ("FAIL", format!("{msg}; exceeded runtime budget")),
        (Err(msg), _) => ("FAIL", msg.clone()),
    };
    println!("criterion {id} [{status}] {title} ({elapsed:.1}s{budget}): {detail}");
    status == "PASS"
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- fixtures

pub fn random_vec(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

pub fn random_unit(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    loop {
        if let Ok(v) = math::l2_normalize(&random_vec(rng, d)) {
            return v;
        }
    }
}

/// `classes` labels repeated `per_class` times, shuffled.
pub fn shuffled_labels(rng: &mut SeededRng, classes: usize, per_class: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    rng.shuffle(&mut labels);
    labels
}

/// Small integer-valued vectors, so ties are common.
pub fn grid_vec(rng: &mut SeededRng, d: usize, levels: usize) -> Vec<f64> {
    (0..d).map(|_| rng.below(levels) as f64).collect()
}

// ------------------------------------------------------- gradient checking

/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = math::norm(analytic).max(math::norm(numeric)).max(1e-6);
    diff / scale
}

/// Central differences of `f` over every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn unflatten(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    flat.chunks(d).map(<[f64]>::to_vec).collect()
}

pub const LOSS_KINDS: [LossKind; 4] = [
    LossKind::Contrastive,
    LossKind::Triplet,
    LossKind::Margin,
    LossKind::MultiSimilarity,
];

/// Fixed sampling decisions for one loss evaluation; the loss is then a
/// deterministic function of the embeddings.
#[derive(Debug, Clone)]
pub struct LossProblem {
    pub kind: LossKind,
    pub labels: Vec<usize>,
    pub triplets: Vec<Triplet>,
    pub pairs: Vec<Pair>,
    pub beta: f64,
}

impl LossProblem {
    pub fn new(kind: LossKind, labels: Vec<usize>, rng: &mut SeededRng) -> Self {
        let triplets = sampling::sample_random_triplets(&labels, 2 * labels.len(), AnchorPool::All, rng).unwrap();
        let pairs = sampling::build_pairs(&labels);
        Self {
            kind,
            labels,
            triplets,
            pairs,
            beta: rng.uniform(0.8, 1.4),
        }
    }

    pub fn eval(&self, embeddings: &[Vec<f64>]) -> LossOutput {
        match self.kind {
            LossKind::Contrastive => losses::contrastive_loss(embeddings, &self.pairs, 0.5),
            LossKind::Triplet => losses::triplet_loss(embeddings, &self.triplets, 0.2),
            LossKind::Margin => losses::margin_loss(embeddings, &self.pairs, 0.2, self.beta),
            LossKind::MultiSimilarity => losses::multi_similarity_loss(embeddings, &self.labels, &MsParams::default()),
        }
        .unwrap()
    }
}

/// Loss gradient w.r.t. raw embeddings (and β for the margin loss).
pub fn check_loss_gradients(kind: LossKind, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    let mut active = 0;
    for instance in 0..GRAD_INSTANCES {
        let d = 2 + rng.below(5);
        let classes = 2 + rng.below(3);
        let per_class = 2 + rng.below(2);
        let labels = shuffled_labels(&mut rng, classes, per_class);
        let emb: Vec<Vec<f64>> = labels.iter().map(|_| random_unit(&mut rng, d)).collect();
        let problem = LossProblem::new(kind, labels, &mut rng);
        let out = problem.eval(&emb);
        if out.active_count > 0 {
            active += 1;
        }
        let numeric = numeric_gradient(&flatten(&emb), |x| problem.eval(&unflatten(x, d)).value);
        let err = relative_error(&flatten(&out.grad), &numeric);
        worst = worst.max(err);
        ensure(err < FD_TOLERANCE, || format!("{kind} instance {instance}: relative error {err:e}"))?;
        if kind == LossKind::Margin {
            let nb = numeric_gradient(&[problem.beta], |b| {
                losses::margin_loss(&emb, &problem.pairs, 0.2, b[0]).unwrap().value
            });
            let err = relative_error(&[out.grad_beta], &nb);
            worst = worst.max(err);
            ensure(err < FD_TOLERANCE, || format!("margin β instance {instance}: relative error {err:e}"))?;
        }
    }
    ensure(active >= GRAD_INSTANCES / 2, || format!("{kind}: only {active} instances had active terms"))?;
    Ok(format!("{kind}: worst {worst:.1e} over {GRAD_INSTANCES} ({active} active)"))
}

/// A small random MLP and batch. Draws where some output is exactly zero
/// (every ReLU unit dead) are rejected: normalization is undefined there.
pub fn random_encoder(rng: &mut SeededRng, activation: Activation) -> (EncoderParams, Vec<Vec<f64>>) {
    let batch = 2 + rng.below(4);
    random_encoder_with_batch(rng, activation, batch)
}

pub fn random_encoder_with_batch(rng: &mut SeededRng, activation: Activation, batch: usize) -> (EncoderParams, Vec<Vec<f64>>) {
    loop {
        let d_in = 2 + rng.below(4);
        let hidden = 2 + rng.below(5);
        let d_out = 2 + rng.below(4);
        let params = EncoderParams::init(&[d_in, hidden, d_out], activation, rng).unwrap();
        let inputs: Vec<Vec<f64>> = (0..batch).map(|_| random_vec(rng, d_in)).collect();
        if encoder::encode(&params, &inputs).is_ok() {
            return (params, inputs);
        }
    }
}

fn with_flat_params(params: &EncoderParams, flat: &[f64]) -> EncoderParams {
    let mut p = params.clone();
    let mut offset = 0;
    for t in p.tensors_mut() {
        t.copy_from_slice(&flat[offset..offset + t.len()]);
        offset += t.len();
    }
    p
}

fn flat_params(params: &EncoderParams) -> Vec<f64> {
    params.tensors().into_iter().flatten().copied().collect()
}

/// Parameter gradient of `Σ ⟨g_i, encode(x)_i⟩`, through the normalization.
pub fn check_encoder_gradients(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    let activations = [Activation::Relu, Activation::Tanh, Activation::Identity];
    for instance in 0..GRAD_INSTANCES {
        let (params, inputs) = random_encoder(&mut rng, activations[instance % 3]);
        let g: Vec<Vec<f64>> = inputs.iter().map(|_| random_vec(&mut rng, params.output_dim())).collect();
        let (_, tape) = encoder::encode(&params, &inputs).unwrap();
        let analytic = flat_params(&encoder::backward(&params, &tape, &g).unwrap());
        let numeric = numeric_gradient(&flat_params(&params), |x| {
            let (v, _) = encoder::encode(&with_flat_params(&params, x), &inputs).unwrap();
            v.iter().zip(&g).map(|(v, g)| math::dot(v, g)).sum()
        });
        let err = relative_error(&analytic, &numeric);
        worst = worst.max(err);
        ensure(err < FD_TOLERANCE, || format!("encoder instance {instance}: relative error {err:e}"))?;
    }
    Ok(format!("encoder: worst {worst:.1e} over {GRAD_INSTANCES}"))
}

/// Fixed DAS factors for a batch: `per_anchor` (scale, shift) per anchor.
pub struct DasFactors {
    pub factors: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

impl DasFactors {
    pub fn random(rng: &mut SeededRng, n: usize, d: usize, per_anchor: usize) -> Self {
        let mut factors = Vec::new();
        for source in 0..n {
            for _ in 0..per_anchor {
                let mask: Vec<bool> = (0..d).map(|_| rng.below(2) == 1).collect();
                // Radii far above the defaults so the Jacobians are exercised.
                let scale = das::scaling_factor(&mask, 0.5, rng);
                let shift: Vec<f64> = (0..d).map(|_| 0.3 * rng.normal()).collect();
                factors.push((source, scale, shift));
            }
        }
        Self { factors }
    }

    pub fn produce(&self, anchors: &[Vec<f64>], labels: &[usize]) -> Vec<Produced> {
        self.factors
            .iter()
            .map(|(src, s, b)| das::compose(&anchors[*src], s, b, labels[*src], *src).unwrap())
            .collect()
    }
}

/// Full chain: encoder parameters → embeddings → produced embeddings →
/// loss over the concatenated batch, with gradients pulled back exactly as
/// the trainer does.
pub fn check_das_composition_gradients(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for instance in 0..GRAD_INSTANCES {
        let kind = LOSS_KINDS[instance % 4];
        let activation = [Activation::Tanh, Activation::Relu][instance % 2];
        let classes = 2 + rng.below(2);
        let labels = shuffled_labels(&mut rng, classes, 2);
        let (params, inputs) = random_encoder_with_batch(&mut rng, activation, labels.len());
        let d = params.output_dim();
        let per_anchor = 1 + rng.below(3);
        let factors = DasFactors::random(&mut rng, labels.len(), d, per_anchor);
        let mut all_labels = labels.clone();
        all_labels.extend(factors.factors.iter().map(|(src, _, _)| labels[*src]));
        let problem = LossProblem::new(kind, all_labels, &mut rng);

        let forward = |p: &EncoderParams| {
            let (v, tape) = encoder::encode(p, &inputs).unwrap();
            let produced = factors.produce(&v, &labels);
            let mut all = v.clone();
            all.extend(produced.iter().map(|p| p.embedding.clone()));
            (problem.eval(&all), produced, tape)
        };
        let (out, produced, tape) = forward(&params);
        let n = labels.len();
        let mut g: Vec<Vec<f64>> = out.grad[..n].to_vec();
        for (p, gp) in produced.iter().zip(&out.grad[n..]) {
            for (acc, x) in g[p.source].iter_mut().zip(p.anchor_grad(gp)) {
                *acc += x;
            }
        }
        let analytic = flat_params(&encoder::backward(&params, &tape, &g).unwrap());
        let numeric = numeric_gradient(&flat_params(&params), |x| forward(&with_flat_params(&params, x)).0.value);
        let err = relative_error(&analytic, &numeric);
        worst = worst.max(err);
        ensure(err < FD_TOLERANCE, || format!("{kind} through DAS, instance {instance}: relative error {err:e}"))?;
    }
    Ok(format!("loss∘produce∘encoder: worst {worst:.1e} over {GRAD_INSTANCES}"))
}

// ----------------------------------------------------------------- oracles

/// Channel indices of the `k` largest entries by repeated selection of the
/// first maximum.
pub fn oracle_top_k(v: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; v.len()];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..v.len() {
            if !taken[i] && best.is_none_or(|b| v[i] > v[b]) {
                best = Some(i);
            }
        }
        taken[best.unwrap()] = true;
    }
    (0..v.len()).filter(|&i| taken[i]).collect()
}

pub fn check_frm_and_mask_oracles(seed: u64) -> (Check, Check) {
    let mut rng = SeededRng::new(seed);
    let mut frm_result = Ok(());
    let mut mask_result = Ok(());
    for trial in 0..ORACLE_TRIALS {
        let classes = 1 + rng.below(4);
        let d = 1 + rng.below(8);
        let k = 1 + rng.below(d);
        let mut frm = FrequencyRecorder::new(classes, d);
        let mut counts = vec![vec![0u64; d]; classes];
        for _ in 0..1 + rng.below(3) {
            let n = 1 + rng.below(12);
            let emb: Vec<Vec<f64>> = (0..n).map(|_| grid_vec(&mut rng, d, 3)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
            frm.update(&emb, &labels, k).unwrap();
            for (e, &l) in emb.iter().zip(&labels) {
                for c in oracle_top_k(e, k) {
                    counts[l][c] += 1;
                }
            }
        }
        if frm_result.is_ok() {
            for (c, row) in counts.iter().enumerate() {
                if frm.row(c) != row.as_slice() {
                    frm_result = Err(format!("trial {trial}: class {c} counts {:?} vs oracle {row:?}", frm.row(c)));
                }
            }
        }
        if mask_result.is_ok() {
            let mask = frm.mask(k).unwrap();
            for (c, row) in counts.iter().enumerate() {
                let mut order: Vec<usize> = (0..d).collect();
                order.sort_by_key(|&i| (std::cmp::Reverse(row[i]), i));
                let mut expected = vec![false; d];
                for &i in &order[..k] {
                    expected[i] = true;
                }
                if mask.row(c) != expected.as_slice() {
                    mask_result = Err(format!("trial {trial}: class {c} mask {:?} vs oracle {expected:?}", mask.row(c)));
                }
            }
        }
    }
    (
        frm_result.map(|_| format!("FRM: {ORACLE_TRIALS} trials exact")),
        mask_result.map(|_| format!("mask: {ORACLE_TRIALS} trials exact")),
    )
}

/// Stored transformations of one class, oldest first.
pub fn bank_contents(bank: &TransformationBank, class: usize) -> Vec<Vec<f64>> {
    let z = bank.capacity();
    let filled = bank.filled(class);
    let start = (bank.cursor(class) + z - filled) % z;
    (0..filled).map(|i| bank.slot(class, (start + i) % z).to_vec()).collect()
}

pub fn check_bank_oracle(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    for trial in 0..ORACLE_TRIALS {
        let classes = 1 + rng.below(3);
        let z = 1 + rng.below(5);
        let d = 1 + rng.below(4);
        let mut bank = TransformationBank::new(classes, z, d);
        let mut queues: Vec<VecDeque<Vec<f64>>> = vec![VecDeque::new(); classes];
        let push = |queues: &mut Vec<VecDeque<Vec<f64>>>, c: usize, t: Vec<f64>| {
            if queues[c].len() == z {
                queues[c].pop_front();
            }
            queues[c].push_back(t);
        };
        for _ in 0..1 + rng.below(4) {
            if rng.below(2) == 0 {
                let c = rng.below(classes);
                let t = grid_vec(&mut rng, d, 5);
                bank.enqueue(c, &t).unwrap();
                push(&mut queues, c, t);
            } else {
                let n = 1 + rng.below(12);
                let emb: Vec<Vec<f64>> = (0..n).map(|_| grid_vec(&mut rng, d, 5)).collect();
                let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
                bank.update(&emb, &labels).unwrap();
                let mut seen = Vec::new();
                for &l in &labels {
                    if seen.contains(&l) {
                        continue;
                    }
                    seen.push(l);
                    let group: Vec<&Vec<f64>> = emb.iter().zip(&labels).filter(|(_, &m)| m == l).map(|(e, _)| e).collect();
                    for (i, a) in group.iter().enumerate() {
                        for (j, b) in group.iter().enumerate() {
                            if i != j {
                                push(&mut queues, l, a.iter().zip(b.iter()).map(|(x, y)| x - y).collect());
                            }
                        }
                    }
                }
            }
        }
        for (c, q) in queues.iter().enumerate() {
            let expected: Vec<Vec<f64>> = q.iter().cloned().collect();
            let got = bank_contents(&bank, c);
            ensure(got == expected, || format!("trial {trial}: class {c} bank {got:?} vs queue {expected:?}"))?;
        }
    }
    Ok(format!("bank: {ORACLE_TRIALS} trials exact"))
}

pub fn oracle_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let t = a[i] - b[i];
        s += t * t;
    }
    s.sqrt()
}

pub fn check_distance_oracle(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    for trial in 0..ORACLE_TRIALS {
        let n = 1 + rng.below(12);
        let d = 1 + rng.below(6);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, d)).collect();
        let dm = math::pairwise_distances(&rows).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { 0.0 } else { oracle_distance(&rows[i], &rows[j]) };
                ensure(dm.get(i, j) == expected, || {
                    format!("trial {trial}: D[{i}][{j}] = {} vs loop {expected}", dm.get(i, j))
                })?;
            }
        }
    }
    Ok(format!("distances: {ORACLE_TRIALS} trials exact"))
}

/// Recall@k by exhaustive ranking: query `q` hits at `k` when some
/// same-label item has fewer than `k` items ranked before it, where `j`
/// ranks before `p` if it is strictly closer, or equally close with a lower
/// index.
pub fn oracle_recall(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let n = points.len();
    let mut hits = 0;
    for q in 0..n {
        let dist = |j: usize| oracle_distance(&points[q], &points[j]);
        let hit = (0..n).filter(|&p| p != q && labels[p] == labels[q]).any(|p| {
            let before = (0..n)
                .filter(|&j| j != q && j != p)
                .filter(|&j| dist(j) < dist(p) || (dist(j) == dist(p) && j < p))
                .count();
            before < k
        });
        hits += usize::from(hit);
    }
    hits as f64 / n as f64
}

pub fn oracle_nmi(assignment: &[usize], labels: &[usize]) -> f64 {
    let n = assignment.len() as f64;
    let ka = assignment.iter().max().map_or(0, |m| m + 1);
    let kl = labels.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0.0; kl]; ka];
    for (&a, &l) in assignment.iter().zip(labels) {
        table[a][l] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kl).map(|l| table.iter().map(|r| r[l]).sum()).collect();
    let h = |m: &[f64]| -> f64 { m.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum() };
    let (ha, hl) = (h(&rows), h(&cols));
    if ha <= 0.0 || hl <= 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for a in 0..ka {
        for l in 0..kl {
            let c = table[a][l];
            if c > 0.0 {
                mi += (c / n) * (n * c / (rows[a] * cols[l])).ln();
            }
        }
    }
    mi / (ha * hl).sqrt()
}

pub fn oracle_f1(assignment: &[usize], labels: &[usize]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..assignment.len() {
        for j in (i + 1)..assignment.len() {
            let same_cluster = assignment[i] == assignment[j];
            let same_label = labels[i] == labels[j];
            match (same_cluster, same_label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// NMI agreement tolerance: the oracle sums the same terms in a different
/// order, so agreement is to rounding rather than bitwise.
pub const NMI_ROUNDING: f64 = 1e-12;

pub fn check_metric_oracles(seed: u64) -> (Check, Check, Check) {
    let mut rng = SeededRng::new(seed);
    let (mut recall, mut nmi, mut f1) = (Ok(()), Ok(()), Ok(()));
    let mut worst_nmi: f64 = 0.0;
    for trial in 0..ORACLE_TRIALS {
        let n = 2 + rng.below(11);
        let points: Vec<Vec<f64>> = (0..n).map(|_| grid_vec(&mut rng, 2, 3)).collect();
        let label_classes = 1 + rng.below(4);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(label_classes)).collect();
        let ks: Vec<usize> = (1..n).collect();
        let got = metrics::recall_at_k(&points, &labels, &ks).unwrap();
        if recall.is_ok() {
            for &k in &ks {
                let expected = oracle_recall(&points, &labels, k);
                if got[&k] != expected {
                    recall = Err(format!("trial {trial}: R@{k} = {} vs oracle {expected}", got[&k]));
                }
            }
        }
        let clusters = 1 + rng.below(4);
        let assignment: Vec<usize> = (0..n).map(|_| rng.below(clusters)).collect();
        let g = metrics::nmi(&assignment, &labels).unwrap();
        let e = oracle_nmi(&assignment, &labels);
        worst_nmi = worst_nmi.max((g - e).abs());
        if nmi.is_ok() && (g - e).abs() > NMI_ROUNDING {
            nmi = Err(format!("trial {trial}: NMI {g} vs oracle {e}"));
        }
        let g = metrics::f1_score(&assignment, &labels).unwrap();
        let e = oracle_f1(&assignment, &labels);
        if f1.is_ok() && g != e {
            f1 = Err(format!("trial {trial}: F1 {g} vs oracle {e}"));
        }
    }
    (
        recall.map(|_| format!("recall: {ORACLE_TRIALS} trials exact")),
        nmi.map(|_| format!("NMI: {ORACLE_TRIALS} trials, max |Δ| {worst_nmi:.1e}")),
        f1.map(|_| format!("F1: {ORACLE_TRIALS} trials exact")),
    )
}

// ------------------------------------------------------------- statistics

pub const GAMMA_DRAWS: usize = 100_000;
pub const WEIGHTED_DRAWS: usize = 10_000;
pub const FREQUENCY_TOLERANCE: f64 = 0.02;
/// χ² critical value, 1 degree of freedom, p = 0.001.
pub const CHI2_CRIT_DF1: f64 = 10.828;

pub fn check_gamma_moments(seed: u64, radius: f64) -> Check {
    let mut rng = SeededRng::new(seed);
    let draws: Vec<f64> = (0..GAMMA_DRAWS).map(|_| das::scaling_factor(&[true], radius, &mut rng)[0]).collect();
    let n = GAMMA_DRAWS as f64;
    ensure(draws.iter().all(|&g| (1.0 - radius..=1.0 + radius).contains(&g)), || "γ outside its support".into())?;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sigma2 = radius * radius / 3.0;
    let se_mean = (sigma2 / n).sqrt();
    ensure((mean - 1.0).abs() < 3.0 * se_mean, || {
        format!("γ mean {mean} is {:.2} SE from 1", (mean - 1.0).abs() / se_mean)
    })?;
    // Var of the sample variance for a uniform: (μ₄ − σ⁴)/n with μ₄ = r⁴/5.
    let se_var = ((radius.powi(4) / 5.0 - sigma2 * sigma2) / n).sqrt();
    ensure((var - sigma2).abs() < 3.0 * se_var, || {
        format!("γ variance {var:e} is {:.2} SE from {sigma2:e}", (var - sigma2).abs() / se_var)
    })?;
    Ok(format!(
        "γ (r_s={radius}): mean off by {:.2} SE, variance off by {:.2} SE",
        (mean - 1.0).abs() / se_mean,
        (var - sigma2).abs() / se_var
    ))
}

/// Anchor 0, positive 1, negatives 2 and 3 at distances 0.5 and 1.0.
pub fn weighted_fixture() -> (DistanceMatrix, Vec<usize>) {
    #[rustfmt::skip]
    let entries = vec![
        0.0, 0.3, 0.5, 1.0,
        0.3, 0.0, 0.6, 1.1,
        0.5, 0.6, 0.0, 0.8,
        1.0, 1.1, 0.8, 0.0,
    ];
    (DistanceMatrix::from_entries(4, entries).unwrap(), vec![0, 0, 1, 2])
}

pub fn check_distance_weighted_frequencies(seed: u64) -> Check {
    let (dm, labels) = weighted_fixture();
    let mut rng = SeededRng::new(seed);
    let mut near = 0usize;
    for _ in 0..WEIGHTED_DRAWS {
        let t = sampling::sample_distance_weighted(&dm, &labels, 3, sampling::DISTANCE_CLIP, AnchorPool::Prefix(1), &mut rng).unwrap();
        ensure(t.len() == 1 && t[0].anchor == 0 && t[0].positive == 1, || format!("unexpected triplets {t:?}"))?;
        near += usize::from(t[0].negative == 2);
    }
    let n = WEIGHTED_DRAWS as f64;
    let p_near = near as f64 / n;
    ensure((p_near - 2.0 / 3.0).abs() <= FREQUENCY_TOLERANCE, || {
        format!("P(d=0.5) = {p_near:.4}, expected 2/3 ± {FREQUENCY_TOLERANCE}")
    })?;
    let expected = [2.0 / 3.0 * n, 1.0 / 3.0 * n];
    let observed = [near as f64, n - near as f64];
    let chi2: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    ensure(chi2 < CHI2_CRIT_DF1, || format!("χ² = {chi2:.2} ≥ {CHI2_CRIT_DF1}"))?;
    Ok(format!("distance-weighted: P(d=0.5) = {p_near:.4} (2/3), χ² = {chi2:.2}"))
}

pub fn check_bank_slot_uniformity(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for filled in [5usize, 3] {
        let mut bank = TransformationBank::new(1, 5, 2);
        for i in 0..filled {
            bank.enqueue(0, &[i as f64, 1.0]).unwrap();
        }
        let mut counts = [0usize; 5];
        for _ in 0..WEIGHTED_DRAWS {
            counts[bank.sample_slot(0, &mut rng).unwrap().unwrap()] += 1;
        }
        ensure(counts[filled..].iter().all(|&c| c == 0), || format!("unfilled slot drawn: {counts:?}"))?;
        for &c in &counts[..filled] {
            let dev = (c as f64 / WEIGHTED_DRAWS as f64 - 1.0 / filled as f64).abs();
            worst = worst.max(dev);
            ensure(dev <= FREQUENCY_TOLERANCE, || format!("slot counts {counts:?} with {filled} filled"))?;
        }
    }
    Ok(format!("bank slots: max deviation {worst:.4}"))
}

// ----------------------------------------------------- algebraic identities

/// With `r_s = 0` and an empty bank every produced embedding is its anchor.
pub fn check_produce_identity(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = 2 + rng.below(30);
        let classes = 1 + rng.below(4);
        let k = 1 + rng.below(d);
        let mut frm = FrequencyRecorder::new(classes, d);
        let emb: Vec<Vec<f64>> = (0..8).map(|_| random_unit(&mut rng, d)).collect();
        let labels: Vec<usize> = (0..8).map(|_| rng.below(classes)).collect();
        frm.update(&emb, &labels, k).unwrap();
        let mask = frm.mask(k).unwrap();
        let bank = TransformationBank::new(classes, 10, d);
        let config = DasConfig {
            top_k: k,
            scale_radius: 0.0,
            ..DasConfig::default()
        };
        for (i, (v, &l)) in emb.iter().zip(&labels).enumerate() {
            let produced = das::das_produce(v, l, i, &mask, &bank, &config, &mut rng).unwrap();
            ensure(produced.len() == config.per_anchor, || "embeddings were dropped".into())?;
            for p in produced {
                let diff = p.embedding.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(diff);
                ensure(diff <= 1e-12, || format!("produced differs from anchor by {diff:e}"))?;
            }
        }
    }
    Ok(format!("r_s=0, empty bank: max |v' − v| = {worst:.1e}"))
}

/// Small run used by the duplicate-anchor identity.
pub fn identity_run_config() -> RunConfig {
    RunConfig::default()
        .with_overrides(&[
            "steps=50",
            "eval_interval=50",
            "sampler=random",
            "loss.kind=triplet",
            "das.rs=0",
            "das.rb=0",
        ])
        .unwrap()
}

pub fn max_param_diff(a: &EncoderParams, b: &EncoderParams) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub fn check_duplicate_baseline() -> Check {
    let config = identity_run_config();
    let das_run = Trainer::new(config.clone()).map_err(|e| e.to_string())?.run().map_err(|e| e.to_string())?;
    let mut dup = Trainer::new(config).map_err(|e| e.to_string())?;
    dup.set_augmentation(Augmentation::DuplicateAnchors);
    let dup_run = dup.run().map_err(|e| e.to_string())?;
    let diff = max_param_diff(&das_run.params, &dup_run.params);
    ensure(diff <= 1e-9, || format!("final parameters differ by {diff:e}"))?;
    let moved = max_param_diff(&das_run.params, &Trainer::new(identity_run_config()).unwrap().params().clone());
    ensure(moved > 1e-3, || format!("parameters barely moved ({moved:e}); identity is vacuous"))?;
    Ok(format!("50 steps, r_s=r_b=0 vs duplicated anchors: max |Δθ| = {diff:.1e} (moved {moved:.2})"))
}

// ----------------------------------------------------------- experiments

pub const DIRECTIONAL_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// Allowed shortfall of full DAS below the baseline, in R@1 fraction.
pub const DIRECTIONAL_SLACK: f64 = 0.005;

pub fn directional_config() -> RunConfig {
    RunConfig::default()
        .with_overrides(&[
            "data.source=gaussian",
            "data.classes=16",
            "data.per_class=64",
            "data.dim=32",
            "encoder.hidden=[64]",
            "encoder.dim=16",
            "loss.kind=triplet",
            "sampler=distance",
            "steps=2000",
            "eval_interval=2000",
        ])
        .unwrap()
}

pub fn table_complete(table: &ComparisonTable, rows: usize, seeds: usize) -> Result<(), String> {
    ensure(table.rows.len() == rows, || format!("{} rows, expected {rows}", table.rows.len()))?;
    for r in &table.rows {
        ensure(r.completed == seeds && r.failed == 0 && r.recall_at_1.is_some(), || {
            format!("row {} incomplete: {}/{} runs", r.variant, r.completed, seeds)
        })?;
    }
    let csv_lines = table.to_csv().lines().count();
    ensure(csv_lines == rows + 1, || format!("CSV has {csv_lines} lines"))?;
    Ok(())
}

pub fn check_directional() -> (Check, Option<ComparisonTable>) {
    let table = match run_comparison(&directional_config(), &ablation_variants(), &DIRECTIONAL_SEEDS) {
        Ok(t) => t,
        Err(e) => return (Err(e.to_string()), None),
    };
    let result = (|| {
        table_complete(&table, 4, DIRECTIONAL_SEEDS.len())?;
        let base = table.row("baseline").and_then(|r| r.recall_at_1).unwrap().mean;
        let full = table.row("dfs+mts").and_then(|r| r.recall_at_1).unwrap().mean;
        let delta = 100.0 * (full - base);
        ensure(full >= base - DIRECTIONAL_SLACK, || {
            format!(
                "full DAS R@1 {:.2} < baseline {:.2} − 0.5 (Δ = {delta:+.2} points)",
                100.0 * full,
                100.0 * base
            )
        })?;
        Ok(format!("R@1 baseline {:.2}, full DAS {:.2} (Δ = {delta:+.2} points); 4-cell ablation complete", 100.0 * base, 100.0 * full))
    })();
    (result, Some(table))
}

pub fn sweep_config() -> RunConfig {
    // K ranges up to 32, so the embedding needs at least 32 channels.
    RunConfig::default()
        .with_overrides(&["encoder.dim=32", "steps=300", "eval_interval=300"])
        .unwrap()
}

pub const SWEEP_SEEDS: [u64; 2] = [1, 2];

pub fn check_sweeps() -> (Check, Vec<ComparisonTable>) {
    let mut tables = Vec::new();
    let mut grids: Vec<(&str, Vec<serde_json::Value>)> = vec![
        ("das.K", K_SWEEP.iter().map(|&k| k.into()).collect()),
        ("das.Z", Z_SWEEP.iter().map(|&z| z.into()).collect()),
    ];
    for (key, values) in grids.drain(..) {
        let rows = values.len();
        match run_comparison(&sweep_config(), &sweep_variants(key, &values), &SWEEP_SEEDS) {
            Ok(t) => {
                if let Err(e) = table_complete(&t, rows, SWEEP_SEEDS.len()) {
                    return (Err(format!("{key} sweep: {e}")), tables);
                }
                tables.push(t);
            }
            Err(e) => return (Err(format!("{key} sweep: {e}")), tables),
        }
    }
    (Ok("K sweep 6 rows, Z sweep 5 rows, all cells complete".into()), tables)
}

pub fn group_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(i);
    }
    m
}

pub fn separated_dataset(seed: u64) -> das_dml::dataset::Dataset {
    let spec = GaussianSpec {
        classes: 6,
        per_class: 10,
        dim: 8,
        center_scale: 10.0,
        noise_sigma: 0.01,
    };
    generate_gaussian_clusters(&spec, &mut SeededRng::new(seed)).unwrap()
}
