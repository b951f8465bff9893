//! Match-probability routing: label generation by subset enumeration or
//! Monte Carlo, and a multi-head router (one sigmoid head per
//! (model, sample-count) cell over a shared frozen query encoding).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QueryRecord, ResponseSample};
use crate::error::{Error, Result};
use crate::features::{encode_query_sparse, FeatureConfig};
use crate::linear::{
    binary_cross_entropy, derive_seed, logit_clamped, sigmoid, sigmoid_clamped, SparseVec,
};
use crate::reward::{select_best_among, ResponseScorer};

/// Soft label for one (record, model, sample-count) cell: the estimated
/// probability that the model's best-of-n response matches the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchLabel {
    pub query_id: String,
    pub model_index: usize,
    pub sample_count: usize,
    pub y: f64,
}

/// Label-generation and head-training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Monte Carlo subset draws when exact enumeration is too large.
    pub label_mc_samples: usize,
    /// Enumerate exactly when C(m, n) is at most this many subsets.
    pub label_exact_cutoff: u128,
}

impl Default for RouterTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.2,
            l2: 1e-6,
            seed: 0,
            label_mc_samples: 200,
            label_exact_cutoff: 1000,
        }
    }
}

impl RouterTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.label_mc_samples == 0 {
            return Err(Error::InvalidConfig("label_mc_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// One sigmoid head: `p = sigmoid(w . h_q + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Head {
    pub fn zeroed(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }
}

/// Shared query encoder plus a K x N grid of heads. `model_names`
/// excludes the reference model; `heads[k][n-1]` serves sample count `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadRouter {
    pub feature_config: FeatureConfig,
    pub model_names: Vec<String>,
    pub n_max: usize,
    pub heads: Vec<Vec<Head>>,
}

impl MultiHeadRouter {
    pub fn num_models(&self) -> usize {
        self.model_names.len()
    }
}

/// The response that anchors match labels: the first stored sample from
/// the reference model.
pub fn reference_response<'a>(
    record: &'a QueryRecord,
    reference_model: &str,
) -> Result<&'a ResponseSample> {
    record
        .samples_for(reference_model)
        .and_then(|s| s.first())
        .ok_or_else(|| Error::Validation {
            record_id: record.id.clone(),
            field: "responses".into(),
            message: format!("no samples for reference model `{reference_model}`"),
        })
}

fn binomial(m: usize, n: usize) -> u128 {
    if n > m {
        return 0;
    }
    let n = n.min(m - n);
    let mut acc: u128 = 1;
    for i in 0..n {
        acc = acc.saturating_mul((m - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Visit every size-n index subset of 0..m in lexicographic order.
fn for_each_subset(m: usize, n: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        visit(&idx);
        // advance to the next combination
        let mut i = n;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + m - n {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Draw `n` distinct indices from 0..m, returned in ascending order.
fn random_subset(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..m).collect();
    for i in 0..n {
        let j = rng.gen_range(i..m);
        pool.swap(i, j);
    }
    let mut subset = pool[..n].to_vec();
    subset.sort_unstable();
    subset
}

/// Estimate the probability that the scorer-selected best of an n-sample
/// subset scores at least as well as the reference response under ground
/// truth. Enumerates all subsets when C(m, n) is within the cutoff,
/// otherwise draws seeded Monte Carlo subsets.
pub fn estimate_match_label<S: ResponseScorer + ?Sized>(
    record: &QueryRecord,
    model: &str,
    n: usize,
    scorer: &S,
    reference_model: &str,
    cfg: &RouterTrainConfig,
) -> Result<f64> {
    let anchor = reference_response(record, reference_model)?.gt_score;
    let samples = record
        .samples_for(model)
        .ok_or_else(|| Error::UnknownModel(model.to_string()))?;
    let m = samples.len();
    if n == 0 || n > m {
        return Err(Error::IndexOutOfRange(format!(
            "match label with n={n} over {m} samples of `{model}` (record `{}`)",
            record.id
        )));
    }

    let scores: Vec<f64> = samples
        .iter()
        .map(|s| scorer.score_response(&record.query_text, s))
        .collect();
    let subset_wins = |subset: &[usize]| -> bool {
        let mut best = subset[0];
        for &i in &subset[1..] {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        samples[best].gt_score >= anchor
    };

    let total = binomial(m, n);
    if total <= cfg.label_exact_cutoff {
        let mut wins = 0u64;
        for_each_subset(m, n, |subset| {
            if subset_wins(subset) {
                wins += 1;
            }
        });
        Ok(wins as f64 / total as f64)
    } else {
        let seed = derive_seed(cfg.seed, &[&record.id, model], &[n as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wins = 0u64;
        for _ in 0..cfg.label_mc_samples {
            let subset = random_subset(&mut rng, m, n);
            if subset_wins(&subset) {
                wins += 1;
            }
        }
        Ok(wins as f64 / cfg.label_mc_samples as f64)
    }
}

/// Labels plus the count of (record, model, n) cells skipped for having
/// fewer than n stored samples.
#[derive(Debug, Clone)]
pub struct LabelSet {
    pub labels: Vec<MatchLabel>,
    pub skipped_cells: usize,
}

/// One label per (record, non-reference model, n) cell with n in 1..=n_max.
pub fn build_router_training_set<S: ResponseScorer + ?Sized>(
    train: &Dataset,
    scorer: &S,
    n_max: usize,
    cfg: &RouterTrainConfig,
) -> Result<LabelSet> {
    cfg.validate()?;
    let small_models = train.small_model_names();
    let per_record: Vec<(Vec<MatchLabel>, usize)> = train
        .records
        .par_iter()
        .map(|record| {
            let mut labels = Vec::new();
            let mut skipped = 0usize;
            for (k, model) in small_models.iter().enumerate() {
                let available = record.samples_for(model).map_or(0, |s| s.len());
                for n in 1..=n_max {
                    if n > available {
                        skipped += 1;
                        continue;
                    }
                    let y = estimate_match_label(
                        record,
                        model,
                        n,
                        scorer,
                        &train.reference_model,
                        cfg,
                    )?;
                    labels.push(MatchLabel {
                        query_id: record.id.clone(),
                        model_index: k,
                        sample_count: n,
                        y,
                    });
                }
            }
            Ok((labels, skipped))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut labels = Vec::new();
    let mut skipped_cells = 0;
    for (mut l, s) in per_record {
        labels.append(&mut l);
        skipped_cells += s;
    }
    if skipped_cells > 0 {
        log::warn!("router label generation skipped {skipped_cells} cells with too few samples");
    }
    Ok(LabelSet {
        labels,
        skipped_cells,
    })
}

/// Soft-label cross entropy of one head over encoded queries.
pub fn head_cross_entropy(head: &Head, features: &[SparseVec], labels: &[f64]) -> Result<f64> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::InvalidConfig(
            "cross entropy needs matching, nonempty features and labels".into(),
        ));
    }
    let total: f64 = features
        .iter()
        .zip(labels)
        .map(|(h, &y)| binary_cross_entropy(h.dot(&head.weights) + head.bias, y))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Full-batch analytic gradient of [`head_cross_entropy`] with respect to
/// (weights, bias).
pub fn head_cross_entropy_gradient(
    head: &Head,
    features: &[SparseVec],
    labels: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::InvalidConfig(
            "cross entropy gradient needs matching, nonempty features and labels".into(),
        ));
    }
    let mut grad = vec![0.0; head.weights.len()];
    let mut bias_grad = 0.0;
    for (h, &y) in features.iter().zip(labels) {
        let p = sigmoid(h.dot(&head.weights) + head.bias);
        let residual = p - y;
        for &(i, v) in &h.entries {
            grad[i as usize] += residual * v;
        }
        bias_grad += residual;
    }
    let scale = 1.0 / labels.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((grad, bias_grad * scale))
}

/// Seeded SGD for a single binary head over (feature index, label) pairs.
pub(crate) fn train_binary_head(
    examples: &[(usize, f64)],
    features: &[SparseVec],
    dim: usize,
    learning_rate: f64,
    l2: f64,
    epochs: usize,
    seed: u64,
) -> Head {
    let mut head = Head::zeroed(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let decay = 1.0 - learning_rate * l2;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (fi, y) = examples[i];
            let h = &features[fi];
            let p = sigmoid(h.dot(&head.weights) + head.bias);
            let residual = p - y;
            if l2 > 0.0 {
                for w in &mut head.weights {
                    *w *= decay;
                }
            }
            let step = learning_rate * residual;
            for &(j, v) in &h.entries {
                head.weights[j as usize] -= step * v;
            }
            head.bias -= step;
        }
    }
    head
}

/// Per-head training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTrainReport {
    /// Final training cross entropy per head, row-major (k, then n).
    pub final_losses: Vec<f64>,
    pub heads_without_labels: usize,
    pub seed: u64,
    pub epochs: usize,
}

/// Train the K x N head grid on a shared frozen query encoding. Heads are
/// independent: each shuffles with its own derived seed, and heads with no
/// labels fall back to zero weights and a bias at the logit of the global
/// mean label.
pub fn train_router(
    labels: &[MatchLabel],
    train: &Dataset,
    n_max: usize,
    cfg: &RouterTrainConfig,
    fcfg: &FeatureConfig,
) -> Result<(MultiHeadRouter, RouterTrainReport)> {
    cfg.validate()?;
    fcfg.validate()?;
    if n_max == 0 {
        return Err(Error::InvalidConfig("n_max must be >= 1".into()));
    }
    let model_names = train.small_model_names();
    let k_count = model_names.len();
    if k_count == 0 {
        return Err(Error::InvalidConfig(
            "router needs at least one non-reference model".into(),
        ));
    }

    let features: Vec<SparseVec> = train
        .records
        .par_iter()
        .map(|r| encode_query_sparse(&r.query_text, fcfg))
        .collect();
    let index_of: std::collections::HashMap<&str, usize> = train
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();

    let mut per_head: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k_count * n_max];
    for label in labels {
        if label.model_index >= k_count || label.sample_count == 0 || label.sample_count > n_max {
            return Err(Error::IndexOutOfRange(format!(
                "label for model index {} with n={} outside the {}x{} grid",
                label.model_index, label.sample_count, k_count, n_max
            )));
        }
        let fi = *index_of
            .get(label.query_id.as_str())
            .ok_or_else(|| Error::UnknownModel(format!("query id `{}`", label.query_id)))?;
        per_head[label.model_index * n_max + (label.sample_count - 1)].push((fi, label.y));
    }

    let global_mean = if labels.is_empty() {
        0.5
    } else {
        labels.iter().map(|l| l.y).sum::<f64>() / labels.len() as f64
    };

    let trained: Vec<(Head, f64, bool)> = (0..k_count * n_max)
        .into_par_iter()
        .map(|cell| {
            let examples = &per_head[cell];
            let (k, n_minus_1) = (cell / n_max, cell % n_max);
            if examples.is_empty() {
                let head = Head {
                    weights: vec![0.0; fcfg.dim],
                    bias: logit_clamped(global_mean),
                };
                return (head, f64::NAN, true);
            }
            let seed = derive_seed(cfg.seed, &["head"], &[k as u64, n_minus_1 as u64 + 1]);
            let head = train_binary_head(
                examples,
                &features,
                fcfg.dim,
                cfg.learning_rate,
                cfg.l2,
                cfg.epochs,
                seed,
            );
            let feats: Vec<SparseVec> = examples.iter().map(|&(fi, _)| features[fi].clone()).collect();
            let ys: Vec<f64> = examples.iter().map(|&(_, y)| y).collect();
            let loss = head_cross_entropy(&head, &feats, &ys).unwrap_or(f64::NAN);
            (head, loss, false)
        })
        .collect();

    let mut heads = Vec::with_capacity(k_count);
    let mut final_losses = Vec::with_capacity(k_count * n_max);
    let mut heads_without_labels = 0;
    for k in 0..k_count {
        let mut row = Vec::with_capacity(n_max);
        for n in 0..n_max {
            let (head, loss, defaulted) = trained[k * n_max + n].clone();
            row.push(head);
            final_losses.push(loss);
            if defaulted {
                heads_without_labels += 1;
            }
        }
        heads.push(row);
    }

    let router = MultiHeadRouter {
        feature_config: fcfg.clone(),
        model_names,
        n_max,
        heads,
    };
    let report = RouterTrainReport {
        final_losses,
        heads_without_labels,
        seed: cfg.seed,
        epochs: cfg.epochs,
    };
    Ok((router, report))
}

/// Match probability for model index `k` with sample count `n` (1-based).
/// Outputs are clamped to the open interval (0, 1).
pub fn predict_match_prob(
    router: &MultiHeadRouter,
    query_text: &str,
    k: usize,
    n: usize,
) -> Result<f64> {
    if k >= router.num_models() || n == 0 || n > router.n_max {
        return Err(Error::IndexOutOfRange(format!(
            "head ({k}, {n}) outside the {}x{} grid",
            router.num_models(),
            router.n_max
        )));
    }
    let h = encode_query_sparse(query_text, &router.feature_config);
    let head = &router.heads[k][n - 1];
    Ok(sigmoid_clamped(h.dot(&head.weights) + head.bias))
}

/// All K x N match probabilities with a single query encoding; equals
/// element-wise [`predict_match_prob`] exactly.
pub fn predict_all(router: &MultiHeadRouter, query_text: &str) -> Vec<Vec<f64>> {
    let h = encode_query_sparse(query_text, &router.feature_config);
    router
        .heads
        .iter()
        .map(|row| {
            row.iter()
                .map(|head| sigmoid_clamped(h.dot(&head.weights) + head.bias))
                .collect()
        })
        .collect()
}
