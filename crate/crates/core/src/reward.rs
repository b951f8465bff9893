//! Proxy reward model: a linear scorer over query-response pair features
//! trained with a pairwise ranking loss, used to pick the best of n
//! sampled responses without consulting ground truth at inference time.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ResponseSample};
use crate::error::{Error, Result};
use crate::features::{encode_pair_sparse, FeatureConfig};
use crate::linear::{sigmoid, softplus, SparseVec};

/// SGD hyper-parameters shared by the linear trainers in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.1,
            l2: 1e-6,
            seed: 0,
            shuffle: true,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::InvalidConfig("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// An ordered response pair: `better` strictly outranks `worse` under the
/// ground-truth score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query_id: String,
    pub query_text: String,
    pub better: ResponseSample,
    pub worse: ResponseSample,
}

/// Pairs plus a count of (record, model) cells skipped for having fewer
/// than three samples.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub pairs: Vec<TrainingPair>,
    pub skipped_cells: usize,
}

/// Build (worst, median) and (median, best) pairs per (record, model).
///
/// Samples are sorted ascending by ground-truth score (ties keep stored
/// order); the median is the lower median. Pairs whose two scores are
/// equal are dropped.
pub fn build_training_pairs(train: &Dataset, model_subset: &[String]) -> PairSet {
    let mut pairs = Vec::new();
    let mut skipped_cells = 0usize;
    for record in &train.records {
        for model in model_subset {
            let Some(samples) = record.samples_for(model) else {
                skipped_cells += 1;
                continue;
            };
            if samples.len() < 3 {
                skipped_cells += 1;
                continue;
            }
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.sort_by(|&a, &b| {
                samples[a]
                    .gt_score
                    .partial_cmp(&samples[b].gt_score)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let worst = &samples[order[0]];
            let median = &samples[order[(order.len() - 1) / 2]];
            let best = &samples[order[order.len() - 1]];
            for (lo, hi) in [(worst, median), (median, best)] {
                if hi.gt_score > lo.gt_score {
                    pairs.push(TrainingPair {
                        query_id: record.id.clone(),
                        query_text: record.query_text.clone(),
                        better: hi.clone(),
                        worse: lo.clone(),
                    });
                }
            }
        }
    }
    PairSet {
        pairs,
        skipped_cells,
    }
}

/// Linear proxy reward model over the pair encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyRewardModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_config: FeatureConfig,
}

impl ProxyRewardModel {
    pub fn zeroed(feature_config: FeatureConfig) -> Self {
        let dim = feature_config.pair_dim();
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            feature_config,
        }
    }

    /// Proxy score for a (query, response) pair. Pure and deterministic.
    pub fn score(&self, query: &str, response: &str) -> f64 {
        let features = encode_pair_sparse(query, response, &self.feature_config);
        self.score_features(&features)
    }

    pub fn score_features(&self, features: &SparseVec) -> f64 {
        features.dot(&self.weights) + self.bias
    }
}

/// Anything that can score a stored response for a query.
pub trait ResponseScorer: Sync {
    fn score_response(&self, query: &str, sample: &ResponseSample) -> f64;
}

impl ResponseScorer for ProxyRewardModel {
    fn score_response(&self, query: &str, sample: &ResponseSample) -> f64 {
        self.score(query, &sample.text)
    }
}

/// Scorer that returns the stored ground-truth score; the perfect-proxy
/// oracle used by self-checks and tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct GtScorer;

impl ResponseScorer for GtScorer {
    fn score_response(&self, _query: &str, sample: &ResponseSample) -> f64 {
        sample.gt_score
    }
}

fn pair_margin(model: &ProxyRewardModel, pair: &TrainingPair) -> f64 {
    let better = encode_pair_sparse(&pair.query_text, &pair.better.text, &model.feature_config);
    let worse = encode_pair_sparse(&pair.query_text, &pair.worse.text, &model.feature_config);
    better.sub(&worse).dot(&model.weights)
}

/// Mean pairwise ranking loss `-(1/|P|) sum ln sigmoid(margin)`, computed
/// in the stable softplus form.
pub fn ranking_loss(model: &ProxyRewardModel, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet("ranking loss over zero pairs".into()));
    }
    let total: f64 = pairs
        .iter()
        .map(|p| softplus(-pair_margin(model, p)))
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Full-batch analytic gradient of [`ranking_loss`] with respect to
/// (weights, bias). The bias cancels in every margin, so its gradient is
/// exactly zero.
pub fn ranking_loss_gradient(
    model: &ProxyRewardModel,
    pairs: &[TrainingPair],
) -> Result<(Vec<f64>, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet("ranking gradient over zero pairs".into()));
    }
    let mut grad = vec![0.0; model.weights.len()];
    for pair in pairs {
        let better = encode_pair_sparse(&pair.query_text, &pair.better.text, &model.feature_config);
        let worse = encode_pair_sparse(&pair.query_text, &pair.worse.text, &model.feature_config);
        let diff = better.sub(&worse);
        let margin = diff.dot(&model.weights);
        let coeff = -sigmoid(-margin);
        for &(i, v) in &diff.entries {
            grad[i as usize] += coeff * v;
        }
    }
    let scale = 1.0 / pairs.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((grad, 0.0))
}

/// Training metadata kept alongside a persisted proxy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyTrainReport {
    pub epoch_losses: Vec<f64>,
    pub pairs_used: usize,
    pub skipped_cells: usize,
    pub seed: u64,
    pub epochs: usize,
}

/// Train a proxy reward model by seeded SGD over ranking pairs built from
/// every model in the dataset roster.
pub fn train_proxy(
    train: &Dataset,
    cfg: &SgdConfig,
    fcfg: &FeatureConfig,
) -> Result<(ProxyRewardModel, ProxyTrainReport)> {
    cfg.validate()?;
    fcfg.validate()?;
    let pair_set = build_training_pairs(train, &train.model_names);
    train_proxy_on_pairs(&pair_set, cfg, fcfg)
}

/// Train on an explicit pair set; exposed for synthetic-fixture tests.
pub fn train_proxy_on_pairs(
    pair_set: &PairSet,
    cfg: &SgdConfig,
    fcfg: &FeatureConfig,
) -> Result<(ProxyRewardModel, ProxyTrainReport)> {
    cfg.validate()?;
    fcfg.validate()?;
    if pair_set.pairs.is_empty() {
        return Err(Error::EmptyTrainingSet(
            "pair construction produced zero ranking pairs".into(),
        ));
    }

    // Margins only ever see feature differences, so precompute those once.
    let diffs: Vec<SparseVec> = pair_set
        .pairs
        .iter()
        .map(|p| {
            let better = encode_pair_sparse(&p.query_text, &p.better.text, fcfg);
            let worse = encode_pair_sparse(&p.query_text, &p.worse.text, fcfg);
            better.sub(&worse)
        })
        .collect();

    let mut model = ProxyRewardModel::zeroed(fcfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs + 1);

    let full_loss = |weights: &[f64]| -> f64 {
        diffs
            .iter()
            .map(|d| softplus(-d.dot(weights)))
            .sum::<f64>()
            / diffs.len() as f64
    };
    epoch_losses.push(full_loss(&model.weights));

    let decay = 1.0 - cfg.learning_rate * cfg.l2;
    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for &i in &order {
            let diff = &diffs[i];
            let margin = diff.dot(&model.weights);
            let step = cfg.learning_rate * sigmoid(-margin);
            if cfg.l2 > 0.0 {
                for w in &mut model.weights {
                    *w *= decay;
                }
            }
            for &(j, v) in &diff.entries {
                model.weights[j as usize] += step * v;
            }
        }
        epoch_losses.push(full_loss(&model.weights));
    }

    let report = ProxyTrainReport {
        epoch_losses,
        pairs_used: pair_set.pairs.len(),
        skipped_cells: pair_set.skipped_cells,
        seed: cfg.seed,
        epochs: cfg.epochs,
    };
    Ok((model, report))
}

/// Index (into `indices`' values) of the highest-scoring sample; ties go to
/// the lowest stored index.
pub fn select_best_among<S: ResponseScorer + ?Sized>(
    scorer: &S,
    query: &str,
    samples: &[ResponseSample],
    indices: &[usize],
) -> usize {
    debug_assert!(!indices.is_empty());
    let mut best_idx = indices[0];
    let mut best_score = scorer.score_response(query, &samples[best_idx]);
    for &i in &indices[1..] {
        let s = scorer.score_response(query, &samples[i]);
        if s > best_score || (s == best_score && i < best_idx) {
            best_idx = i;
            best_score = s;
        }
    }
    best_idx
}

/// Best-of-n selection over the first `n` stored samples: returns the
/// index of the proxy-score argmax, ties broken by lowest index.
pub fn select_best_of_n<S: ResponseScorer + ?Sized>(
    scorer: &S,
    query: &str,
    samples: &[ResponseSample],
    n: usize,
) -> Result<usize> {
    if n == 0 || n > samples.len() {
        return Err(Error::IndexOutOfRange(format!(
            "best-of-n with n={n} over {} samples",
            samples.len()
        )));
    }
    let indices: Vec<usize> = (0..n).collect();
    Ok(select_best_among(scorer, query, samples, &indices))
}
