//! End-to-end routing: estimate per-combination costs, filter by match
//! probability, pick the cheapest valid (model, sample-count) pair with a
//! reference fallback, then execute best-of-n against stored samples.
//! Also the threshold sweep producing cost-quality trade-off curves.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{reference_spec, spec_for, Dataset, ModelSpec, QueryRecord};
use crate::error::{Error, Result};
use crate::linear::derive_seed;
use crate::reward::{select_best_among, ResponseScorer};
use crate::router::{predict_all, reference_response, MultiHeadRouter};

/// How best-of-n execution draws its n samples from the stored list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// The first n stored samples. Reproducible and the default.
    Prefix,
    /// n distinct stored samples drawn with a per-record derived seed.
    SeededRandom,
}

/// Routing run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Match-probability threshold in [0, 1].
    pub threshold: f64,
    /// Largest sample count considered per model.
    pub n_max: usize,
    pub subset_mode: SubsetMode,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            n_max: 5,
            subset_mode: SubsetMode::Prefix,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidConfig("n_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of routing one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub query_id: String,
    pub chosen_model: String,
    pub sample_count: usize,
    pub estimated_cost: f64,
    pub realized_cost: f64,
    pub selected_response_index: usize,
    pub realized_gt_score: f64,
    pub fallback_used: bool,
    /// (model, n) cells that passed the threshold but lacked stored samples.
    pub skipped_cells: usize,
}

/// One point on the cost-quality trade-off curve. Percentages are relative
/// to the always-reference policy on the same records; `None` marks an
/// undefined ratio (zero baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub threshold: Option<f64>,
    pub total_cost_usd: f64,
    pub mean_quality: f64,
    pub cost_reduction_pct: Option<f64>,
    pub quality_drop_pct: Option<f64>,
}

/// Estimated cost of drawing `n` responses: input tokens are charged once,
/// output is `n` times the model's average output length.
pub fn estimate_cost(spec: &ModelSpec, n: usize, input_tokens: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let avg = spec
        .avg_output_length
        .ok_or_else(|| Error::MissingAvgOutputLength(spec.name.clone()))?;
    Ok(n as f64 * avg * spec.output_token_price + input_tokens as f64 * spec.input_token_price)
}

fn realized_single_cost(spec: &ModelSpec, input_tokens: u64, output_tokens: u64) -> f64 {
    input_tokens as f64 * spec.input_token_price
        + output_tokens as f64 * spec.output_token_price
}

/// Route one query: predict all match probabilities, keep cells at or
/// above the threshold, pick the minimum estimated cost (ties: smaller n,
/// then model order), and fall back to a single reference call when no
/// cell qualifies. Execution realizes costs from actual stored token
/// counts.
pub fn route<S: ResponseScorer + ?Sized>(
    record: &QueryRecord,
    router: &MultiHeadRouter,
    scorer: &S,
    specs: &[ModelSpec],
    cfg: &EngineConfig,
) -> Result<RoutingDecision> {
    cfg.validate()?;
    if cfg.n_max > router.n_max {
        return Err(Error::InvalidConfig(format!(
            "n_max {} exceeds the router grid ({})",
            cfg.n_max, router.n_max
        )));
    }

    let probs = predict_all(router, &record.query_text);
    let mut best: Option<(f64, usize, usize)> = None; // (cost, n, k)
    let mut skipped_cells = 0usize;
    for (k, model) in router.model_names.iter().enumerate() {
        let spec = spec_for(specs, model)?;
        let available = record.samples_for(model).map_or(0, |s| s.len());
        for n in 1..=cfg.n_max {
            if probs[k][n - 1] < cfg.threshold {
                continue;
            }
            if n > available {
                skipped_cells += 1;
                continue;
            }
            let cost = estimate_cost(spec, n, record.input_tokens)?;
            let candidate = (cost, n, k);
            let better = match best {
                None => true,
                Some(current) => candidate < current,
            };
            if better {
                best = Some(candidate);
            }
        }
    }

    let ref_spec = reference_spec(specs)?;
    match best {
        None => {
            let anchor = reference_response(record, &ref_spec.name)?;
            Ok(RoutingDecision {
                query_id: record.id.clone(),
                chosen_model: ref_spec.name.clone(),
                sample_count: 1,
                estimated_cost: estimate_cost(ref_spec, 1, record.input_tokens)?,
                realized_cost: realized_single_cost(
                    ref_spec,
                    record.input_tokens,
                    anchor.output_tokens,
                ),
                selected_response_index: 0,
                realized_gt_score: anchor.gt_score,
                fallback_used: true,
                skipped_cells,
            })
        }
        Some((cost, n, k)) => {
            let model = &router.model_names[k];
            let spec = spec_for(specs, model)?;
            let samples = record.samples_for(model).ok_or_else(|| {
                Error::InsufficientSamples {
                    record_id: record.id.clone(),
                    message: format!("no samples for chosen model `{model}`"),
                }
            })?;
            let indices: Vec<usize> = match cfg.subset_mode {
                SubsetMode::Prefix => (0..n).collect(),
                SubsetMode::SeededRandom => {
                    let seed = derive_seed(cfg.seed, &[&record.id, model], &[n as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut pool: Vec<usize> = (0..samples.len()).collect();
                    for i in 0..n {
                        let j = rng.gen_range(i..samples.len());
                        pool.swap(i, j);
                    }
                    let mut subset = pool[..n].to_vec();
                    subset.sort_unstable();
                    subset
                }
            };
            let selected = select_best_among(scorer, &record.query_text, samples, &indices);
            let output_tokens: u64 = indices.iter().map(|&i| samples[i].output_tokens).sum();
            Ok(RoutingDecision {
                query_id: record.id.clone(),
                chosen_model: model.clone(),
                sample_count: n,
                estimated_cost: cost,
                realized_cost: realized_single_cost(spec, record.input_tokens, output_tokens),
                selected_response_index: selected,
                realized_gt_score: samples[selected].gt_score,
                fallback_used: false,
                skipped_cells,
            })
        }
    }
}

/// The always-reference policy: one call to the reference model, answered
/// by the designated reference response.
pub fn always_reference(record: &QueryRecord, specs: &[ModelSpec]) -> Result<RoutingDecision> {
    let ref_spec = reference_spec(specs)?;
    let anchor = reference_response(record, &ref_spec.name)?;
    Ok(RoutingDecision {
        query_id: record.id.clone(),
        chosen_model: ref_spec.name.clone(),
        sample_count: 1,
        estimated_cost: estimate_cost(ref_spec, 1, record.input_tokens)?,
        realized_cost: realized_single_cost(ref_spec, record.input_tokens, anchor.output_tokens),
        selected_response_index: 0,
        realized_gt_score: anchor.gt_score,
        fallback_used: false,
        skipped_cells: 0,
    })
}

/// One call to a fixed model, answered by its first stored sample; falls
/// back to the reference when the record lacks that model.
pub fn single_model_call(
    record: &QueryRecord,
    model: &str,
    specs: &[ModelSpec],
) -> Result<RoutingDecision> {
    let ref_spec = reference_spec(specs)?;
    let samples = record.samples_for(model).filter(|s| !s.is_empty());
    let Some(samples) = samples else {
        let mut decision = always_reference(record, specs)?;
        decision.fallback_used = true;
        return Ok(decision);
    };
    if model == ref_spec.name {
        return always_reference(record, specs);
    }
    let spec = spec_for(specs, model)?;
    Ok(RoutingDecision {
        query_id: record.id.clone(),
        chosen_model: model.to_string(),
        sample_count: 1,
        estimated_cost: estimate_cost(spec, 1, record.input_tokens)?,
        realized_cost: realized_single_cost(spec, record.input_tokens, samples[0].output_tokens),
        selected_response_index: 0,
        realized_gt_score: samples[0].gt_score,
        fallback_used: false,
        skipped_cells: 0,
    })
}

fn summarize(
    decisions: &[RoutingDecision],
    baseline: &[RoutingDecision],
    threshold: Option<f64>,
) -> TradeoffPoint {
    let total_cost: f64 = decisions.iter().map(|d| d.realized_cost).sum();
    let mean_quality: f64 =
        decisions.iter().map(|d| d.realized_gt_score).sum::<f64>() / decisions.len() as f64;
    let ref_cost: f64 = baseline.iter().map(|d| d.realized_cost).sum();
    let ref_quality: f64 =
        baseline.iter().map(|d| d.realized_gt_score).sum::<f64>() / baseline.len() as f64;
    let cost_reduction_pct = if ref_cost != 0.0 {
        Some(100.0 * (ref_cost - total_cost) / ref_cost)
    } else {
        None
    };
    let quality_drop_pct = if ref_quality != 0.0 {
        Some(100.0 * (ref_quality - mean_quality) / ref_quality)
    } else {
        None
    };
    TradeoffPoint {
        threshold,
        total_cost_usd: total_cost,
        mean_quality,
        cost_reduction_pct,
        quality_drop_pct,
    }
}

/// Apply a routing policy to every test record and aggregate realized cost
/// and quality against the always-reference policy on the same records.
pub fn run_policy<P>(
    test: &Dataset,
    policy: P,
    specs: &[ModelSpec],
) -> Result<(Vec<RoutingDecision>, TradeoffPoint)>
where
    P: Fn(&QueryRecord) -> Result<RoutingDecision> + Sync,
{
    if test.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate an empty dataset".into()));
    }
    let decisions: Vec<RoutingDecision> = test
        .records
        .par_iter()
        .map(|r| policy(r))
        .collect::<Result<Vec<_>>>()?;
    let baseline: Vec<RoutingDecision> = test
        .records
        .par_iter()
        .map(|r| always_reference(r, specs))
        .collect::<Result<Vec<_>>>()?;
    let point = summarize(&decisions, &baseline, None);
    Ok((decisions, point))
}

/// Evaluate the router policy at one threshold.
pub fn run_router_policy<S: ResponseScorer + ?Sized>(
    test: &Dataset,
    router: &MultiHeadRouter,
    scorer: &S,
    specs: &[ModelSpec],
    cfg: &EngineConfig,
) -> Result<(Vec<RoutingDecision>, TradeoffPoint)> {
    let (decisions, mut point) =
        run_policy(test, |r| route(r, router, scorer, specs, cfg), specs)?;
    point.threshold = Some(cfg.threshold);
    Ok((decisions, point))
}

/// Trade-off curve over a threshold grid, sorted ascending by threshold.
pub fn sweep_thresholds<S: ResponseScorer + ?Sized>(
    test: &Dataset,
    router: &MultiHeadRouter,
    scorer: &S,
    specs: &[ModelSpec],
    grid: &[f64],
    base_cfg: &EngineConfig,
) -> Result<Vec<TradeoffPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("threshold grid is empty".into()));
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidConfig("thresholds must lie in [0, 1]".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut points = Vec::with_capacity(sorted.len());
    for t in sorted {
        let cfg = EngineConfig {
            threshold: t,
            ..base_cfg.clone()
        };
        let (_, point) = run_router_policy(test, router, scorer, specs, &cfg)?;
        points.push(point);
    }
    Ok(points)
}

const BISECTION_MAX_ITERS: usize = 40;

/// Bisect a threshold in [0, 1] so the evaluated cost reduction hits
/// `target_pct` within `tol`. The evaluator maps a threshold to a
/// trade-off point; reduction is assumed non-increasing in the threshold,
/// and on non-monotone stretches the first bracketing threshold wins.
pub fn bisect_threshold_for_reduction<F>(
    eval: F,
    target_pct: f64,
    tol: f64,
) -> Result<(f64, TradeoffPoint)>
where
    F: Fn(f64) -> Result<TradeoffPoint>,
{
    let reduction = |p: &TradeoffPoint| -> Result<f64> {
        p.cost_reduction_pct.ok_or_else(|| {
            Error::InvalidConfig("cost reduction undefined: reference cost is zero".into())
        })
    };
    let lo_point = eval(0.0)?;
    let hi_point = eval(1.0)?;
    let red_lo = reduction(&lo_point)?;
    let red_hi = reduction(&hi_point)?;
    if target_pct > red_lo + tol || target_pct < red_hi - tol {
        return Err(Error::UnachievableTarget {
            target: target_pct,
            lo: red_hi.min(red_lo),
            hi: red_lo.max(red_hi),
        });
    }
    let mut best = if (red_lo - target_pct).abs() <= (red_hi - target_pct).abs() {
        (0.0, lo_point, red_lo)
    } else {
        (1.0, hi_point, red_hi)
    };
    if (best.2 - target_pct).abs() <= tol {
        return Ok((best.0, best.1));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let point = eval(mid)?;
        let achieved = reduction(&point)?;
        if (achieved - target_pct).abs() < (best.2 - target_pct).abs() {
            best = (mid, point.clone(), achieved);
        }
        if (achieved - target_pct).abs() <= tol {
            return Ok((mid, point));
        }
        if achieved > target_pct {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    log::warn!(
        "bisection stopped after {BISECTION_MAX_ITERS} iterations at reduction {:.4}% (target {target_pct}%)",
        best.2
    );
    Ok((best.0, best.1))
}

/// Find the router threshold whose cost reduction hits `target_pct`
/// within `tol` percentage points.
pub fn find_threshold_for_reduction<S: ResponseScorer + ?Sized>(
    test: &Dataset,
    router: &MultiHeadRouter,
    scorer: &S,
    specs: &[ModelSpec],
    target_pct: f64,
    tol: f64,
    base_cfg: &EngineConfig,
) -> Result<(f64, TradeoffPoint)> {
    bisect_threshold_for_reduction(
        |t| {
            let cfg = EngineConfig {
                threshold: t,
                ..base_cfg.clone()
            };
            run_router_policy(test, router, scorer, specs, &cfg).map(|(_, p)| p)
        },
        target_pct,
        tol,
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "undefined".to_string(),
    }
}

/// Render trade-off points as the CSV table emitted by sweep commands.
pub fn tradeoff_csv(points: &[TradeoffPoint]) -> String {
    let mut out =
        String::from("threshold,total_cost_usd,mean_quality,cost_reduction_pct,quality_drop_pct\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_opt(p.threshold),
            p.total_cost_usd,
            p.mean_quality,
            fmt_opt(p.cost_reduction_pct),
            fmt_opt(p.quality_drop_pct)
        ));
    }
    out
}

/// Render routing decisions as line-delimited JSON.
pub fn decisions_jsonl(decisions: &[RoutingDecision]) -> Result<String> {
    let mut out = String::new();
    for d in decisions {
        let line = serde_json::to_string(d)
            .map_err(|e| Error::Artifact(format!("serialize decision: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
