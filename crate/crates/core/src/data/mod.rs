//! Domain types, dataset ingestion/validation, splits, and derived
//! per-model statistics.
//!
//! A dataset is a line-delimited UTF-8 file: an optional header object
//! (keys `model_order` and/or `reference_model`) followed by one record
//! object per line with keys `id`, `query`, `task`, `input_tokens`
//! (optional) and `responses` (model name -> list of samples). Datasets are
//! immutable after load and safe to share across worker threads.

mod prices;

pub use prices::{reference_spec, spec_for, ModelSpec, PriceEntry, PriceSheet};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::estimate_cost;
use crate::error::{Error, Result};

/// Task category carried by each query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Qa,
    Coding,
    Safety,
    Other,
}

/// One recorded model response with its ground-truth quality score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub text: String,
    pub output_tokens: u64,
    pub gt_score: f64,
}

/// One query with per-model recorded response samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    #[serde(rename = "task")]
    pub task_tag: TaskTag,
    pub input_tokens: u64,
    #[serde(rename = "responses")]
    pub samples: IndexMap<String, Vec<ResponseSample>>,
}

impl QueryRecord {
    pub fn samples_for(&self, model: &str) -> Option<&[ResponseSample]> {
        self.samples.get(model).map(|v| v.as_slice())
    }
}

/// A validated collection of query records plus the model roster.
///
/// `model_names` order defines the model index `k` used everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<QueryRecord>,
    pub model_names: Vec<String>,
    pub reference_model: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Model names excluding the reference model, in roster order.
    pub fn small_model_names(&self) -> Vec<String> {
        self.model_names
            .iter()
            .filter(|m| **m != self.reference_model)
            .cloned()
            .collect()
    }

    /// Re-anchor the dataset on a different reference model and re-validate.
    pub fn with_reference_model(mut self, reference: &str) -> Result<Self> {
        self.reference_model = reference.to_string();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.model_names.iter().any(|m| m == &self.reference_model) {
            return Err(Error::UnknownModel(format!(
                "reference model `{}` is not in the model roster",
                self.reference_model
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for record in &self.records {
            validate_record(record)?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::Validation {
                    record_id: record.id.clone(),
                    field: "id".into(),
                    message: "duplicate record id".into(),
                });
            }
            if record
                .samples_for(&self.reference_model)
                .map_or(true, |s| s.is_empty())
            {
                return Err(Error::Validation {
                    record_id: record.id.clone(),
                    field: "responses".into(),
                    message: format!(
                        "missing samples for reference model `{}`",
                        self.reference_model
                    ),
                });
            }
        }
        Ok(())
    }
}

fn validate_record(record: &QueryRecord) -> Result<()> {
    let err = |field: &str, message: String| Error::Validation {
        record_id: record.id.clone(),
        field: field.into(),
        message,
    };
    if record.id.is_empty() {
        return Err(err("id", "empty id".into()));
    }
    if record.query_text.is_empty() {
        return Err(err("query", "empty query text".into()));
    }
    if record.input_tokens == 0 {
        return Err(err("input_tokens", "must be >= 1".into()));
    }
    for (model, samples) in &record.samples {
        if samples.is_empty() {
            return Err(err(
                "responses",
                format!("model `{model}` listed with zero samples"),
            ));
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.gt_score.is_finite() || s.gt_score < -1.0 || s.gt_score > 1.0 {
                return Err(err(
                    "gt_score",
                    format!("model `{model}` sample {i}: score {} outside [-1, 1]", s.gt_score),
                ));
            }
            if s.text.is_empty() && s.output_tokens != 0 {
                return Err(err(
                    "text",
                    format!(
                        "model `{model}` sample {i}: empty text with output_tokens {}",
                        s.output_tokens
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// Fractional train/valid/test split with a shuffle seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_fraction, self.valid_fraction, self.test_fraction];
        if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::InvalidConfig(
                "split fractions must lie in (0, 1)".into(),
            ));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct HeaderLine {
    #[serde(default)]
    model_order: Option<Vec<String>>,
    #[serde(default)]
    reference_model: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    query: String,
    task: TaskTag,
    #[serde(default)]
    input_tokens: Option<u64>,
    responses: IndexMap<String, Vec<ResponseSample>>,
}

/// Load and validate a line-delimited dataset file.
///
/// Model roster order is first-seen order across records unless a header
/// line pins `model_order`. The reference model defaults to the first
/// roster entry when the header does not name one.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut model_names: Vec<String> = Vec::new();
    let mut reference_model: Option<String> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        let is_header = lineno == 1
            && value.get("id").is_none()
            && (value.get("model_order").is_some() || value.get("reference_model").is_some());
        if is_header {
            let header: HeaderLine =
                serde_json::from_value(value).map_err(|e| Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
            if let Some(order) = header.model_order {
                model_names = order;
            }
            reference_model = header.reference_model;
            continue;
        }
        let raw: RawRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let input_tokens = match raw.input_tokens {
            Some(t) => t,
            // fall back to a whitespace token count, floored at 1
            None => (raw.query.split_whitespace().count() as u64).max(1),
        };
        for model in raw.responses.keys() {
            if !model_names.iter().any(|m| m == model) {
                model_names.push(model.clone());
            }
        }
        records.push(QueryRecord {
            id: raw.id,
            query_text: raw.query,
            task_tag: raw.task,
            input_tokens,
            samples: raw.responses,
        });
    }

    let reference_model = match reference_model {
        Some(r) => r,
        None => model_names.first().cloned().ok_or_else(|| Error::Parse {
            line: 0,
            message: "dataset contains no records".into(),
        })?,
    };

    let dataset = Dataset {
        records,
        model_names,
        reference_model,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Write a dataset in the line-delimited format read by [`load_dataset`].
pub fn save_dataset(dataset: &Dataset, mut writer: impl Write) -> Result<()> {
    let header = serde_json::json!({
        "model_order": dataset.model_names,
        "reference_model": dataset.reference_model,
    });
    writeln!(writer, "{header}")?;
    for record in &dataset.records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Artifact(format!("serialize record `{}`: {e}", record.id)))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Deterministically partition a dataset into train/valid/test.
///
/// Records are shuffled by a seeded permutation and cut in train, valid,
/// test order. Valid and test sizes are `round(fraction * n)`; the
/// remainder goes to train.
pub fn split_dataset(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let n = dataset.records.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 records to split, got {n}"
        )));
    }
    let n_valid = (spec.valid_fraction * n as f64).round() as usize;
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    if n_valid + n_test > n {
        return Err(Error::InvalidConfig(format!(
            "valid+test sizes {}+{} exceed {n} records",
            n_valid, n_test
        )));
    }
    let n_train = n - n_valid - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let slice_to_dataset = |idx: &[usize]| Dataset {
        records: idx.iter().map(|&i| dataset.records[i].clone()).collect(),
        model_names: dataset.model_names.clone(),
        reference_model: dataset.reference_model.clone(),
    };
    let train = slice_to_dataset(&order[..n_train]);
    let valid = slice_to_dataset(&order[n_train..n_train + n_valid]);
    let test = slice_to_dataset(&order[n_train + n_valid..]);
    Ok((train, valid, test))
}

/// Arithmetic mean of `output_tokens` over all of a model's samples in a split.
pub fn compute_avg_output_length(train: &Dataset, model: &str) -> Result<f64> {
    if !train.model_names.iter().any(|m| m == model) {
        return Err(Error::UnknownModel(model.to_string()));
    }
    let mut total: u128 = 0;
    let mut count: u64 = 0;
    for record in &train.records {
        if let Some(samples) = record.samples_for(model) {
            for s in samples {
                total += u128::from(s.output_tokens);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InsufficientSamples {
            record_id: "<split>".into(),
            message: format!("no samples for model `{model}` in the training split"),
        });
    }
    Ok(total as f64 / count as f64)
}

/// Fill `avg_output_length` for every spec from the training split.
pub fn populate_avg_output_lengths(train: &Dataset, specs: &mut [ModelSpec]) -> Result<()> {
    for spec in specs {
        spec.avg_output_length = Some(compute_avg_output_length(train, &spec.name)?);
    }
    Ok(())
}

/// Mean per-query absolute gap between estimated and actual single-response
/// cost, per model. Actual cost uses each record's first stored sample.
pub fn cost_estimation_error(
    test: &Dataset,
    specs: &[ModelSpec],
) -> Result<IndexMap<String, f64>> {
    let mut out = IndexMap::new();
    for model in &test.model_names {
        let spec = spec_for(specs, model)?;
        let mut total = 0.0;
        let mut count = 0u64;
        for record in &test.records {
            let Some(samples) = record.samples_for(model) else {
                continue;
            };
            let estimated = estimate_cost(spec, 1, record.input_tokens)?;
            let actual = record.input_tokens as f64 * spec.input_token_price
                + samples[0].output_tokens as f64 * spec.output_token_price;
            total += (estimated - actual).abs();
            count += 1;
        }
        if count > 0 {
            out.insert(model.clone(), total / count as f64);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    pub(crate) fn sample(text: &str, tokens: u64, gt: f64) -> ResponseSample {
        ResponseSample {
            text: text.to_string(),
            output_tokens: tokens,
            gt_score: gt,
        }
    }

    pub(crate) fn record(
        id: &str,
        query: &str,
        models: &[(&str, Vec<ResponseSample>)],
    ) -> QueryRecord {
        let mut samples = IndexMap::new();
        for (m, s) in models {
            samples.insert(m.to_string(), s.clone());
        }
        QueryRecord {
            id: id.to_string(),
            query_text: query.to_string(),
            task_tag: TaskTag::Other,
            input_tokens: (query.split_whitespace().count() as u64).max(1),
            samples,
        }
    }

    fn two_model_dataset(n: usize) -> Dataset {
        let records = (0..n)
            .map(|i| {
                record(
                    &format!("q{i}"),
                    &format!("query number {i}"),
                    &[
                        ("ref", vec![sample("r", 10, 0.9)]),
                        ("small", vec![sample("s", 5, 0.5), sample("t", 7, 0.6)]),
                    ],
                )
            })
            .collect();
        Dataset {
            records,
            model_names: vec!["ref".into(), "small".into()],
            reference_model: "ref".into(),
        }
    }

    #[test]
    fn load_single_record_two_models() {
        let line = r#"{"id":"q1","query":"hello there","task":"qa","responses":{"a":[{"text":"x","output_tokens":3,"gt_score":0.5}],"b":[{"text":"y","output_tokens":4,"gt_score":0.1}]}}"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let d = load_dataset(&path).unwrap();
        assert_eq!(d.records.len(), 1);
        assert_eq!(d.model_names, vec!["a", "b"]);
        assert_eq!(d.reference_model, "a");
        // input_tokens derived from the two-word query
        assert_eq!(d.records[0].input_tokens, 2);
    }

    #[test]
    fn load_rejects_duplicate_id() {
        let line = r#"{"id":"q1","query":"hi","task":"qa","responses":{"a":[{"text":"x","output_tokens":1,"gt_score":0.0}]}}"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("q1"), "{err}");
    }

    #[test]
    fn load_reports_missing_reference_record() {
        let mk = |id: usize, with_ref: bool| {
            let responses = if with_ref {
                r#"{"ref":[{"text":"x","output_tokens":1,"gt_score":0.0}],"small":[{"text":"y","output_tokens":1,"gt_score":0.0}]}"#
            } else {
                r#"{"small":[{"text":"y","output_tokens":1,"gt_score":0.0}]}"#
            };
            format!(
                r#"{{"id":"q{id}","query":"hi","task":"other","responses":{responses}}}"#
            )
        };
        let mut lines =
            vec![r#"{"model_order":["ref","small"],"reference_model":"ref"}"#.to_string()];
        for i in 0..10 {
            lines.push(mk(i, i != 6)); // record 7 (id q6) lacks the reference
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("q6"), "{err}");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"id\":\n").unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let d = two_model_dataset(4);
        let mut buf = Vec::new();
        save_dataset(&d, Cursor::new(&mut buf)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, &buf).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(d, loaded);
    }

    #[test]
    fn split_sizes_match_paper_proportions() {
        let d = two_model_dataset(10);
        let spec = SplitSpec {
            train_fraction: 0.8,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 7,
        };
        let (train, valid, test) = split_dataset(&d, &spec).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (8, 1, 1));
    }

    #[test]
    fn split_three_ways_even() {
        let d = two_model_dataset(3);
        let spec = SplitSpec {
            train_fraction: 1.0 / 3.0,
            valid_fraction: 1.0 / 3.0,
            test_fraction: 1.0 / 3.0,
            seed: 3,
        };
        let (train, valid, test) = split_dataset(&d, &spec).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (1, 1, 1));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let d = two_model_dataset(17);
        let spec = SplitSpec {
            train_fraction: 0.6,
            valid_fraction: 0.2,
            test_fraction: 0.2,
            seed: 99,
        };
        let (a1, b1, c1) = split_dataset(&d, &spec).unwrap();
        let (a2, b2, c2) = split_dataset(&d, &spec).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
        let mut ids: Vec<&str> = a1
            .records
            .iter()
            .chain(&b1.records)
            .chain(&c1.records)
            .map(|r| r.id.as_str())
            .collect();
        ids.sort_unstable();
        let mut expected: Vec<String> = (0..17).map(|i| format!("q{i}")).collect();
        expected.sort();
        assert_eq!(ids, expected.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    }

    #[test]
    fn avg_output_length_mean_of_two() {
        let d = Dataset {
            records: vec![record(
                "q0",
                "hi",
                &[("m", vec![sample("a", 100, 0.0), sample("b", 200, 0.0)])],
            )],
            model_names: vec!["m".into()],
            reference_model: "m".into(),
        };
        assert_eq!(compute_avg_output_length(&d, "m").unwrap(), 150.0);
    }

    #[test]
    fn avg_output_length_zero_case() {
        let d = Dataset {
            records: vec![record(
                "q0",
                "hi",
                &[("m", vec![sample("", 0, 0.0), sample("", 0, 0.0)])],
            )],
            model_names: vec!["m".into()],
            reference_model: "m".into(),
        };
        assert_eq!(compute_avg_output_length(&d, "m").unwrap(), 0.0);
    }

    #[test]
    fn avg_output_length_hand_summed_fixture() {
        // 3 records x 4 samples: counts 1..12, mean = 78/12 = 6.5
        let records = (0..3)
            .map(|r| {
                let samples: Vec<ResponseSample> = (0..4)
                    .map(|s| sample("x", (r * 4 + s + 1) as u64, 0.0))
                    .collect();
                record(&format!("q{r}"), "hi", &[("m", samples)])
            })
            .collect();
        let d = Dataset {
            records,
            model_names: vec!["m".into()],
            reference_model: "m".into(),
        };
        assert_eq!(compute_avg_output_length(&d, "m").unwrap(), 6.5);
    }

    #[test]
    fn avg_output_length_unknown_model() {
        let d = two_model_dataset(3);
        assert!(matches!(
            compute_avg_output_length(&d, "nope"),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn estimation_error_zero_on_constant_lengths() {
        let d = two_model_dataset(5); // every "ref" sample has 10 output tokens
        let mut specs = vec![
            ModelSpec::new("ref", 1e-6, 2e-6, true),
            ModelSpec::new("small", 1e-7, 1e-7, false),
        ];
        populate_avg_output_lengths(&d, &mut specs).unwrap();
        let errs = cost_estimation_error(&d, &specs).unwrap();
        assert_eq!(errs["ref"], 0.0);
    }

    #[test]
    fn estimation_error_two_length_fixture() {
        // lengths {90, 110} across two records, avg 100, output price 1e-6
        let records = vec![
            record("q0", "hi", &[("m", vec![sample("a", 90, 0.0)])]),
            record("q1", "hi", &[("m", vec![sample("b", 110, 0.0)])]),
        ];
        let d = Dataset {
            records,
            model_names: vec!["m".into()],
            reference_model: "m".into(),
        };
        let mut specs = vec![ModelSpec::new("m", 0.0, 1e-6, true)];
        populate_avg_output_lengths(&d, &mut specs).unwrap();
        let errs = cost_estimation_error(&d, &specs).unwrap();
        assert!((errs["m"] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn estimation_error_requires_avg_lengths() {
        let d = two_model_dataset(3);
        let specs = vec![
            ModelSpec::new("ref", 1e-6, 2e-6, true),
            ModelSpec::new("small", 1e-7, 1e-7, false),
        ];
        assert!(matches!(
            cost_estimation_error(&d, &specs),
            Err(Error::MissingAvgOutputLength(_))
        ));
    }
}
