//! Deterministic text-feature encodings.
//!
//! Three encoders live here: a signed feature-hashing query encoder shared
//! by all routers, a query-response pair encoder for the proxy reward
//! model, and a TF-IDF vectorizer for the clustering baseline. All three
//! are pure functions of (text, config), so encodings are reproducible at
//! artifact load time.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{fnv1a64, SparseVec};

/// Configuration for the hashed n-gram encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Output dimensionality of the hashed query encoding.
    pub dim: usize,
    /// Word n-gram orders over whitespace tokens.
    pub word_ngrams: Vec<usize>,
    /// Character n-gram orders over the raw text.
    pub char_ngrams: Vec<usize>,
    pub hash_seed: u64,
    /// L2-normalize nonzero encodings.
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            dim: 4096,
            word_ngrams: vec![1, 2],
            char_ngrams: vec![3, 4],
            hash_seed: 0,
            normalize: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 16 {
            return Err(Error::InvalidConfig(format!(
                "feature dim must be >= 16, got {}",
                self.dim
            )));
        }
        if self
            .word_ngrams
            .iter()
            .chain(&self.char_ngrams)
            .any(|&n| n == 0)
        {
            return Err(Error::InvalidConfig("n-gram orders must be >= 1".into()));
        }
        Ok(())
    }

    /// Length of the pair encoding: two query-sized blocks plus the four
    /// overlap scalars.
    pub fn pair_dim(&self) -> usize {
        2 * self.dim + 4
    }
}

fn accumulate_term(buckets: &mut BTreeMap<u32, f64>, cfg: &FeatureConfig, term: &str) {
    let h = fnv1a64(cfg.hash_seed, term.as_bytes());
    let idx = (h % cfg.dim as u64) as u32;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    *buckets.entry(idx).or_insert(0.0) += sign;
}

/// Sparse form of [`encode_query`]. Indices ascend, so dot products against
/// the dense form are bit-identical.
pub fn encode_query_sparse(text: &str, cfg: &FeatureConfig) -> SparseVec {
    let mut buckets: BTreeMap<u32, f64> = BTreeMap::new();

    let tokens: Vec<&str> = text.split_whitespace().collect();
    for &n in &cfg.word_ngrams {
        if n == 0 || tokens.len() < n {
            continue;
        }
        for window in tokens.windows(n) {
            let term = format!("w{n}\u{1f}{}", window.join("\u{1f}"));
            accumulate_term(&mut buckets, cfg, &term);
        }
    }

    let chars: Vec<char> = text.chars().collect();
    for &n in &cfg.char_ngrams {
        if n == 0 || chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            let gram: String = window.iter().collect();
            let term = format!("c{n}\u{1f}{gram}");
            accumulate_term(&mut buckets, cfg, &term);
        }
    }

    let mut vec = SparseVec::new(
        buckets
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .collect::<Vec<_>>(),
    );
    if cfg.normalize {
        let norm = vec.l2_norm();
        if norm > 0.0 {
            vec.scale(1.0 / norm);
        }
    }
    vec
}

/// Hashed signed n-gram encoding of a text, length `cfg.dim`.
pub fn encode_query(text: &str, cfg: &FeatureConfig) -> Vec<f64> {
    encode_query_sparse(text, cfg).to_dense(cfg.dim)
}

/// The four scalar overlap features appended to the pair encoding:
/// unigram Jaccard, min/max token-count ratio, response length scaled by
/// 1/512 and clipped to [0, 1], and the fraction of response unigrams that
/// appear in the query.
pub fn pair_overlap_features(query: &str, response: &str) -> [f64; 4] {
    let q_tokens: Vec<&str> = query.split_whitespace().collect();
    let r_tokens: Vec<&str> = response.split_whitespace().collect();
    let q_set: BTreeSet<&str> = q_tokens.iter().copied().collect();
    let r_set: BTreeSet<&str> = r_tokens.iter().copied().collect();

    let inter = q_set.intersection(&r_set).count();
    let union = q_set.union(&r_set).count();
    let jaccard = if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    };

    let (qn, rn) = (q_tokens.len(), r_tokens.len());
    let len_ratio = if qn == 0 || rn == 0 {
        0.0
    } else {
        qn.min(rn) as f64 / qn.max(rn) as f64
    };

    let resp_len = (rn as f64 / 512.0).min(1.0);

    let resp_in_query = if r_set.is_empty() {
        0.0
    } else {
        inter as f64 / r_set.len() as f64
    };

    [jaccard, len_ratio, resp_len, resp_in_query]
}

/// Sparse form of [`encode_pair`].
pub fn encode_pair_sparse(query: &str, response: &str, cfg: &FeatureConfig) -> SparseVec {
    let dim = cfg.dim as u32;
    let q = encode_query_sparse(query, cfg);
    let r = encode_query_sparse(response, cfg);
    let overlap = pair_overlap_features(query, response);

    let mut entries = q.entries;
    entries.extend(r.entries.into_iter().map(|(i, v)| (i + dim, v)));
    for (off, &v) in overlap.iter().enumerate() {
        if v != 0.0 {
            entries.push((2 * dim + off as u32, v));
        }
    }
    SparseVec::new(entries)
}

/// Query-response pair encoding of length `2 * cfg.dim + 4`: the two
/// query encodings concatenated, then the overlap scalars.
pub fn encode_pair(query: &str, response: &str, cfg: &FeatureConfig) -> Vec<f64> {
    encode_pair_sparse(query, response, cfg).to_dense(cfg.pair_dim())
}

/// TF-IDF vocabulary fitted on a document collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVocabulary {
    /// Term -> (dense index, idf weight).
    pub terms: IndexMap<String, (u32, f64)>,
    pub document_count: usize,
}

impl TfidfVocabulary {
    pub fn dim(&self) -> usize {
        self.terms.len()
    }
}

/// Fit a TF-IDF vocabulary over whitespace tokens with
/// `idf = ln((1 + D) / (1 + df)) + 1`. Term indices follow first-seen order.
pub fn tfidf_fit<S: AsRef<str>>(documents: &[S]) -> TfidfVocabulary {
    let mut doc_freq: IndexMap<String, usize> = IndexMap::new();
    for doc in documents {
        let mut seen = BTreeSet::new();
        for token in doc.as_ref().split_whitespace() {
            if seen.insert(token) {
                *doc_freq.entry(token.to_string()).or_insert(0) += 1;
            }
        }
    }
    let d = documents.len();
    let terms = doc_freq
        .into_iter()
        .enumerate()
        .map(|(idx, (term, df))| {
            let idf = ((1.0 + d as f64) / (1.0 + df as f64)).ln() + 1.0;
            (term, (idx as u32, idf))
        })
        .collect();
    TfidfVocabulary {
        terms,
        document_count: d,
    }
}

/// L2-normalized tf-idf encoding of a text; unseen terms are ignored.
pub fn tfidf_transform(vocab: &TfidfVocabulary, text: &str) -> SparseVec {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for token in text.split_whitespace() {
        if let Some(&(idx, idf)) = vocab.terms.get(token) {
            *counts.entry(idx).or_insert(0.0) += idf;
        }
    }
    let mut vec = SparseVec::new(counts.into_iter().collect());
    let norm = vec.l2_norm();
    if norm > 0.0 {
        vec.scale(1.0 / norm);
    }
    vec
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_zero_vector() {
        let cfg = FeatureConfig::default();
        let v = encode_query("", &cfg);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nonempty_text_has_unit_norm() {
        let cfg = FeatureConfig::default();
        let v = encode_query("the quick brown fox", &cfg);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn different_seeds_change_encoding() {
        let a = FeatureConfig {
            hash_seed: 1,
            ..FeatureConfig::default()
        };
        let b = FeatureConfig {
            hash_seed: 2,
            ..FeatureConfig::default()
        };
        let text = "a fixed sentence used for the seed check";
        assert_ne!(encode_query(text, &a), encode_query(text, &b));
    }

    #[test]
    fn dense_and_sparse_agree() {
        let cfg = FeatureConfig::default();
        let text = "some words repeated some words";
        let sparse = encode_query_sparse(text, &cfg);
        assert_eq!(sparse.to_dense(cfg.dim), encode_query(text, &cfg));
    }

    #[test]
    fn overlap_identical_strings() {
        let [jaccard, len_ratio, _, resp_in_query] = pair_overlap_features("a b c", "a b c");
        assert_eq!(jaccard, 1.0);
        assert_eq!(len_ratio, 1.0);
        assert_eq!(resp_in_query, 1.0);
    }

    #[test]
    fn overlap_disjoint_tokens() {
        let [jaccard, _, _, resp_in_query] = pair_overlap_features("a b", "c d");
        assert_eq!(jaccard, 0.0);
        assert_eq!(resp_in_query, 0.0);
    }

    #[test]
    fn overlap_partial_jaccard() {
        let [jaccard, ..] = pair_overlap_features("the cat", "the cat sat");
        assert!((jaccard - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pair_encoding_layout() {
        let cfg = FeatureConfig {
            dim: 16,
            ..FeatureConfig::default()
        };
        let v = encode_pair("the cat", "the cat sat", &cfg);
        assert_eq!(v.len(), cfg.pair_dim());
        assert!((v[2 * cfg.dim] - 2.0 / 3.0).abs() < 1e-15); // jaccard slot
        assert!((v[2 * cfg.dim + 1] - 2.0 / 3.0).abs() < 1e-15); // length ratio
    }

    #[test]
    fn tfidf_single_doc_hand_value() {
        let vocab = tfidf_fit(&["x x y"]);
        let v = tfidf_transform(&vocab, "x x y");
        // idf equal for both terms, tf (2, 1) -> normalized (2, 1)/sqrt(5)
        let expected = [2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt()];
        assert_eq!(v.entries.len(), 2);
        assert!((v.entries[0].1 - expected[0]).abs() < 1e-12);
        assert!((v.entries[1].1 - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn tfidf_unseen_terms_ignored() {
        let vocab = tfidf_fit(&["x y"]);
        let v = tfidf_transform(&vocab, "z w");
        assert_eq!(v.nnz(), 0);
    }

    #[test]
    fn tfidf_identical_docs_identical_vectors() {
        let vocab = tfidf_fit(&["alpha beta", "alpha beta"]);
        let a = tfidf_transform(&vocab, "alpha beta");
        let b = tfidf_transform(&vocab, "alpha beta");
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn encode_query_norm_contract(text in "[a-d ]{0,40}") {
            let cfg = FeatureConfig { dim: 64, ..FeatureConfig::default() };
            let v = encode_query_sparse(&text, &cfg);
            let norm = v.l2_norm();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
        }

        #[test]
        fn encoders_are_pure(text in "[a-f ]{0,30}") {
            let cfg = FeatureConfig { dim: 32, ..FeatureConfig::default() };
            prop_assert_eq!(
                encode_query_sparse(&text, &cfg),
                encode_query_sparse(&text, &cfg)
            );
        }
    }
}
