//! Shared numeric primitives: sparse vectors, logistic helpers, and a
//! stable seeded hash used for feature hashing and per-item seed derivation.

use serde::{Deserialize, Serialize};

/// Sparse vector with strictly ascending, unique indices.
///
/// Dot products iterate entries in index order, so a sparse/dense pair built
/// from the same entries produces bit-identical sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn new(entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries }
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(i, v) in &self.entries {
            acc += dense[i as usize] * v;
        }
        acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.1 *= factor;
        }
    }

    /// Squared Euclidean distance to a dense vector of dimension `dense.len()`.
    pub fn sq_dist_to_dense(&self, dense: &[f64], dense_sq_norm: f64) -> f64 {
        let self_sq: f64 = self.entries.iter().map(|&(_, v)| v * v).sum();
        self_sq - 2.0 * self.dot(dense) + dense_sq_norm
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }

    /// Entrywise difference `self - other`, merged in index order.
    pub fn sub(&self, other: &SparseVec) -> SparseVec {
        let mut out = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push((b[j].0, -b[j].1));
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let v = a[i].1 - b[j].1;
                    if v != 0.0 {
                        out.push((a[i].0, v));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        for &(idx, v) in &b[j..] {
            out.push((idx, -v));
        }
        SparseVec { entries: out }
    }
}

/// Standard logistic function. Saturates in f64 for |x| beyond ~36.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smallest probability reported by predictors; keeps outputs inside (0, 1)
/// even where the f64 logistic saturates.
pub const PROB_FLOOR: f64 = 1e-12;

/// Logistic clamped to the open interval `(PROB_FLOOR, 1 - PROB_FLOOR)`.
pub fn sigmoid_clamped(x: f64) -> f64 {
    sigmoid(x).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse logistic with the argument clamped away from {0, 1}.
pub fn logit_clamped(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Soft-label binary cross entropy in the stable logit form:
/// `y * softplus(-z) + (1 - y) * softplus(z)`.
pub fn binary_cross_entropy(z: f64, y: f64) -> f64 {
    y * softplus(-z) + (1.0 - y) * softplus(z)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded FNV-1a over raw bytes. Stable across runs and platforms.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from a base seed plus string and integer parts.
pub fn derive_seed(base: u64, parts: &[&str], nums: &[u64]) -> u64 {
    let mut h = FNV_OFFSET ^ base;
    for p in parts {
        for &b in p.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h ^= 0xff; // terminator so ("ab","c") != ("a","bc")
        h = h.wrapping_mul(FNV_PRIME);
    }
    for &n in nums {
        for b in n.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_dot_matches_dense() {
        let v = SparseVec::new(vec![(1, 2.0), (4, -0.5), (9, 1.25)]);
        let dense = v.to_dense(12);
        let w: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        let sparse_dot = v.dot(&w);
        let dense_dot: f64 = dense.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert_eq!(sparse_dot, dense_dot);
    }

    #[test]
    fn sub_merges_indices() {
        let a = SparseVec::new(vec![(0, 1.0), (3, 2.0)]);
        let b = SparseVec::new(vec![(1, 0.5), (3, 2.0)]);
        let d = a.sub(&b);
        assert_eq!(d.entries, vec![(0, 1.0), (1, -0.5)]);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(10.0) - 0.9999546021312976).abs() < 1e-15);
        assert!(sigmoid_clamped(1000.0) < 1.0);
        assert!(sigmoid_clamped(-1000.0) > 0.0);
    }

    #[test]
    fn softplus_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(-1.0) - 0.31326168751822286).abs() < 1e-15);
        assert!(softplus(800.0).is_finite());
        assert_eq!(softplus(800.0), 800.0);
    }

    #[test]
    fn derived_seeds_distinguish_parts() {
        let a = derive_seed(7, &["ab", "c"], &[1]);
        let b = derive_seed(7, &["a", "bc"], &[1]);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, &["ab", "c"], &[1]));
    }
}
