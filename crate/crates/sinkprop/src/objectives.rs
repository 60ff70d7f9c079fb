//! Rank-linear gains and their exact expectations under marginal matrices.
//!
//! Every metric here has the form `Σ_{j,k} S_{j,k} ℓ(r_j, k)` over the
//! permutation matrix S, so its expectation under any distribution over
//! permutations depends only on the marginals `Π_{j,k} = E[S_{j,k}]`. The
//! gradient of the expectation with respect to Π is the constant table
//! `ℓ(r_j, k)`.

use crate::decode::Permutation;
use crate::matrix::SquareMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("precision@K requires binary relevance labels, found {0}")]
    NonBinaryRelevance(u32),
    #[error("matrix dimension {matrix} does not match relevance length {relevances}")]
    DimensionMismatch { matrix: usize, relevances: usize },
}

/// Which gain to compute, with its truncation / persistence parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainSpec {
    /// NDCG truncated at rank `k`.
    Ndcg { k: usize },
    /// Precision at rank `k`, binary relevances only.
    Precision { k: usize },
    /// Rank-biased precision with persistence `alpha` in [0, 1].
    Rbp { alpha: f64 },
}

/// Default RBP persistence when none is configured.
pub const DEFAULT_RBP_ALPHA: f64 = 0.8;

/// Exponential gain `G(r) = 2^r - 1`.
pub fn gain_g(r: u32) -> f64 {
    (2.0f64).powi(r as i32) - 1.0
}

/// Rank discount: 1 for the top two ranks, `1 / log2(k)` below.
pub fn discount_d(k: usize) -> f64 {
    debug_assert!(k >= 1);
    if k <= 2 {
        1.0
    } else {
        1.0 / (k as f64).log2()
    }
}

/// Best achievable DCG@K: relevances sorted nonincreasing, since the gain is
/// nondecreasing and the discount nonincreasing.
pub fn ideal_dcg(relevances: &[u32], k: usize) -> f64 {
    let mut sorted = relevances.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain_g(r) * discount_d(i + 1))
        .sum()
}

fn check_binary(relevances: &[u32]) -> Result<(), ObjectiveError> {
    match relevances.iter().find(|&&r| r > 1) {
        Some(&r) => Err(ObjectiveError::NonBinaryRelevance(r)),
        None => Ok(()),
    }
}

/// Gain of a single permutation under the chosen metric.
///
/// NDCG returns 0 when the ideal DCG is 0 (all-zero relevances). P@K with
/// `K > J` truncates the sum at J but keeps the divisor K.
pub fn exact_gain(
    s: &Permutation,
    relevances: &[u32],
    gain: GainSpec,
) -> Result<f64, ObjectiveError> {
    let j = relevances.len();
    if s.len() != j {
        return Err(ObjectiveError::DimensionMismatch { matrix: s.len(), relevances: j });
    }
    match gain {
        GainSpec::Ndcg { k } => {
            let ideal = ideal_dcg(relevances, k);
            if ideal == 0.0 {
                return Ok(0.0);
            }
            let dcg: f64 = (1..=k.min(j))
                .map(|rank| gain_g(relevances[s.doc_at_rank(rank)]) * discount_d(rank))
                .sum();
            Ok(dcg / ideal)
        }
        GainSpec::Precision { k } => {
            check_binary(relevances)?;
            let hits: f64 = (1..=k.min(j))
                .map(|rank| relevances[s.doc_at_rank(rank)] as f64)
                .sum();
            Ok(hits / k as f64)
        }
        GainSpec::Rbp { alpha } => {
            let sum: f64 = (1..=j)
                .map(|rank| {
                    relevances[s.doc_at_rank(rank)] as f64 * alpha.powi(rank as i32 - 1)
                })
                .sum();
            Ok((1.0 - alpha) * sum)
        }
    }
}

/// The table `ℓ(r_j, k)` of the rank-linear form, indexed (document, rank-1).
///
/// This is simultaneously the coefficient table of the expected gain and its
/// gradient with respect to Π.
pub fn gain_table(relevances: &[u32], gain: GainSpec) -> Result<SquareMatrix, ObjectiveError> {
    let j = relevances.len();
    let mut table = SquareMatrix::zeros(j);
    match gain {
        GainSpec::Ndcg { k } => {
            let ideal = ideal_dcg(relevances, k);
            if ideal == 0.0 {
                return Ok(table);
            }
            for (doc, &r) in relevances.iter().enumerate() {
                let g = gain_g(r);
                for rank in 1..=k.min(j) {
                    table[(doc, rank - 1)] = g * discount_d(rank) / ideal;
                }
            }
        }
        GainSpec::Precision { k } => {
            check_binary(relevances)?;
            for (doc, &r) in relevances.iter().enumerate() {
                for rank in 1..=k.min(j) {
                    table[(doc, rank - 1)] = r as f64 / k as f64;
                }
            }
        }
        GainSpec::Rbp { alpha } => {
            for (doc, &r) in relevances.iter().enumerate() {
                for rank in 1..=j {
                    table[(doc, rank - 1)] =
                        (1.0 - alpha) * r as f64 * alpha.powi(rank as i32 - 1);
                }
            }
        }
    }
    Ok(table)
}

/// Expected gain `Σ_{j,k} ℓ(r_j,k) Π_{j,k}` under the marginals of `p`.
///
/// Accepts near-doubly-stochastic matrices from incomplete normalization
/// without renormalizing. Equals [`exact_gain`] when `p` is a permutation
/// matrix.
pub fn expected_gain(
    p: &SquareMatrix,
    relevances: &[u32],
    gain: GainSpec,
) -> Result<f64, ObjectiveError> {
    if p.dim() != relevances.len() {
        return Err(ObjectiveError::DimensionMismatch {
            matrix: p.dim(),
            relevances: relevances.len(),
        });
    }
    let table = gain_table(relevances, gain)?;
    Ok(table.iter().zip(p.iter()).map(|(l, pi)| l * pi).sum())
}

/// Gradient of [`expected_gain`] with respect to Π: the constant table
/// `ℓ(r_j, k)`, independent of `p`.
pub fn expected_gain_grad(
    p: &SquareMatrix,
    relevances: &[u32],
    gain: GainSpec,
) -> Result<SquareMatrix, ObjectiveError> {
    if p.dim() != relevances.len() {
        return Err(ObjectiveError::DimensionMismatch {
            matrix: p.dim(),
            relevances: relevances.len(),
        });
    }
    gain_table(relevances, gain)
}
