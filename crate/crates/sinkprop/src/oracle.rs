//! Brute-force references for the test suites.
//!
//! Everything here is deliberately naive: exhaustive enumeration over the
//! symmetric group and central finite differences. These are the independent
//! routes the fast implementations are checked against, so they must not
//! share code with them.

use crate::decode::Permutation;
use crate::matrix::SquareMatrix;
use crate::objectives::{exact_gain, GainSpec, ObjectiveError};
use thiserror::Error;

/// Enumeration guard: 8! = 40320 permutations keeps runs under a second.
pub const MAX_ENUMERATION_SIZE: usize = 8;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("refusing to enumerate {0}! permutations (guard at {MAX_ENUMERATION_SIZE})")]
    TooLarge(usize),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// An explicit distribution over permutations: nonnegative weights summing
/// to 1, each paired with a permutation.
#[derive(Debug, Clone)]
pub struct PermutationMixture {
    entries: Vec<(f64, Permutation)>,
}

impl PermutationMixture {
    /// Panics if weights are negative or do not sum to 1 within 1e-12.
    pub fn new(entries: Vec<(f64, Permutation)>) -> Self {
        let total: f64 = entries.iter().map(|(w, _)| w).sum();
        assert!(entries.iter().all(|(w, _)| *w >= 0.0), "negative mixture weight");
        assert!((total - 1.0).abs() <= 1e-12, "weights sum to {total}, not 1");
        Self { entries }
    }

    pub fn entries(&self) -> &[(f64, Permutation)] {
        &self.entries
    }
}

/// All J! permutations in lexicographic order of their rank vectors.
/// J = 0 yields the single empty permutation.
pub fn enumerate_permutations(j: usize) -> Result<Vec<Permutation>, OracleError> {
    if j > MAX_ENUMERATION_SIZE {
        return Err(OracleError::TooLarge(j));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(j);
    let mut used = vec![false; j];
    fn recurse(
        j: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        out: &mut Vec<Permutation>,
    ) {
        if current.len() == j {
            out.push(Permutation::new(current.clone()).expect("constructed as a bijection"));
            return;
        }
        for doc in 0..j {
            if !used[doc] {
                used[doc] = true;
                current.push(doc);
                recurse(j, current, used, out);
                current.pop();
                used[doc] = false;
            }
        }
    }
    recurse(j, &mut current, &mut used, &mut out);
    Ok(out)
}

/// Marginal matrix `Σ_m w_m S_m` of an explicit mixture; an exact DSM.
pub fn mixture_marginals(mixture: &PermutationMixture, j: usize) -> SquareMatrix {
    let mut p = SquareMatrix::zeros(j);
    for (w, s) in mixture.entries() {
        for (k, &doc) in s.ranks().iter().enumerate() {
            p[(doc, k)] += w;
        }
    }
    p
}

/// Expected gain by direct summation over the mixture:
/// `Σ_m w_m · exact_gain(s_m)`.
pub fn brute_force_expected_gain(
    mixture: &PermutationMixture,
    relevances: &[u32],
    gain: GainSpec,
) -> Result<f64, OracleError> {
    if relevances.len() > MAX_ENUMERATION_SIZE {
        return Err(OracleError::TooLarge(relevances.len()));
    }
    let mut total = 0.0;
    for (w, s) in mixture.entries() {
        total += w * exact_gain(s, relevances, gain)?;
    }
    Ok(total)
}

/// Central finite differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` per
/// coordinate of a flat parameter vector.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Largest relative disagreement between two gradients, with an absolute
/// floor so near-zero entries compare absolutely.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
