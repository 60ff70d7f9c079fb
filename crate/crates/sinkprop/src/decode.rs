//! Decoding a marginal matrix into a single permutation.
//!
//! The exact decoder maximizes `Σ_k ln Π[s[k], k]` by dense bipartite
//! matching (shortest-augmenting-path Hungarian, O(J³)). For long queries a
//! two-phase short-cut first sorts documents by expected rank and then runs
//! the exact matcher only on the top-`cap` prefix.

use crate::matrix::SquareMatrix;
use thiserror::Error;

/// Log-cost stand-in for `ln 0`: large enough that zero-marginal assignments
/// are strictly dominated, small enough to keep the dual updates finite.
pub const ZERO_LOG_SENTINEL: f64 = -1e30;

#[derive(Debug, Error)]
pub enum PermutationError {
    #[error("ranks do not form a bijection on 0..{0}")]
    NotABijection(usize),
}

/// A ranking: `ranks[k]` is the document index placed at rank `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    ranks: Vec<usize>,
}

impl Permutation {
    pub fn new(ranks: Vec<usize>) -> Result<Self, PermutationError> {
        let n = ranks.len();
        let mut seen = vec![false; n];
        for &doc in &ranks {
            if doc >= n || seen[doc] {
                return Err(PermutationError::NotABijection(n));
            }
            seen[doc] = true;
        }
        Ok(Self { ranks })
    }

    pub fn identity(n: usize) -> Self {
        Self { ranks: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Document index at a 1-based rank.
    pub fn doc_at_rank(&self, rank: usize) -> usize {
        self.ranks[rank - 1]
    }

    /// The rank assignment as a slice: entry `k` is the document at rank `k+1`.
    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }
}

/// Log-likelihood of a full assignment: `Σ_k ln Π[s[k], k]`, with zero
/// entries scored at the sentinel.
pub fn matching_score(p: &SquareMatrix, s: &Permutation) -> f64 {
    s.ranks
        .iter()
        .enumerate()
        .map(|(k, &doc)| {
            let v = p[(doc, k)];
            if v > 0.0 { v.ln() } else { ZERO_LOG_SENTINEL }
        })
        .sum()
}

/// Minimum-cost assignment by shortest augmenting paths with dual potentials.
/// Returns `assigned_row[col]`.
fn solve_assignment_min(cost: &SquareMatrix) -> Vec<usize> {
    let n = cost.dim();
    // 1-based arrays; index 0 is the virtual unassigned slot.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned[j0] == 0 {
                break;
            }
        }
        // Augment along the recorded path.
        loop {
            let j1 = way[j0];
            assigned[j0] = assigned[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| assigned[j] - 1).collect()
}

/// Exact maximizer of `Σ_k ln Π[s[k], k]` over all permutations.
pub fn hungarian_decode(p: &SquareMatrix) -> Permutation {
    let n = p.dim();
    let mut cost = SquareMatrix::zeros(n);
    for j in 0..n {
        for k in 0..n {
            let v = p[(j, k)];
            cost[(j, k)] = if v > 0.0 { -v.ln() } else { -ZERO_LOG_SENTINEL };
        }
    }
    Permutation { ranks: solve_assignment_min(&cost) }
}

/// Expected rank of each document under the row marginals:
/// `E[rank_j] = Σ_k Π[j,k] · k` with ranks counted from 1.
pub fn expected_ranks(p: &SquareMatrix) -> Vec<f64> {
    let n = p.dim();
    (0..n)
        .map(|j| p.row(j).iter().enumerate().map(|(k, pi)| pi * (k + 1) as f64).sum())
        .collect()
}

/// Two-phase decoder: sort documents by expected rank, then refine the
/// top-`cap` prefix with the exact matcher on the corresponding submatrix,
/// keeping the remainder of the ordering fixed. With `cap >= J` this is the
/// full exact decode.
pub fn shortcut_decode(p: &SquareMatrix, cap: usize) -> Permutation {
    assert!(cap >= 1, "cap must be at least 1");
    let n = p.dim();
    if n <= cap {
        return hungarian_decode(p);
    }
    let e = expected_ranks(p);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| e[a].partial_cmp(&e[b]).unwrap().then(a.cmp(&b)));

    // Exact match on the top-cap documents against the top-cap ranks.
    let mut sub = SquareMatrix::zeros(cap);
    for (row, &doc) in order[..cap].iter().enumerate() {
        for k in 0..cap {
            sub[(row, k)] = p[(doc, k)];
        }
    }
    let prefix = hungarian_decode(&sub);
    let mut ranks = order.clone();
    for k in 0..cap {
        ranks[k] = order[prefix.doc_at_rank(k + 1)];
    }
    Permutation { ranks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_positive(n: usize, rng: &mut ChaCha8Rng) -> SquareMatrix {
        SquareMatrix::from_vec(n, (0..n * n).map(|_| rng.gen_range(0.01..1.0)).collect())
    }

    #[test]
    fn permutation_validates_bijection() {
        assert!(Permutation::new(vec![1, 0, 2]).is_ok());
        assert!(Permutation::new(vec![0, 0, 2]).is_err());
        assert!(Permutation::new(vec![0, 3]).is_err());
    }

    #[test]
    fn diagonal_dominant_decodes_to_identity() {
        let p = SquareMatrix::from_rows(&[&[0.9, 0.1], &[0.1, 0.9]]);
        assert_eq!(hungarian_decode(&p), Permutation::identity(2));
    }

    #[test]
    fn smoothed_permutation_matrix_decodes_to_itself() {
        let s = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        let p = SquareMatrix::from_permutation(s.ranks()).add_scalar(1e-6);
        assert_eq!(hungarian_decode(&p), s);
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=6 {
            for _ in 0..5 {
                let p = random_positive(n, &mut rng);
                let decoded = hungarian_decode(&p);
                let best = oracle::enumerate_permutations(n)
                    .unwrap()
                    .into_iter()
                    .map(|s| matching_score(&p, &s))
                    .fold(f64::NEG_INFINITY, f64::max);
                let got = matching_score(&p, &decoded);
                assert!((got - best).abs() <= 1e-9, "n={n}: got {got}, best {best}");
            }
        }
    }

    #[test]
    fn hungarian_handles_zero_entries() {
        // One feasible assignment through the zeros must still be found.
        let p = SquareMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let s = hungarian_decode(&p);
        assert_eq!(s.ranks(), &[1, 0]);
    }

    #[test]
    fn expected_ranks_examples() {
        let id = SquareMatrix::identity(3);
        assert_eq!(expected_ranks(&id), vec![1.0, 2.0, 3.0]);

        let uniform = SquareMatrix::filled(3, 1.0 / 3.0);
        for e in expected_ranks(&uniform) {
            assert!((e - 2.0).abs() < 1e-12);
        }

        let p = SquareMatrix::from_rows(&[
            &[0.5, 0.0, 0.5],
            &[0.0, 1.0, 0.0],
            &[0.5, 0.0, 0.5],
        ]);
        assert!((expected_ranks(&p)[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shortcut_with_large_cap_ties_full_hungarian() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let p = random_positive(6, &mut rng);
            let full = matching_score(&p, &hungarian_decode(&p));
            let short = matching_score(&p, &shortcut_decode(&p, 6));
            let larger = matching_score(&p, &shortcut_decode(&p, 100));
            assert!((full - short).abs() < 1e-9);
            assert!((full - larger).abs() < 1e-9);
        }
    }

    #[test]
    fn shortcut_on_permutation_matrix_recovers_it() {
        let s = Permutation::new(vec![3, 1, 4, 0, 2]).unwrap();
        let p = SquareMatrix::from_permutation(s.ranks());
        for cap in [1, 2, 5, 10] {
            assert_eq!(shortcut_decode(&p, cap), s);
        }
    }

    #[test]
    fn shortcut_improves_on_plain_expected_rank_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let raw = random_positive(50, &mut rng);
        let (p, _) = crate::dsm::sinkhorn_forward(&raw, 5, 1e-6).unwrap();
        let e = expected_ranks(&p);
        let mut order: Vec<usize> = (0..50).collect();
        order.sort_by(|&a, &b| e[a].partial_cmp(&e[b]).unwrap().then(a.cmp(&b)));
        let sorted_only = Permutation::new(order).unwrap();
        let short = shortcut_decode(&p, 10);
        assert!(matching_score(&p, &short) >= matching_score(&p, &sorted_only));
    }

    #[test]
    fn shortcut_score_monotone_in_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let raw = random_positive(30, &mut rng);
        let (p, _) = crate::dsm::sinkhorn_forward(&raw, 5, 1e-6).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for cap in [1, 5, 10, 20, 30] {
            let score = matching_score(&p, &shortcut_decode(&p, cap));
            assert!(score >= prev - 1e-9, "cap {cap} lowered the score");
            prev = score;
        }
    }

    #[test]
    fn row_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = random_positive(5, &mut rng);
        let s = hungarian_decode(&p);
        // Relabel documents by a cyclic shift of the rows.
        let shift = |doc: usize| (doc + 1) % 5;
        let mut q = SquareMatrix::zeros(5);
        for j in 0..5 {
            for k in 0..5 {
                q[(shift(j), k)] = p[(j, k)];
            }
        }
        let t = hungarian_decode(&q);
        for k in 1..=5 {
            assert_eq!(t.doc_at_rank(k), shift(s.doc_at_rank(k)));
        }
    }
}
