//! Pre-Sinkhorn matrix parameterizations and the linear feature map.
//!
//! Two families turn per-document scores into a nonnegative J×J matrix:
//!
//! * logit-logistic bins: each document gets a distribution on (0,1) with
//!   location μ and scale σ, and row j holds the mass of that distribution
//!   in J equal bins. Mass near zero means a preference for top ranks.
//! * smoothed indicator: a Gaussian kernel between each document's score and
//!   the score at each sorted rank. σ → 0 recovers the sort's permutation
//!   matrix; σ → ∞ gives the all-ones matrix.
//!
//! Both compose with the linear map `φ(x) = Wx` and expose exact gradients
//! back to W.

use crate::decode::Permutation;
use crate::matrix::SquareMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("scale must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("logit-logistic CDF argument {0} outside (0,1)")]
    DomainError(f64),
    #[error("gradient shape {got}x{got} does not match forward state for {expected} documents")]
    StaleClosure { got: usize, expected: usize },
}

/// Which pre-Sinkhorn family is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Binned logit-logistic mass; two score heads per document (μ, log σ).
    LogitLogistic,
    /// Gaussian kernel against the sorted scores; one score head.
    SmoothedIndicator,
}

impl ParamKind {
    /// Number of score heads D produced by the feature map.
    pub fn heads(self) -> usize {
        match self {
            ParamKind::LogitLogistic => 2,
            ParamKind::SmoothedIndicator => 1,
        }
    }
}

/// Dense M×D weight matrix of the linear feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    m: usize,
    d: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(m: usize, d: usize) -> Self {
        Self { m, d, data: vec![0.0; m * d] }
    }

    pub fn from_vec(m: usize, d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), m * d);
        Self { m, d, data }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl std::ops::Index<(usize, usize)> for WeightMatrix {
    type Output = f64;
    fn index(&self, (row, col): (usize, usize)) -> &f64 {
        &self.data[row * self.d + col]
    }
}

impl std::ops::IndexMut<(usize, usize)> for WeightMatrix {
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut f64 {
        &mut self.data[row * self.d + col]
    }
}

/// Location and scale of one document's logit-logistic distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaRow {
    pub mu: f64,
    pub sigma: f64,
}

/// `φ(x_j) = Wᵀ x_j` for every document: returns a J×D score array as
/// row-major `Vec<f64>` chunks of length D.
pub fn linear_phi(w: &WeightMatrix, features: &[Vec<f64>]) -> Result<Vec<f64>, ParamError> {
    let d = w.cols();
    let mut scores = vec![0.0; features.len() * d];
    for (j, x) in features.iter().enumerate() {
        if x.len() != w.rows() {
            return Err(ParamError::DimensionMismatch(format!(
                "document {j} has {} features, weight matrix expects {}",
                x.len(),
                w.rows()
            )));
        }
        for col in 0..d {
            scores[j * d + col] = x.iter().enumerate().map(|(m, xi)| xi * w[(m, col)]).sum();
        }
    }
    Ok(scores)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// CDF of the logit-logistic distribution: the logistic CDF of `logit(u)`
/// with location μ and scale σ.
pub fn ll_cdf(u: f64, theta: ThetaRow) -> Result<f64, ParamError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(ParamError::DomainError(u));
    }
    if theta.sigma <= 0.0 {
        return Err(ParamError::NonPositiveSigma(theta.sigma));
    }
    let z = ((u / (1.0 - u)).ln() - theta.mu) / theta.sigma;
    Ok(sigmoid(z))
}

/// Per-query forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub enum QueryForward {
    LogitLogistic {
        thetas: Vec<ThetaRow>,
    },
    SmoothedIndicator {
        scores: Vec<f64>,
        sort: Permutation,
        sigma: f64,
        matrix: SquareMatrix,
    },
}

impl QueryForward {
    fn size(&self) -> usize {
        match self {
            QueryForward::LogitLogistic { thetas } => thetas.len(),
            QueryForward::SmoothedIndicator { scores, .. } => scores.len(),
        }
    }
}

/// Binned logit-logistic matrix: `A[j][k]` is the mass of document j's
/// distribution in bin `((k-1)/J, k/J]`, with the analytic endpoint
/// conventions F(0) = 0 and F(1) = 1. Rows telescope to exactly 1.
pub fn ll_bin_matrix(thetas: &[ThetaRow]) -> Result<(SquareMatrix, QueryForward), ParamError> {
    let j = thetas.len();
    let mut a = SquareMatrix::zeros(j);
    for (doc, &theta) in thetas.iter().enumerate() {
        if theta.sigma <= 0.0 {
            return Err(ParamError::NonPositiveSigma(theta.sigma));
        }
        let mut prev = 0.0;
        for k in 1..=j {
            let cdf = if k == j { 1.0 } else { ll_cdf(k as f64 / j as f64, theta)? };
            a[(doc, k - 1)] = cdf - prev;
            prev = cdf;
        }
    }
    Ok((a, QueryForward::LogitLogistic { thetas: thetas.to_vec() }))
}

/// Smoothed indicator matrix `A[j][k] = exp(-(φ_j - φ_ŝ[k])² / 2σ²)` where ŝ
/// sorts scores in decreasing order, ties broken by document index.
pub fn smoothed_indicator_matrix(
    scores: &[f64],
    sigma: f64,
) -> Result<(SquareMatrix, Permutation, QueryForward), ParamError> {
    if sigma <= 0.0 {
        return Err(ParamError::NonPositiveSigma(sigma));
    }
    let j = scores.len();
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let sort = Permutation::new(order).expect("sorted indices form a bijection");

    let mut a = SquareMatrix::zeros(j);
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    for doc in 0..j {
        for k in 0..j {
            let diff = scores[doc] - scores[sort.doc_at_rank(k + 1)];
            a[(doc, k)] = (-diff * diff * inv_two_sigma_sq).exp();
        }
    }
    let state = QueryForward::SmoothedIndicator {
        scores: scores.to_vec(),
        sort: sort.clone(),
        sigma,
        matrix: a.clone(),
    };
    Ok((a, sort, state))
}

/// Forward pass for one query: feature map, then the configured family.
/// Returns the nonnegative pre-Sinkhorn matrix and the saved state.
pub fn forward(
    kind: ParamKind,
    w: &WeightMatrix,
    features: &[Vec<f64>],
    sigma: f64,
) -> Result<(SquareMatrix, QueryForward), ParamError> {
    if w.cols() != kind.heads() {
        return Err(ParamError::DimensionMismatch(format!(
            "weight matrix has {} heads, parameterization needs {}",
            w.cols(),
            kind.heads()
        )));
    }
    let scores = linear_phi(w, features)?;
    match kind {
        ParamKind::LogitLogistic => {
            // Heads are (μ, log σ); the scale is optimized unconstrained in
            // log space and exponentiated here.
            let thetas: Vec<ThetaRow> = scores
                .chunks(2)
                .map(|c| ThetaRow { mu: c[0], sigma: c[1].exp() })
                .collect();
            ll_bin_matrix(&thetas)
        }
        ParamKind::SmoothedIndicator => {
            let (a, _, state) = smoothed_indicator_matrix(&scores, sigma)?;
            Ok((a, state))
        }
    }
}

/// Gradient of the pre-Sinkhorn matrix with respect to the per-document
/// scores, given `grad_a = ∂U/∂A`. Returns a J×D row-major score gradient.
fn scores_backward(state: &QueryForward, grad_a: &SquareMatrix) -> Result<Vec<f64>, ParamError> {
    let j = state.size();
    if grad_a.dim() != j {
        return Err(ParamError::StaleClosure { got: grad_a.dim(), expected: j });
    }
    match state {
        QueryForward::LogitLogistic { thetas } => {
            let mut grad = vec![0.0; j * 2];
            for (doc, &theta) in thetas.iter().enumerate() {
                // dF/dμ and dF/dσ at each interior bin edge; endpoints are
                // the constants 0 and 1.
                let mut d_mu_prev = 0.0;
                let mut d_sigma_prev = 0.0;
                for k in 1..=j {
                    let (d_mu_cur, d_sigma_cur) = if k == j {
                        (0.0, 0.0)
                    } else {
                        let u = k as f64 / j as f64;
                        let z = ((u / (1.0 - u)).ln() - theta.mu) / theta.sigma;
                        let s = sigmoid(z);
                        let density = s * (1.0 - s);
                        (-density / theta.sigma, -z * density / theta.sigma)
                    };
                    let g = grad_a[(doc, k - 1)];
                    grad[doc * 2] += g * (d_mu_cur - d_mu_prev);
                    // Chain through σ = exp(log σ).
                    grad[doc * 2 + 1] += g * (d_sigma_cur - d_sigma_prev) * theta.sigma;
                    d_mu_prev = d_mu_cur;
                    d_sigma_prev = d_sigma_cur;
                }
            }
            Ok(grad)
        }
        QueryForward::SmoothedIndicator { scores, sort, sigma, matrix } => {
            let mut grad = vec![0.0; j];
            let inv_sigma_sq = 1.0 / (sigma * sigma);
            for doc in 0..j {
                for k in 0..j {
                    let anchor = sort.doc_at_rank(k + 1);
                    let diff = scores[doc] - scores[anchor];
                    let pull = grad_a[(doc, k)] * matrix[(doc, k)] * diff * inv_sigma_sq;
                    // The score enters once as the row's φ_j and once as the
                    // sorted column anchor; both paths accumulate.
                    grad[doc] -= pull;
                    grad[anchor] += pull;
                }
            }
            Ok(grad)
        }
    }
}

/// Chain `∂U/∂A` back through the parameterization and the linear feature
/// map, returning `∂U/∂W`.
pub fn presinkhorn_backward(
    state: &QueryForward,
    features: &[Vec<f64>],
    grad_a: &SquareMatrix,
) -> Result<WeightMatrix, ParamError> {
    let score_grad = scores_backward(state, grad_a)?;
    let d = score_grad.len() / features.len().max(1);
    let m = features.first().map_or(0, Vec::len);
    let mut grad_w = WeightMatrix::zeros(m, d);
    for (doc, x) in features.iter().enumerate() {
        for col in 0..d {
            let g = score_grad[doc * d + col];
            for (row, xi) in x.iter().enumerate() {
                grad_w[(row, col)] += xi * g;
            }
        }
    }
    Ok(grad_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{finite_diff, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_phi_examples() {
        let id = WeightMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let x = vec![vec![0.3, -0.7]];
        assert_eq!(linear_phi(&id, &x).unwrap(), vec![0.3, -0.7]);

        let zero = WeightMatrix::zeros(2, 2);
        assert_eq!(linear_phi(&zero, &x).unwrap(), vec![0.0, 0.0]);

        let w = WeightMatrix::from_vec(2, 1, vec![2.0, -1.0]);
        let x = vec![vec![3.0, 4.0]];
        assert_eq!(linear_phi(&w, &x).unwrap(), vec![2.0]);
    }

    #[test]
    fn ll_cdf_examples() {
        let theta = ThetaRow { mu: 0.0, sigma: 1.0 };
        assert!((ll_cdf(0.5, theta).unwrap() - 0.5).abs() < 1e-15);
        assert!(ll_cdf(1.0 - 1e-12, theta).unwrap() > 0.99);
        let shifted = ThetaRow { mu: 1.0, sigma: 1.0 };
        let expected = 1.0 / (1.0 + std::f64::consts::E);
        assert!((ll_cdf(0.5, shifted).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(ll_cdf(0.0, theta), Err(ParamError::DomainError(_))));
    }

    #[test]
    fn ll_cdf_is_monotone() {
        let theta = ThetaRow { mu: 0.3, sigma: 0.7 };
        let mut prev = 0.0;
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let f = ll_cdf(u, theta).unwrap();
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn ll_bin_matrix_examples() {
        let (a, _) = ll_bin_matrix(&[ThetaRow { mu: 0.0, sigma: 1.0 }; 2]).unwrap();
        assert!((a[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((a[(0, 1)] - 0.5).abs() < 1e-15);

        let (a, _) = ll_bin_matrix(&[ThetaRow { mu: -40.0, sigma: 1.0 }; 2]).unwrap();
        assert!(a[(0, 0)] > 1.0 - 1e-9);
        assert!(a[(0, 1)] < 1e-9);

        // logit(1/4) = -ln 3, so F(1/4) = 1/(1+3) = 1/4 at μ=0, σ=1.
        let (a, _) = ll_bin_matrix(&[ThetaRow { mu: 0.0, sigma: 1.0 }; 4]).unwrap();
        for k in 0..4 {
            assert!((a[(0, k)] - 0.25).abs() < 1e-12, "bin {k}: {}", a[(0, k)]);
        }
    }

    #[test]
    fn ll_rows_sum_to_one_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let thetas: Vec<ThetaRow> = (0..7)
            .map(|_| ThetaRow { mu: rng.gen_range(-3.0..3.0), sigma: rng.gen_range(0.2..2.0) })
            .collect();
        let (a, _) = ll_bin_matrix(&thetas).unwrap();
        for j in 0..7 {
            assert!((a.row_sum(j) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothed_indicator_examples() {
        // Tiny σ: permutation matrix of the sort.
        let (a, sort, _) = smoothed_indicator_matrix(&[0.2, 0.9, -0.4], 1e-8).unwrap();
        assert_eq!(sort.ranks(), &[1, 0, 2]);
        let perm = SquareMatrix::from_permutation(sort.ranks());
        assert!(a.max_abs_diff(&perm) <= 1e-6);

        // Huge σ: all ones.
        let (a, _, _) = smoothed_indicator_matrix(&[0.2, 0.9, -0.4], 1e8).unwrap();
        for x in a.iter() {
            assert!((x - 1.0).abs() <= 1e-6);
        }

        let (a, _, _) = smoothed_indicator_matrix(&[2.0, 1.0], 1.0).unwrap();
        let e = (-0.5f64).exp();
        assert!((a[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((a[(0, 1)] - e).abs() < 1e-15);
        assert!((a[(1, 0)] - e).abs() < 1e-15);
        assert!((a[(1, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smoothed_indicator_diagonal_after_sort() {
        let (a, sort, _) = smoothed_indicator_matrix(&[0.1, 0.5, 0.3, -0.2], 0.7).unwrap();
        for k in 1..=4 {
            assert_eq!(a[(sort.doc_at_rank(k), k - 1)], 1.0);
        }
        for x in a.iter() {
            assert!(x > 0.0 && x <= 1.0);
        }
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        assert!(matches!(
            smoothed_indicator_matrix(&[1.0], 0.0),
            Err(ParamError::NonPositiveSigma(_))
        ));
        assert!(matches!(
            ll_bin_matrix(&[ThetaRow { mu: 0.0, sigma: -1.0 }]),
            Err(ParamError::NonPositiveSigma(_))
        ));
    }

    #[test]
    fn permutation_equivariance_of_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let scores: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, _, _) = smoothed_indicator_matrix(&scores, 0.8).unwrap();
        let mut shuffled = scores.clone();
        shuffled.rotate_left(2);
        let (b, _, _) = smoothed_indicator_matrix(&shuffled, 0.8).unwrap();
        // Row j of the shuffled matrix equals row (j+2) mod 5 of the original.
        for j in 0..5 {
            for k in 0..5 {
                assert!((b[(j, k)] - a[((j + 2) % 5, k)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_grad_gives_zero_w_gradient() {
        let w = WeightMatrix::from_vec(2, 1, vec![0.4, -0.3]);
        let features = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let (_, state) = forward(ParamKind::SmoothedIndicator, &w, &features, 1.0).unwrap();
        let grad = presinkhorn_backward(&state, &features, &SquareMatrix::zeros(2)).unwrap();
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn smoothed_indicator_hand_derived_entry_gradient() {
        // ∂A_{0,1}/∂score_0 = -(s0 - s1)/σ² · A_{0,1} when doc 0 is not the
        // rank-2 anchor.
        let scores = [2.0, 1.0];
        let sigma = 1.3;
        let (a, _, state) = smoothed_indicator_matrix(&scores, sigma).unwrap();
        let mut grad_a = SquareMatrix::zeros(2);
        grad_a[(0, 1)] = 1.0;
        let g = scores_backward(&state, &grad_a).unwrap();
        let expected = -(scores[0] - scores[1]) / (sigma * sigma) * a[(0, 1)];
        assert!((g[0] - expected).abs() < 1e-14);
        assert!((g[1] + expected).abs() < 1e-14);
    }

    #[test]
    fn w_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let j = 4;
        let m = 3;
        let features: Vec<Vec<f64>> =
            (0..j).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let target = SquareMatrix::from_vec(
            j,
            (0..j * j).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        for kind in [ParamKind::LogitLogistic, ParamKind::SmoothedIndicator] {
            let d = kind.heads();
            let w0: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            // U = <A, target>.
            let value = |flat: &[f64]| -> f64 {
                let w = WeightMatrix::from_vec(m, d, flat.to_vec());
                let (a, _) = forward(kind, &w, &features, 0.9).unwrap();
                a.iter().zip(target.iter()).map(|(x, t)| x * t).sum()
            };
            let w = WeightMatrix::from_vec(m, d, w0.clone());
            let (_, state) = forward(kind, &w, &features, 0.9).unwrap();
            let analytic = presinkhorn_backward(&state, &features, &target).unwrap();
            let numeric = finite_diff(|x| value(x), &w0, 1e-6);
            let err = max_relative_error(analytic.as_slice(), &numeric);
            assert!(err <= 1e-5, "{kind:?}: relative error {err}");
        }
    }
}
