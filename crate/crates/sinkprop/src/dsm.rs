//! Incomplete Sinkhorn normalization and its backward pass.
//!
//! The forward pass smooths the input once (`A + ε`), then applies `i`
//! iterations of column-then-row normalization, recording every intermediate
//! matrix on a tape. The backward pass replays the tape in reverse, applying
//! the normalization gradient at each stage, and returns the gradient with
//! respect to the smoothed input (which equals the gradient with respect to
//! the raw input, since the smoothing is an additive constant).

use crate::matrix::SquareMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DsmError {
    #[error("row {0} sums to zero; input needs epsilon smoothing")]
    ZeroRowSum(usize),
    #[error("column {0} sums to zero; input needs epsilon smoothing")]
    ZeroColSum(usize),
    #[error("non-finite entry produced during normalization")]
    NonFinite,
    #[error("gradient dimension {grad} does not match tape dimension {tape}")]
    TapeMismatch { grad: usize, tape: usize },
}

/// Record of one forward pass: the smoothed input followed by the matrix
/// after every individual row or column normalization (`2 * iterations + 1`
/// stages in total). The last stage is the forward output.
#[derive(Debug, Clone)]
pub struct SinkhornTape {
    iterations: usize,
    stages: Vec<SquareMatrix>,
}

impl SinkhornTape {
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn stages(&self) -> &[SquareMatrix] {
        &self.stages
    }

    pub fn output(&self) -> &SquareMatrix {
        self.stages.last().expect("tape always holds the input stage")
    }

    fn dim(&self) -> usize {
        self.stages[0].dim()
    }
}

/// Worst row and column deviation from unit sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport {
    pub max_row_residual: f64,
    pub max_col_residual: f64,
}

impl BalanceReport {
    pub fn max(&self) -> f64 {
        self.max_row_residual.max(self.max_col_residual)
    }
}

/// Divide each row by its sum.
pub fn row_normalize(a: &SquareMatrix) -> Result<SquareMatrix, DsmError> {
    let n = a.dim();
    let mut out = a.clone();
    for j in 0..n {
        let sum = out.row_sum(j);
        if sum == 0.0 {
            return Err(DsmError::ZeroRowSum(j));
        }
        for x in out.row_mut(j) {
            *x /= sum;
        }
    }
    Ok(out)
}

/// Divide each column by its sum.
pub fn col_normalize(a: &SquareMatrix) -> Result<SquareMatrix, DsmError> {
    let n = a.dim();
    let mut out = a.clone();
    for k in 0..n {
        let sum = out.col_sum(k);
        if sum == 0.0 {
            return Err(DsmError::ZeroColSum(k));
        }
        for j in 0..n {
            out[(j, k)] /= sum;
        }
    }
    Ok(out)
}

/// Run `iterations` column-then-row normalization steps on `a + epsilon`,
/// recording the tape. With zero iterations the smoothed input passes
/// through unchanged.
pub fn sinkhorn_forward(
    a: &SquareMatrix,
    iterations: usize,
    epsilon: f64,
) -> Result<(SquareMatrix, SinkhornTape), DsmError> {
    let smoothed = if epsilon == 0.0 { a.clone() } else { a.add_scalar(epsilon) };
    let mut stages = Vec::with_capacity(2 * iterations + 1);
    stages.push(smoothed);
    for _ in 0..iterations {
        let after_col = col_normalize(stages.last().unwrap())?;
        if !after_col.is_finite() {
            return Err(DsmError::NonFinite);
        }
        stages.push(after_col);
        let after_row = row_normalize(stages.last().unwrap())?;
        if !after_row.is_finite() {
            return Err(DsmError::NonFinite);
        }
        stages.push(after_row);
    }
    let out = stages.last().unwrap().clone();
    let tape = SinkhornTape { iterations, stages };
    Ok((out, tape))
}

/// Gradient of a row normalization: given `g = ∂U/∂T_R(A)` and the
/// pre-normalization matrix `A`, returns `∂U/∂A`. For row j with sum S:
/// `∂U/∂A_jk = g_jk / S - (Σ_k' A_jk' g_jk') / S²`.
fn row_normalize_backward(input: &SquareMatrix, grad_out: &SquareMatrix) -> SquareMatrix {
    let n = input.dim();
    let mut grad_in = SquareMatrix::zeros(n);
    for j in 0..n {
        let sum: f64 = input.row_sum(j);
        let dot: f64 = input
            .row(j)
            .iter()
            .zip(grad_out.row(j))
            .map(|(a, g)| a * g)
            .sum();
        let correction = dot / (sum * sum);
        for k in 0..n {
            grad_in[(j, k)] = grad_out[(j, k)] / sum - correction;
        }
    }
    grad_in
}

/// Column transpose of [`row_normalize_backward`].
fn col_normalize_backward(input: &SquareMatrix, grad_out: &SquareMatrix) -> SquareMatrix {
    let n = input.dim();
    let mut grad_in = SquareMatrix::zeros(n);
    for k in 0..n {
        let sum: f64 = input.col_sum(k);
        let dot: f64 = (0..n).map(|j| input[(j, k)] * grad_out[(j, k)]).sum();
        let correction = dot / (sum * sum);
        for j in 0..n {
            grad_in[(j, k)] = grad_out[(j, k)] / sum - correction;
        }
    }
    grad_in
}

/// Propagate `grad_out = ∂U/∂Z^i(A)` backward through the tape, returning
/// `∂U/∂A` for the smoothed input A.
pub fn sinkhorn_backward(
    tape: &SinkhornTape,
    grad_out: &SquareMatrix,
) -> Result<SquareMatrix, DsmError> {
    if grad_out.dim() != tape.dim() {
        return Err(DsmError::TapeMismatch { grad: grad_out.dim(), tape: tape.dim() });
    }
    let mut grad = grad_out.clone();
    // Stage t > 0 is the output of a normalization whose input is stage t-1.
    // Odd stages come from a column normalization, even stages from a row one.
    for t in (1..tape.stages.len()).rev() {
        let input = &tape.stages[t - 1];
        grad = if t % 2 == 0 {
            row_normalize_backward(input, &grad)
        } else {
            col_normalize_backward(input, &grad)
        };
    }
    Ok(grad)
}

/// Worst deviation of row and column sums from 1.
pub fn balance_residual(p: &SquareMatrix) -> BalanceReport {
    let n = p.dim();
    let max_row = (0..n)
        .map(|j| (p.row_sum(j) - 1.0).abs())
        .fold(0.0, f64::max);
    let max_col = (0..n)
        .map(|k| (p.col_sum(k) - 1.0).abs())
        .fold(0.0, f64::max);
    BalanceReport { max_row_residual: max_row, max_col_residual: max_col }
}
