//! End-to-end training: objective assembly, full-batch quasi-Newton
//! optimization with σ-annealing, MLE-regression initialization, L2
//! regularization toward the MLE weights, and early stopping on validation
//! NDCG.
//!
//! The per-query objective is the expected NDCG@K of the incomplete Sinkhorn
//! normalization of the parameterized matrix; training maximizes the mean
//! over queries minus `λ‖W − W_MLE‖²`. Gradients chain the constant gain
//! table through the normalization tape and the parameterization back to W.

use crate::data::{DataSplit, MinMaxScaler, Query};
use crate::decode::shortcut_decode;
use crate::dsm::{sinkhorn_backward, sinkhorn_forward, DsmError, SinkhornTape};
use crate::matrix::SquareMatrix;
use crate::objectives::{
    exact_gain, expected_gain, expected_gain_grad, GainSpec, ObjectiveError,
};
use crate::param::{
    forward, presinkhorn_backward, ParamError, ParamKind, QueryForward, WeightMatrix,
};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("objective became non-finite during optimization")]
    Divergence,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("malformed model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Dsm(#[from] DsmError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// A trained (or initialized) ranking model.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ParamKind,
    pub w: WeightMatrix,
    /// Smoothing constant of the smoothed-indicator family; unused by the
    /// logit-logistic family (which carries per-document scales in W).
    pub sigma: f64,
    pub sinkhorn_iters: usize,
    pub epsilon: f64,
    /// Gain the model was trained against.
    pub gain: GainSpec,
}

impl Model {
    /// Parameterize, normalize, and return the marginal matrix with the
    /// state needed for the backward pass.
    pub fn marginals(
        &self,
        features: &[Vec<f64>],
    ) -> Result<(SquareMatrix, SinkhornTape, QueryForward), TrainError> {
        let (a, state) = forward(self.kind, &self.w, features, self.sigma)?;
        let (pi, tape) = sinkhorn_forward(&a, self.sinkhorn_iters, self.epsilon)?;
        Ok((pi, tape, state))
    }

    /// Serialize to the line-oriented model format: a header followed by one
    /// line of decimal floats per W row. Float printing is shortest-roundtrip
    /// so save/load is exact.
    pub fn to_text(&self) -> String {
        let kind = match self.kind {
            ParamKind::LogitLogistic => "logit-logistic",
            ParamKind::SmoothedIndicator => "smooth",
        };
        let mut out = String::new();
        writeln!(
            out,
            "sinkprop-model v1 {kind} M={} D={} sigma={} iters={} epsilon={}",
            self.w.rows(),
            self.w.cols(),
            self.sigma,
            self.sinkhorn_iters,
            self.epsilon
        )
        .unwrap();
        for row in 0..self.w.rows() {
            let line: Vec<String> =
                (0..self.w.cols()).map(|col| format!("{}", self.w[(row, col)])).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let bad = |msg: &str| TrainError::ModelFormat(msg.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty model file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 8 || fields[0] != "sinkprop-model" || fields[1] != "v1" {
            return Err(bad("expected header `sinkprop-model v1 ...`"));
        }
        let kind = match fields[2] {
            "logit-logistic" => ParamKind::LogitLogistic,
            "smooth" => ParamKind::SmoothedIndicator,
            other => return Err(TrainError::ModelFormat(format!("unknown parameterization `{other}`"))),
        };
        let mut m = 0usize;
        let mut d = 0usize;
        let mut sigma = 1.0f64;
        let mut iters = 5usize;
        let mut epsilon = 1e-6f64;
        for field in &fields[3..] {
            let (key, value) =
                field.split_once('=').ok_or_else(|| bad("header fields must be key=value"))?;
            match key {
                "M" => m = value.parse().map_err(|_| bad("bad M"))?,
                "D" => d = value.parse().map_err(|_| bad("bad D"))?,
                "sigma" => sigma = value.parse().map_err(|_| bad("bad sigma"))?,
                "iters" => iters = value.parse().map_err(|_| bad("bad iters"))?,
                "epsilon" => epsilon = value.parse().map_err(|_| bad("bad epsilon"))?,
                other => return Err(TrainError::ModelFormat(format!("unknown header key `{other}`"))),
            }
        }
        if d != kind.heads() {
            return Err(bad("D does not match the parameterization"));
        }
        let mut data = Vec::with_capacity(m * d);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if i >= m {
                return Err(bad("more weight rows than M"));
            }
            let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let row = row.map_err(|_| bad("malformed weight row"))?;
            if row.len() != d {
                return Err(bad("weight row length does not match D"));
            }
            data.extend(row);
        }
        if data.len() != m * d {
            return Err(bad("fewer weight rows than M"));
        }
        Ok(Model {
            kind,
            w: WeightMatrix::from_vec(m, d, data),
            sigma,
            sinkhorn_iters: iters,
            epsilon,
            gain: GainSpec::Ndcg { k: 10 },
        })
    }
}

/// Training hyperparameters. Defaults follow the recorded recipe: five
/// Sinkhorn iterations, ε = 1e-6 smoothing, geometric σ schedule from 1
/// down to 1/16, λ selected on validation from a small grid.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub kind: ParamKind,
    pub lambda_grid: Vec<f64>,
    pub sigma_schedule: Vec<f64>,
    pub sinkhorn_iters: usize,
    pub epsilon: f64,
    /// NDCG truncation used for training; `None` means the largest query size.
    pub train_k: Option<usize>,
    /// NDCG truncation used for validation snapshots.
    pub validation_k: usize,
    pub grad_tol: f64,
    pub max_iters_per_level: usize,
    /// Stop annealing after this many σ levels without validation improvement.
    pub patience: usize,
    /// Query resampling: (derived queries per source, max documents).
    pub resample: Option<(usize, usize)>,
    /// Decode prefix cap for validation scoring.
    pub cap: usize,
    pub seed: u64,
    pub exclude_zero_relevance: bool,
    /// Min-max scale features (scaler fit on the training split).
    pub scale: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ParamKind::SmoothedIndicator,
            lambda_grid: vec![0.0, 1e-3, 1e-2, 1e-1, 1.0],
            sigma_schedule: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            sinkhorn_iters: 5,
            epsilon: 1e-6,
            train_k: None,
            validation_k: 10,
            grad_tol: 1e-5,
            max_iters_per_level: 100,
            patience: 3,
            resample: None,
            cap: 200,
            seed: 0,
            exclude_zero_relevance: false,
            scale: false,
        }
    }
}

/// Query with features and relevances pulled out for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub qid: String,
    pub features: Vec<Vec<f64>>,
    pub relevances: Vec<u32>,
}

impl From<&Query> for PreparedQuery {
    fn from(q: &Query) -> Self {
        Self { qid: q.qid.clone(), features: q.features(), relevances: q.relevances() }
    }
}

fn prepare(queries: &[Query]) -> Vec<PreparedQuery> {
    queries.iter().map(PreparedQuery::from).collect()
}

/// Ridge-stabilized least squares of features onto relevance labels. For the
/// logit-logistic family the regression fills the μ head negated (high
/// predicted relevance means low μ, i.e. mass in the top bins) and the log σ
/// head starts at zero.
pub fn mle_init(queries: &[PreparedQuery], kind: ParamKind) -> Result<WeightMatrix, TrainError> {
    let m = queries
        .iter()
        .flat_map(|q| q.features.iter())
        .map(Vec::len)
        .max()
        .ok_or(TrainError::EmptyTrainingSet)?;

    // Normal equations (XᵀX + 1e-8 I) w = Xᵀ r.
    let mut xtx = vec![0.0f64; m * m];
    let mut xtr = vec![0.0f64; m];
    for q in queries {
        for (x, &r) in q.features.iter().zip(&q.relevances) {
            for a in 0..m {
                xtr[a] += x[a] * r as f64;
                for b in 0..m {
                    xtx[a * m + b] += x[a] * x[b];
                }
            }
        }
    }
    for a in 0..m {
        xtx[a * m + a] += 1e-8;
    }
    let w_ls = solve_linear_system(&mut xtx, &mut xtr, m);

    let mut w = WeightMatrix::zeros(m, kind.heads());
    match kind {
        ParamKind::SmoothedIndicator => {
            for (row, &v) in w_ls.iter().enumerate() {
                w[(row, 0)] = v;
            }
        }
        ParamKind::LogitLogistic => {
            for (row, &v) in w_ls.iter().enumerate() {
                w[(row, 0)] = -v;
            }
            // log σ head stays 0 (σ = 1).
        }
    }
    Ok(w)
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_linear_system(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| {
                a[r1 * n + col].abs().partial_cmp(&a[r2 * n + col].abs()).unwrap()
            })
            .unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    x
}

/// Mean expected gain over queries minus `λ‖W − W_MLE‖²`, with its
/// W-gradient. All-zero-relevance queries contribute zero value and zero
/// gradient (their gain table is identically zero).
pub fn objective_and_grad(
    model: &Model,
    queries: &[PreparedQuery],
    lambda: f64,
    w_mle: &WeightMatrix,
) -> Result<(f64, WeightMatrix), TrainError> {
    if queries.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut value = 0.0;
    let mut grad = WeightMatrix::zeros(model.w.rows(), model.w.cols());
    let scale = 1.0 / queries.len() as f64;
    for q in queries {
        let (pi, tape, state) = model.marginals(&q.features)?;
        value += scale * expected_gain(&pi, &q.relevances, model.gain)?;
        let table = expected_gain_grad(&pi, &q.relevances, model.gain)?;
        let grad_a = sinkhorn_backward(&tape, &table)?;
        let grad_w = presinkhorn_backward(&state, &q.features, &grad_a)?;
        for (g, gw) in grad.as_mut_slice().iter_mut().zip(grad_w.as_slice()) {
            *g += scale * gw;
        }
    }
    for i in 0..grad.as_slice().len() {
        let diff = model.w.as_slice()[i] - w_mle.as_slice()[i];
        value -= lambda * diff * diff;
        grad.as_mut_slice()[i] -= 2.0 * lambda * diff;
    }
    if !value.is_finite() {
        return Err(TrainError::Divergence);
    }
    Ok((value, grad))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Strong Wolfe line search (sufficient decrease + curvature), bracketing
/// then bisection zoom. `eval` returns (f, ∇f); `dir` must be a descent
/// direction. Returns the accepted point, or None if no step made progress.
fn line_search<F>(
    eval: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
) -> Result<Option<(Vec<f64>, f64, Vec<f64>)>, TrainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), TrainError>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let d0 = dot(g0, dir);
    debug_assert!(d0 < 0.0);

    let probe = |alpha: f64| -> Vec<f64> {
        x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect()
    };

    let mut alpha_lo = 0.0;
    let mut f_lo = f0;
    let mut d_lo = d0;
    let mut alpha = 1.0;
    let mut bracket_hi: Option<(f64, f64)> = None; // (alpha, f)

    // Bracketing phase.
    for iter in 0..20 {
        let xa = probe(alpha);
        let (fa, ga) = eval(&xa)?;
        if !fa.is_finite() || fa > f0 + C1 * alpha * d0 || (iter > 0 && fa >= f_lo) {
            bracket_hi = Some((alpha, fa));
            break;
        }
        let da = dot(&ga, dir);
        if da.abs() <= -C2 * d0 {
            return Ok(Some((xa, fa, ga)));
        }
        if da >= 0.0 {
            // Minimum bracketed between the new point and the previous low.
            bracket_hi = Some((alpha_lo, f_lo));
            alpha_lo = alpha;
            f_lo = fa;
            d_lo = da;
            break;
        }
        alpha_lo = alpha;
        f_lo = fa;
        d_lo = da;
        alpha *= 2.0;
    }

    let (mut alpha_hi, mut f_hi) = match bracket_hi {
        Some(b) => b,
        // Never bracketed: accept the furthest tried point if it decreased.
        None => {
            let xa = probe(alpha_lo);
            if alpha_lo > 0.0 && f_lo < f0 {
                let (fa, ga) = eval(&xa)?;
                return Ok(Some((xa, fa, ga)));
            }
            return Ok(None);
        }
    };

    // Zoom phase: bisect the bracket.
    for _ in 0..40 {
        let alpha = 0.5 * (alpha_lo + alpha_hi);
        let xa = probe(alpha);
        let (fa, ga) = eval(&xa)?;
        if !fa.is_finite() || fa > f0 + C1 * alpha * d0 || fa >= f_lo {
            alpha_hi = alpha;
            f_hi = fa;
        } else {
            let da = dot(&ga, dir);
            if da.abs() <= -C2 * d0 {
                return Ok(Some((xa, fa, ga)));
            }
            if da * (alpha_hi - alpha_lo) >= 0.0 {
                alpha_hi = alpha_lo;
                f_hi = f_lo;
            }
            alpha_lo = alpha;
            f_lo = fa;
            d_lo = da;
        }
        if (alpha_hi - alpha_lo).abs() < 1e-14 {
            break;
        }
    }
    let _ = (d_lo, f_hi);
    if alpha_lo > 0.0 && f_lo < f0 {
        let xa = probe(alpha_lo);
        let (fa, ga) = eval(&xa)?;
        return Ok(Some((xa, fa, ga)));
    }
    Ok(None)
}

/// L-BFGS minimizer with strong Wolfe steps. Terminates on gradient norm
/// below `grad_tol`, on the iteration cap, or when the line search stalls.
/// The objective is monotone nonincreasing across accepted steps.
fn lbfgs_minimize<F>(
    mut eval: F,
    x0: Vec<f64>,
    max_iters: usize,
    grad_tol: f64,
) -> Result<Vec<f64>, TrainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), TrainError>,
{
    const HISTORY: usize = 10;
    let mut x = x0;
    let (mut fx, mut g) = eval(&x)?;
    if !fx.is_finite() {
        return Err(TrainError::Divergence);
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    for _ in 0..max_iters {
        if norm(&g) <= grad_tol {
            break;
        }
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &q);
            alphas[i] = a;
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= a * yj;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            for qj in &mut q {
                *qj *= gamma;
            }
        }
        for i in 0..s_hist.len() {
            let beta = rho_hist[i] * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alphas[i] - beta) * sj;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&dir, &g) >= 0.0 {
            // Curvature history gave an ascent direction; fall back to
            // steepest descent and reset.
            dir = g.iter().map(|v| -v).collect();
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        match line_search(&mut eval, &x, fx, &g, &dir)? {
            Some((new_x, new_f, new_g)) => {
                let s: Vec<f64> = new_x.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = new_g.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    if s_hist.len() == HISTORY {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                    rho_hist.push(1.0 / sy);
                    s_hist.push(s);
                    y_hist.push(y);
                }
                x = new_x;
                fx = new_f;
                g = new_g;
            }
            None => break,
        }
    }
    Ok(x)
}

/// Mean exact NDCG@k of decoded rankings over a query set.
pub fn mean_decoded_ndcg(
    model: &Model,
    queries: &[PreparedQuery],
    k: usize,
    cap: usize,
) -> Result<f64, TrainError> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in queries {
        let (pi, _, _) = model.marginals(&q.features)?;
        let s = shortcut_decode(&pi, cap);
        total += exact_gain(&s, &q.relevances, GainSpec::Ndcg { k })?;
    }
    Ok(total / queries.len() as f64)
}

/// Outcome of [`fit`]: the selected model and the validation scores of the
/// initial and final snapshots.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub init_validation_ndcg: f64,
    pub best_validation_ndcg: f64,
    pub best_lambda: f64,
}

/// Train over the σ schedule and λ grid, warm-starting each σ level from
/// the previous one and keeping the W snapshot with the best validation
/// NDCG. The MLE-initialized model is always a candidate, so the returned
/// validation score never falls below the initialization's.
pub fn fit(config: &TrainConfig, split: &DataSplit) -> Result<FitResult, TrainError> {
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut train_queries = split.train.clone();
    let mut validation_queries = split.validation.clone();
    if config.scale {
        let scaler = MinMaxScaler::fit(&train_queries);
        scaler.apply(&mut train_queries);
        scaler.apply(&mut validation_queries);
    }
    if let Some((per_query, max_docs)) = config.resample {
        train_queries = crate::data::resample_queries(&train_queries, per_query, max_docs, config.seed);
    }
    let mut train = prepare(&train_queries);
    let validation = prepare(&validation_queries);
    if config.exclude_zero_relevance {
        train.retain(|q| q.relevances.iter().any(|&r| r > 0));
        if train.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
    }

    let train_k = config
        .train_k
        .unwrap_or_else(|| train.iter().map(|q| q.relevances.len()).max().unwrap_or(1));
    let gain = GainSpec::Ndcg { k: train_k };
    let sigma0 = *config.sigma_schedule.first().expect("schedule must be nonempty");

    let w_mle = mle_init(&train, config.kind)?;
    let base = Model {
        kind: config.kind,
        w: w_mle.clone(),
        sigma: sigma0,
        sinkhorn_iters: config.sinkhorn_iters,
        epsilon: config.epsilon,
        gain,
    };
    let score_on_validation = |model: &Model| -> Result<f64, TrainError> {
        mean_decoded_ndcg(model, &validation, config.validation_k, config.cap)
    };

    let init_score = score_on_validation(&base)?;
    let mut best = base.clone();
    let mut best_score = init_score;
    let mut best_lambda = config.lambda_grid.first().copied().unwrap_or(0.0);

    let m = w_mle.rows();
    let d = w_mle.cols();
    for &lambda in &config.lambda_grid {
        let mut w = w_mle.clone();
        let mut stale_levels = 0usize;
        for &sigma in &config.sigma_schedule {
            let eval = |flat: &[f64]| -> Result<(f64, Vec<f64>), TrainError> {
                let model = Model {
                    w: WeightMatrix::from_vec(m, d, flat.to_vec()),
                    sigma,
                    ..base.clone()
                };
                let (value, grad) = objective_and_grad(&model, &train, lambda, &w_mle)?;
                Ok((-value, grad.as_slice().iter().map(|g| -g).collect()))
            };
            let flat = lbfgs_minimize(
                eval,
                w.as_slice().to_vec(),
                config.max_iters_per_level,
                config.grad_tol,
            )?;
            w = WeightMatrix::from_vec(m, d, flat);

            let candidate = Model { w: w.clone(), sigma, ..base.clone() };
            let score = score_on_validation(&candidate)?;
            if score > best_score {
                best_score = score;
                best = candidate;
                best_lambda = lambda;
                stale_levels = 0;
            } else {
                stale_levels += 1;
                if stale_levels >= config.patience {
                    break;
                }
            }
        }
    }

    Ok(FitResult {
        model: best,
        init_validation_ndcg: init_score,
        best_validation_ndcg: best_score,
        best_lambda,
    })
}

/// Which metric families to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricFamily {
    Ndcg,
    Precision,
    Rbp,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub families: Vec<MetricFamily>,
    /// Truncations 1..=k_max for NDCG and precision.
    pub k_max: usize,
    pub rbp_alpha: f64,
    pub cap: usize,
    pub exclude_zero_relevance: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            families: vec![MetricFamily::Ndcg],
            k_max: 10,
            rbp_alpha: crate::objectives::DEFAULT_RBP_ALPHA,
            cap: 200,
            exclude_zero_relevance: false,
        }
    }
}

/// One averaged metric value. RBP is untruncated and reported with `k = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub metric: &'static str,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    /// Per-query values aligned with `entries`.
    pub per_query: Vec<(String, Vec<f64>)>,
}

fn metric_specs(opts: &EvalOptions) -> Vec<(&'static str, usize, GainSpec)> {
    let mut specs = Vec::new();
    for family in &opts.families {
        match family {
            MetricFamily::Ndcg => {
                for k in 1..=opts.k_max {
                    specs.push(("NDCG", k, GainSpec::Ndcg { k }));
                }
            }
            MetricFamily::Precision => {
                for k in 1..=opts.k_max {
                    specs.push(("P", k, GainSpec::Precision { k }));
                }
            }
            MetricFamily::Rbp => {
                specs.push(("RBP", 0, GainSpec::Rbp { alpha: opts.rbp_alpha }));
            }
        }
    }
    specs
}

/// Decode every query and average the exact gains per metric and truncation.
pub fn evaluate(
    model: &Model,
    queries: &[Query],
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    let prepared = prepare(queries);
    let included: Vec<&PreparedQuery> = prepared
        .iter()
        .filter(|q| !opts.exclude_zero_relevance || q.relevances.iter().any(|&r| r > 0))
        .collect();
    let specs = metric_specs(opts);
    let mut sums = vec![0.0; specs.len()];
    let mut per_query = Vec::with_capacity(included.len());
    for q in &included {
        let (pi, _, _) = model.marginals(&q.features)?;
        let s = shortcut_decode(&pi, opts.cap);
        let mut values = Vec::with_capacity(specs.len());
        for (i, (_, _, gain)) in specs.iter().enumerate() {
            let v = exact_gain(&s, &q.relevances, *gain)?;
            sums[i] += v;
            values.push(v);
        }
        per_query.push((q.qid.clone(), values));
    }
    let count = included.len().max(1) as f64;
    let entries = specs
        .iter()
        .zip(&sums)
        .map(|(&(metric, k, _), &sum)| EvalEntry { metric, k, value: sum / count })
        .collect();
    Ok(EvalReport { entries, per_query })
}
