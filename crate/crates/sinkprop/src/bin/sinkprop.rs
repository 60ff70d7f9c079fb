//! Command-line frontend: train a ranking model, evaluate metric-vs-k
//! curves as CSV, emit ranked lists, and run the numeric self-check suite.
//!
//! Exit codes: 0 success, 1 failed self-check, 2 parse/config/I-O errors.
//! Every output file is accompanied by a `<file>.manifest.json` recording
//! the resolved configuration, seed, and input paths.

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sinkprop::data::{self, MinMaxScaler, Query};
use sinkprop::decode::{hungarian_decode, matching_score, shortcut_decode};
use sinkprop::dsm::{balance_residual, sinkhorn_backward, sinkhorn_forward};
use sinkprop::matrix::SquareMatrix;
use sinkprop::objectives::{expected_gain, GainSpec};
use sinkprop::oracle;
use sinkprop::param::ParamKind;
use sinkprop::train::{
    self, evaluate, fit, EvalOptions, MetricFamily, Model, PreparedQuery, TrainConfig,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sinkprop", version, about = "Rank learning via Sinkhorn-normalized marginal matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on LETOR-format data.
    Train(TrainArgs),
    /// Evaluate a model: CSV of metric vs truncation.
    Eval(EvalArgs),
    /// Emit per-query ranked document lists.
    Rank(RankArgs),
    /// Run gradient and oracle self-checks on random instances.
    Check(CheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training split (LETOR/SVMrank lines).
    #[arg(long)]
    train: PathBuf,
    /// Validation split used for early stopping and λ selection.
    #[arg(long)]
    vali: PathBuf,
    /// Output model file.
    #[arg(long, default_value = "model.txt")]
    out: PathBuf,
    /// Parameterization: `smooth` or `logit-logistic`.
    #[arg(long, default_value = "smooth")]
    param: String,
    /// NDCG truncation for training: a number or `auto` (largest query).
    #[arg(long, default_value = "auto")]
    k: String,
    #[arg(long, default_value_t = 5)]
    sinkhorn_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Decode prefix cap for validation scoring.
    #[arg(long, default_value_t = 200)]
    cap: usize,
    /// Derived queries per source query (0 disables resampling).
    #[arg(long, default_value_t = 20)]
    resample: usize,
    /// Maximum documents per derived query.
    #[arg(long, default_value_t = 200)]
    max_docs: usize,
    /// Regularization grid, comma-separated.
    #[arg(long, default_value = "0,0.001,0.01,0.1,1")]
    lambda_grid: String,
    /// Smoothing schedule, comma-separated and strictly decreasing.
    #[arg(long, default_value = "1,0.5,0.25,0.125,0.0625")]
    sigma_schedule: String,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Min-max scale features (scaler fit per input file).
    #[arg(long, default_value_t = false)]
    scale: bool,
    /// Drop queries whose relevances are all zero.
    #[arg(long, default_value_t = false)]
    exclude_zero_relevance: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test split (LETOR/SVMrank lines).
    #[arg(long)]
    test: PathBuf,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated metric families: ndcg, p, rbp.
    #[arg(long, default_value = "ndcg")]
    metrics: String,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    #[arg(long, default_value_t = 0.8)]
    rbp_alpha: f64,
    #[arg(long, default_value_t = 200)]
    cap: usize,
    #[arg(long, default_value_t = false)]
    scale: bool,
    #[arg(long, default_value_t = false)]
    exclude_zero_relevance: bool,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input queries (LETOR/SVMrank lines).
    #[arg(long)]
    input: PathBuf,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decode prefix cap.
    #[arg(long, default_value_t = 200)]
    cap: usize,
    #[arg(long, default_value_t = false)]
    scale: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 5)]
    sinkhorn_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    seed: u64,
    inputs: Vec<String>,
    config: serde_json::Value,
}

fn write_manifest(out_path: &Path, manifest: &RunManifest) -> std::io::Result<()> {
    let path = out_path.with_extension(format!(
        "{}manifest.json",
        out_path
            .extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    std::fs::write(path, serde_json::to_string_pretty(manifest).unwrap())
}

fn parse_kind(s: &str) -> Result<ParamKind, String> {
    match s {
        "smooth" => Ok(ParamKind::SmoothedIndicator),
        "logit-logistic" => Ok(ParamKind::LogitLogistic),
        other => Err(format!("unknown parameterization `{other}` (expected smooth or logit-logistic)")),
    }
}

fn parse_float_list(s: &str, flag: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|tok| tok.trim().parse::<f64>().map_err(|_| format!("bad value `{tok}` in --{flag}")))
        .collect()
}

fn load_queries(path: &Path, scale: bool) -> Result<Vec<Query>, String> {
    let mut queries =
        data::load_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if scale {
        MinMaxScaler::fit(&queries).apply(&mut queries);
    }
    Ok(queries)
}

fn cmd_train(args: &TrainArgs) -> Result<(), String> {
    let kind = parse_kind(&args.param)?;
    if args.cap < 1 {
        return Err("--cap must be at least 1".into());
    }
    let train_queries = load_queries(&args.train, args.scale)?;
    let vali_queries = load_queries(&args.vali, args.scale)?;
    let train_k = match args.k.as_str() {
        "auto" => None,
        other => Some(other.parse::<usize>().map_err(|_| format!("bad --k `{other}`"))?),
    };
    let lambda_grid = parse_float_list(&args.lambda_grid, "lambda-grid")?;
    let sigma_schedule = parse_float_list(&args.sigma_schedule, "sigma-schedule")?;
    if sigma_schedule.is_empty() || sigma_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err("--sigma-schedule must be nonempty and strictly decreasing".into());
    }

    let config = TrainConfig {
        kind,
        lambda_grid,
        sigma_schedule,
        sinkhorn_iters: args.sinkhorn_iters,
        epsilon: args.epsilon,
        train_k,
        validation_k: 10,
        max_iters_per_level: args.max_iters,
        resample: (args.resample > 0).then_some((args.resample, args.max_docs)),
        cap: args.cap,
        seed: args.seed,
        exclude_zero_relevance: args.exclude_zero_relevance,
        // Scaling already applied per file above.
        scale: false,
        ..TrainConfig::default()
    };
    let split = data::DataSplit {
        train: train_queries,
        validation: vali_queries,
        test: vec![],
    };
    let result = fit(&config, &split).map_err(|e| e.to_string())?;
    std::fs::write(&args.out, result.model.to_text()).map_err(|e| e.to_string())?;

    let manifest = RunManifest {
        tool: "sinkprop",
        version: env!("CARGO_PKG_VERSION"),
        command: "train".into(),
        seed: args.seed,
        inputs: vec![args.train.display().to_string(), args.vali.display().to_string()],
        config: serde_json::json!({
            "param": args.param,
            "k": args.k,
            "sinkhorn_iters": args.sinkhorn_iters,
            "epsilon": args.epsilon,
            "cap": args.cap,
            "resample": args.resample,
            "max_docs": args.max_docs,
            "lambda_grid": args.lambda_grid,
            "sigma_schedule": args.sigma_schedule,
            "max_iters": args.max_iters,
            "scale": args.scale,
            "exclude_zero_relevance": args.exclude_zero_relevance,
            "best_lambda": result.best_lambda,
            "init_validation_ndcg": result.init_validation_ndcg,
            "best_validation_ndcg": result.best_validation_ndcg,
        }),
    };
    write_manifest(&args.out, &manifest).map_err(|e| e.to_string())?;
    eprintln!(
        "wrote {} (validation NDCG@10 {:.4} from {:.4} at init)",
        args.out.display(),
        result.best_validation_ndcg,
        result.init_validation_ndcg
    );
    Ok(())
}

fn parse_metrics(s: &str) -> Result<Vec<MetricFamily>, String> {
    s.split(',')
        .map(|tok| match tok.trim() {
            "ndcg" => Ok(MetricFamily::Ndcg),
            "p" => Ok(MetricFamily::Precision),
            "rbp" => Ok(MetricFamily::Rbp),
            other => Err(format!("unknown metric `{other}` (expected ndcg, p, rbp)")),
        })
        .collect()
}

fn write_output(out: &Option<PathBuf>, content: &str, manifest: &RunManifest) -> Result<(), String> {
    match out {
        Some(path) => {
            std::fs::write(path, content).map_err(|e| e.to_string())?;
            write_manifest(path, manifest).map_err(|e| e.to_string())?;
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), String> {
    if args.cap < 1 {
        return Err("--cap must be at least 1".into());
    }
    let model_text = std::fs::read_to_string(&args.model)
        .map_err(|e| format!("{}: {e}", args.model.display()))?;
    let model = Model::from_text(&model_text).map_err(|e| e.to_string())?;
    let queries = load_queries(&args.test, args.scale)?;
    if queries.is_empty() {
        return Err("no queries".into());
    }
    let opts = EvalOptions {
        families: parse_metrics(&args.metrics)?,
        k_max: args.k_max,
        rbp_alpha: args.rbp_alpha,
        cap: args.cap,
        exclude_zero_relevance: args.exclude_zero_relevance,
    };
    let report = evaluate(&model, &queries, &opts).map_err(|e| e.to_string())?;
    let mut csv = String::from("metric,k,value\n");
    for entry in &report.entries {
        writeln!(csv, "{},{},{}", entry.metric, entry.k, entry.value).unwrap();
    }
    let manifest = RunManifest {
        tool: "sinkprop",
        version: env!("CARGO_PKG_VERSION"),
        command: "eval".into(),
        seed: 0,
        inputs: vec![args.model.display().to_string(), args.test.display().to_string()],
        config: serde_json::json!({
            "metrics": args.metrics,
            "k_max": args.k_max,
            "rbp_alpha": args.rbp_alpha,
            "cap": args.cap,
            "scale": args.scale,
            "exclude_zero_relevance": args.exclude_zero_relevance,
        }),
    };
    write_output(&args.out, &csv, &manifest)
}

fn cmd_rank(args: &RankArgs) -> Result<(), String> {
    if args.cap < 1 {
        return Err("--cap must be at least 1 (cap >= 1)".into());
    }
    let model_text = std::fs::read_to_string(&args.model)
        .map_err(|e| format!("{}: {e}", args.model.display()))?;
    let model = Model::from_text(&model_text).map_err(|e| e.to_string())?;
    let queries = load_queries(&args.input, args.scale)?;

    let mut out = String::new();
    for q in &queries {
        let prepared = PreparedQuery::from(q);
        let (pi, _, _) = model.marginals(&prepared.features).map_err(|e| e.to_string())?;
        let s = shortcut_decode(&pi, args.cap);
        for rank in 1..=s.len() {
            let doc = s.doc_at_rank(rank);
            // Score column: the marginal mass the model put on this
            // (document, rank) cell.
            writeln!(out, "{}\t{}\t{}\t{}", q.qid, rank, doc, pi[(doc, rank - 1)]).unwrap();
        }
    }
    let manifest = RunManifest {
        tool: "sinkprop",
        version: env!("CARGO_PKG_VERSION"),
        command: "rank".into(),
        seed: 0,
        inputs: vec![args.model.display().to_string(), args.input.display().to_string()],
        config: serde_json::json!({ "cap": args.cap, "scale": args.scale }),
    };
    write_output(&args.out, &out, &manifest)
}

/// One self-check: name, worst observed error, allowed bound.
struct Check {
    name: &'static str,
    max_error: f64,
    bound: f64,
}

fn run_checks(sinkhorn_iters: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // Sinkhorn balance after a long run.
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(3..12);
        let a = SquareMatrix::from_vec(n, (0..n * n).map(|_| rng.gen_range(0.1..2.0)).collect());
        let (out, _) = sinkhorn_forward(&a, 50, 0.0).unwrap();
        worst = worst.max(balance_residual(&out).max());
    }
    checks.push(Check { name: "sinkhorn-balance", max_error: worst, bound: 1e-8 });

    // Sinkhorn backward vs finite differences on a linear functional.
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let n = rng.gen_range(3..7);
        let a = SquareMatrix::from_vec(n, (0..n * n).map(|_| rng.gen_range(0.1..2.0)).collect());
        let target =
            SquareMatrix::from_vec(n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (_, tape) = sinkhorn_forward(&a, sinkhorn_iters, 0.0).unwrap();
        let analytic = sinkhorn_backward(&tape, &target).unwrap();
        let numeric = oracle::finite_diff(
            |flat| {
                let m = SquareMatrix::from_vec(n, flat.to_vec());
                let (out, _) = sinkhorn_forward(&m, sinkhorn_iters, 0.0).unwrap();
                out.iter().zip(target.iter()).map(|(o, t)| o * t).sum()
            },
            a.as_slice(),
            1e-6,
        );
        worst = worst.max(oracle::max_relative_error(analytic.as_slice(), &numeric));
    }
    checks.push(Check { name: "sinkprop-gradient", max_error: worst, bound: 1e-5 });

    // Rank-linearity: mixture expectation equals marginal expectation.
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let j = rng.gen_range(2..=6);
        let perms = oracle::enumerate_permutations(j).unwrap();
        let picks: Vec<_> = (0..3).map(|_| perms[rng.gen_range(0..perms.len())].clone()).collect();
        let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mixture = oracle::PermutationMixture::new(
            picks.into_iter().zip(raw).map(|(s, w)| (w / total, s)).collect(),
        );
        let relevances: Vec<u32> = (0..j).map(|_| rng.gen_range(0..=1)).collect();
        let marginals = oracle::mixture_marginals(&mixture, j);
        for gain in [GainSpec::Ndcg { k: j }, GainSpec::Precision { k: 2 }, GainSpec::Rbp { alpha: 0.8 }] {
            let brute = oracle::brute_force_expected_gain(&mixture, &relevances, gain).unwrap();
            let marginal = expected_gain(&marginals, &relevances, gain).unwrap();
            worst = worst.max((brute - marginal).abs());
        }
    }
    checks.push(Check { name: "rank-linearity", max_error: worst, bound: 1e-10 });

    // Hungarian exactness vs brute force.
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(2..=6);
        let p = SquareMatrix::from_vec(n, (0..n * n).map(|_| rng.gen_range(0.01..1.0)).collect());
        let decoded = matching_score(&p, &hungarian_decode(&p));
        let best = oracle::enumerate_permutations(n)
            .unwrap()
            .into_iter()
            .map(|s| matching_score(&p, &s))
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((best - decoded).abs());
    }
    checks.push(Check { name: "hungarian-exactness", max_error: worst, bound: 1e-9 });

    // Full-pipeline W-gradient vs finite differences.
    let mut worst = 0.0f64;
    for kind in [ParamKind::SmoothedIndicator, ParamKind::LogitLogistic] {
        let m = 3;
        let d = kind.heads();
        let queries: Vec<PreparedQuery> = (0..2)
            .map(|i| PreparedQuery {
                qid: format!("q{i}"),
                features: (0..5)
                    .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
                relevances: (0..5).map(|_| rng.gen_range(0..3)).collect(),
            })
            .collect();
        let w0: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w_mle = sinkprop::param::WeightMatrix::zeros(m, d);
        let make = |flat: &[f64]| Model {
            kind,
            w: sinkprop::param::WeightMatrix::from_vec(m, d, flat.to_vec()),
            sigma: 0.8,
            sinkhorn_iters,
            epsilon: 1e-6,
            gain: GainSpec::Ndcg { k: 5 },
        };
        let (_, grad) = train::objective_and_grad(&make(&w0), &queries, 0.0, &w_mle).unwrap();
        let numeric = oracle::finite_diff(
            |flat| train::objective_and_grad(&make(flat), &queries, 0.0, &w_mle).unwrap().0,
            &w0,
            1e-6,
        );
        worst = worst.max(oracle::max_relative_error(grad.as_slice(), &numeric));
    }
    checks.push(Check { name: "pipeline-gradient", max_error: worst, bound: 1e-4 });

    checks
}

fn cmd_check(args: &CheckArgs) -> bool {
    let checks = run_checks(args.sinkhorn_iters, args.seed);
    let mut all_ok = true;
    for check in &checks {
        let ok = check.max_error <= check.bound;
        all_ok &= ok;
        println!(
            "{} {}: max error {:.3e} (bound {:.0e})",
            if ok { "PASS" } else { "FAIL" },
            check.name,
            check.max_error,
            check.bound
        );
    }
    all_ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Rank(args) => cmd_rank(args),
        Command::Check(args) => {
            return if cmd_check(args) { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_checks_pass() {
        assert!(run_checks(5, 0).iter().all(|c| c.max_error <= c.bound));
    }

    #[test]
    fn zero_iteration_checks_pass() {
        // Z^0 passthrough is a valid configuration.
        assert!(run_checks(0, 0).iter().all(|c| c.max_error <= c.bound));
    }
}
