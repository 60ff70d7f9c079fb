//! Shared synthetic-data generator for the integration suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sinkprop::data::{DataSplit, Document, Query};

/// Ranking direction used by the generator.
pub const TRUE_WEIGHTS: [f64; 5] = [1.0, -0.8, 0.6, 0.4, 0.5];

/// Queries whose relevance is a thresholded linear function of the features,
/// with optional label-flip noise. The last feature dimension is heavy-tailed
/// (a cubed normal), so a squared-loss regression onto the binary labels
/// systematically misestimates the ranking direction and leaves headroom for
/// the rank objective to improve on.
pub fn synthetic_queries(
    count: usize,
    docs_per_query: usize,
    dims: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Query> {
    assert!(dims <= TRUE_WEIGHTS.len());
    (0..count)
        .map(|i| {
            let documents = (0..docs_per_query)
                .map(|_| {
                    let mut x: Vec<f64> =
                        (0..dims).map(|_| StandardNormal.sample(rng)).collect();
                    if dims > 1 {
                        let last = x[dims - 1];
                        x[dims - 1] = last * last * last;
                    }
                    let score: f64 = x.iter().zip(&TRUE_WEIGHTS).map(|(a, b)| a * b).sum();
                    let mut relevance = (score > 0.0) as u32;
                    if noise > 0.0 && rng.gen_bool(noise) {
                        relevance = 1 - relevance;
                    }
                    Document { features: x, relevance, doc_id: None }
                })
                .collect();
            Query { qid: format!("q{i}"), documents }
        })
        .collect()
}

pub fn synthetic_split(
    train: usize,
    validation: usize,
    test: usize,
    docs_per_query: usize,
    dims: usize,
    noise: f64,
    seed: u64,
) -> DataSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DataSplit {
        train: synthetic_queries(train, docs_per_query, dims, noise, &mut rng),
        validation: synthetic_queries(validation, docs_per_query, dims, noise, &mut rng),
        test: synthetic_queries(test, docs_per_query, dims, noise, &mut rng),
    }
}
