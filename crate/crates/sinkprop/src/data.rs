//! LETOR/SVMrank data handling: parsing, serialization, fold loading,
//! feature scaling, and query resampling.
//!
//! Line format: `<label> qid:<id> <idx>:<val> ... [# comment]`. Feature
//! indices are 1-based and sparse; the dense dimension M is the largest
//! index seen, with missing entries read as 0.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no queries in input")]
    EmptyInput,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One document: dense features, graded relevance, optional trailing id.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub features: Vec<f64>,
    pub relevance: u32,
    pub doc_id: Option<String>,
}

/// One query: an ordered set of documents sharing a qid.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub qid: String,
    pub documents: Vec<Document>,
}

impl Query {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn relevances(&self) -> Vec<u32> {
        self.documents.iter().map(|d| d.relevance).collect()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.documents.iter().map(|d| d.features.clone()).collect()
    }
}

/// Train/validation/test portions of one fold.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Vec<Query>,
    pub validation: Vec<Query>,
    pub test: Vec<Query>,
}

fn parse_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse { line, message: message.into() }
}

/// Parse LETOR/SVMrank lines into queries. Documents are grouped by qid in
/// file order; a qid reappearing later continues its earlier query.
pub fn parse_letor<R: BufRead>(reader: R) -> Result<Vec<Query>, DataError> {
    let mut queries: Vec<Query> = Vec::new();
    let mut qid_index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut max_feature = 0usize;

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        let (payload, comment) = match line.split_once('#') {
            Some((head, tail)) => (head, Some(tail.trim().to_string())),
            None => (line.as_str(), None),
        };
        let payload = payload.trim();
        if payload.is_empty() {
            continue;
        }
        let mut tokens = payload.split_whitespace();

        let label_tok = tokens.next().ok_or_else(|| parse_err(line_no, "missing label"))?;
        let relevance: u32 = label_tok
            .parse()
            .map_err(|_| parse_err(line_no, format!("malformed relevance label `{label_tok}`")))?;

        let qid_tok = tokens.next().ok_or_else(|| parse_err(line_no, "missing qid field"))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .ok_or_else(|| parse_err(line_no, format!("expected qid:<id>, found `{qid_tok}`")))?
            .to_string();
        if qid.is_empty() {
            return Err(parse_err(line_no, "empty qid"));
        }

        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("malformed feature `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(line_no, format!("malformed feature index `{idx}`")))?;
            if idx == 0 {
                return Err(parse_err(line_no, "feature indices start at 1"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(line_no, format!("malformed feature value `{val}`")))?;
            max_feature = max_feature.max(idx);
            pairs.push((idx, val));
        }

        let doc = Document { features: vec![], relevance, doc_id: comment };
        let entry = *qid_index.entry(qid.clone()).or_insert_with(|| {
            queries.push(Query { qid, documents: vec![] });
            queries.len() - 1
        });
        let mut doc = doc;
        // Stash the sparse pairs densified later once M is known; encode
        // them densely now up to the current max to avoid a second pass
        // structure.
        doc.features = {
            let mut dense = vec![0.0; max_feature];
            for (idx, val) in pairs {
                dense[idx - 1] = val;
            }
            dense
        };
        queries[entry].documents.push(doc);
    }

    if queries.is_empty() {
        return Err(DataError::EmptyInput);
    }
    densify(&mut queries, max_feature);
    Ok(queries)
}

/// Pad every document's feature vector with zeros up to dimension `m`.
pub fn densify(queries: &mut [Query], m: usize) {
    for q in queries {
        for doc in &mut q.documents {
            doc.features.resize(m, 0.0);
        }
    }
}

/// Feature dimension of a query set (0 if empty).
pub fn feature_dim(queries: &[Query]) -> usize {
    queries
        .iter()
        .flat_map(|q| q.documents.iter())
        .map(|d| d.features.len())
        .max()
        .unwrap_or(0)
}

/// Serialize queries back to the line format.
pub fn serialize_queries(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        for doc in &q.documents {
            write!(out, "{} qid:{}", doc.relevance, q.qid).unwrap();
            for (i, v) in doc.features.iter().enumerate() {
                write!(out, " {}:{}", i + 1, v).unwrap();
            }
            if let Some(id) = &doc.doc_id {
                write!(out, " # {id}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Load a LETOR file from disk.
pub fn load_file(path: &Path) -> Result<Vec<Query>, DataError> {
    let file = std::fs::File::open(path)?;
    parse_letor(std::io::BufReader::new(file))
}

/// Load `train.txt`, `vali.txt`, `test.txt` from a fold directory and
/// densify all three portions to a shared feature dimension.
pub fn load_fold(dir: &Path) -> Result<DataSplit, DataError> {
    let mut train = load_file(&dir.join("train.txt"))?;
    let mut validation = load_file(&dir.join("vali.txt"))?;
    let mut test = load_file(&dir.join("test.txt"))?;
    let m = feature_dim(&train).max(feature_dim(&validation)).max(feature_dim(&test));
    densify(&mut train, m);
    densify(&mut validation, m);
    densify(&mut test, m);
    Ok(DataSplit { train, validation, test })
}

/// Per-dimension min-max ranges computed on one query set.
#[derive(Debug, Clone)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(queries: &[Query]) -> Self {
        let m = feature_dim(queries);
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        for q in queries {
            for doc in &q.documents {
                for (i, &v) in doc.features.iter().enumerate() {
                    min[i] = min[i].min(v);
                    max[i] = max[i].max(v);
                }
            }
        }
        Self { min, max }
    }

    /// Scale features in place to [0, 1]; constant dimensions map to 0.
    pub fn apply(&self, queries: &mut [Query]) {
        for q in queries {
            for doc in &mut q.documents {
                for (i, v) in doc.features.iter_mut().enumerate() {
                    let range = self.max[i] - self.min[i];
                    *v = if range > 0.0 { (*v - self.min[i]) / range } else { 0.0 };
                }
            }
        }
    }
}

/// FNV-1a over the resampling identity (seed, qid, replica): a stable
/// per-derived-query stream seed so distinct queries can be resampled in
/// any order with identical results.
fn derived_seed(seed: u64, qid: &str, replica: usize) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    };
    for b in seed.to_le_bytes() {
        eat(b);
    }
    for b in qid.bytes() {
        eat(b);
    }
    for b in (replica as u64).to_le_bytes() {
        eat(b);
    }
    h
}

/// Turn each source query into `per_query` smaller derived queries whose
/// documents are sampled with replacement. Each derived size is
/// Poisson(min(J, max_docs)) clamped to [1, max_docs].
pub fn resample_queries(
    queries: &[Query],
    per_query: usize,
    max_docs: usize,
    seed: u64,
) -> Vec<Query> {
    assert!(per_query >= 1);
    assert!(max_docs >= 1);
    let mut out = Vec::with_capacity(queries.len() * per_query);
    for q in queries {
        let mean = q.len().min(max_docs) as f64;
        for replica in 0..per_query {
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, &q.qid, replica));
            let size = Poisson::new(mean).expect("mean >= 1").sample(&mut rng) as usize;
            let size = size.clamp(1, max_docs);
            let documents: Vec<Document> =
                (0..size).map(|_| q.documents[rng.gen_range(0..q.len())].clone()).collect();
            out.push(Query { qid: format!("{}-r{replica}", q.qid), documents });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<Vec<Query>, DataError> {
        parse_letor(Cursor::new(text.as_bytes()))
    }

    #[test]
    fn parses_single_line() {
        let queries = parse("2 qid:10 1:0.5 2:0.3 #doc=A\n").unwrap();
        assert_eq!(queries.len(), 1);
        assert_eq!(queries[0].qid, "10");
        let doc = &queries[0].documents[0];
        assert_eq!(doc.relevance, 2);
        assert_eq!(doc.features, vec![0.5, 0.3]);
        assert_eq!(doc.doc_id.as_deref(), Some("doc=A"));
    }

    #[test]
    fn groups_by_qid_in_file_order() {
        let queries = parse("1 qid:a 1:1\n0 qid:a 1:2\n0 qid:b 1:3\n").unwrap();
        assert_eq!(queries.len(), 2);
        assert_eq!(queries[0].len(), 2);
        assert_eq!(queries[0].documents[0].features, vec![1.0]);
        assert_eq!(queries[0].documents[1].features, vec![2.0]);
    }

    #[test]
    fn malformed_label_reports_line() {
        let err = parse("1 qid:1 1:0.5\nx qid:1 1:0.1\n").unwrap_err();
        match err {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse(""), Err(DataError::EmptyInput)));
        assert!(matches!(parse("\n  \n"), Err(DataError::EmptyInput)));
    }

    #[test]
    fn missing_indices_read_as_zero() {
        let queries = parse("0 qid:1 3:0.7\n1 qid:1 1:0.2\n").unwrap();
        assert_eq!(queries[0].documents[0].features, vec![0.0, 0.0, 0.7]);
        assert_eq!(queries[0].documents[1].features, vec![0.2, 0.0, 0.0]);
    }

    #[test]
    fn round_trip_through_serialization() {
        let text = "2 qid:10 1:0.5 2:0.3 # A\n0 qid:10 1:0.25 2:0\n1 qid:11 1:0 2:1.5\n";
        let queries = parse(text).unwrap();
        let reparsed = parse(&serialize_queries(&queries)).unwrap();
        assert_eq!(queries, reparsed);
    }

    #[test]
    fn min_max_scaling() {
        let mut queries = parse("0 qid:1 1:2 2:5\n1 qid:1 1:4 2:5\n").unwrap();
        let scaler = MinMaxScaler::fit(&queries);
        scaler.apply(&mut queries);
        assert_eq!(queries[0].documents[0].features, vec![0.0, 0.0]);
        assert_eq!(queries[0].documents[1].features, vec![1.0, 0.0]);
    }

    fn sample_queries(n: usize, docs: usize) -> Vec<Query> {
        (0..n)
            .map(|i| Query {
                qid: format!("q{i}"),
                documents: (0..docs)
                    .map(|d| Document {
                        features: vec![d as f64, (i * d) as f64],
                        relevance: (d % 3) as u32,
                        doc_id: None,
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn resampling_counts_and_determinism() {
        let source = sample_queries(10, 12);
        let derived = resample_queries(&source, 20, 200, 7);
        assert_eq!(derived.len(), 200);
        let again = resample_queries(&source, 20, 200, 7);
        assert_eq!(derived, again);
        let different = resample_queries(&source, 20, 200, 8);
        assert_ne!(derived, different);
    }

    #[test]
    fn derived_documents_come_from_the_source() {
        let source = sample_queries(3, 8);
        for derived in resample_queries(&source, 5, 10, 1) {
            let src = source
                .iter()
                .find(|q| derived.qid.starts_with(&format!("{}-r", q.qid)))
                .unwrap();
            assert!(!derived.is_empty());
            assert!(derived.len() <= 10);
            for doc in &derived.documents {
                assert!(src.documents.contains(doc));
            }
        }
    }

    #[test]
    fn singleton_source_query_survives() {
        let source = vec![Query {
            qid: "solo".into(),
            documents: vec![Document { features: vec![1.0], relevance: 1, doc_id: None }],
        }];
        for derived in resample_queries(&source, 4, 200, 3) {
            assert!(derived.len() >= 1);
            for doc in &derived.documents {
                assert_eq!(doc.features, vec![1.0]);
            }
        }
    }

    #[test]
    fn sizes_capped_at_max_docs() {
        let source = sample_queries(2, 50);
        for derived in resample_queries(&source, 10, 20, 5) {
            assert!(derived.len() <= 20 && derived.len() >= 1);
        }
    }
}
