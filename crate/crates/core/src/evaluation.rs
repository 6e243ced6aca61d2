//! Model-quality metrics and synthetic data with known ground truth.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{MetricRecord, SourceCorpus, SourceFile, TabularDataset};
use crate::explain::BlackBox;
use crate::forest::ForestModel;
use crate::CLASS_THRESHOLD;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("test set is empty")]
    EmptyTest,
    #[error("scores and labels differ in length")]
    LengthMismatch,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    /// `None` when the test set holds a single class and AUC is undefined.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub oob_accuracy: Option<f64>,
}

/// Area under the ROC curve via the rank-sum statistic, ties sharing the
/// average rank. `None` unless both labels are present.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

pub fn evaluate_scores(scores: &[f64], labels: &[u8]) -> Result<ModelReport, EvaluationError> {
    if scores.is_empty() {
        return Err(EvaluationError::EmptyTest);
    }
    if scores.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= CLASS_THRESHOLD, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ModelReport {
        auc: auc(scores, labels),
        precision,
        recall,
        f1,
        accuracy: ratio(tp + tn, scores.len()),
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
        oob_accuracy: None,
    })
}

pub fn evaluate_model(
    model: &ForestModel,
    test: &TabularDataset,
) -> Result<ModelReport, EvaluationError> {
    if test.n_features() != model.n_features() {
        return Err(EvaluationError::DimensionMismatch {
            expected: model.n_features(),
            got: test.n_features(),
        });
    }
    let scores: Vec<f64> = test
        .records
        .iter()
        .map(|r| model.score(&r.features))
        .collect();
    let mut report = evaluate_scores(&scores, &test.labels())?;
    report.oob_accuracy = Some(model.oob_accuracy);
    Ok(report)
}

/// Parameters of a planted-defect corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_files: usize,
    pub lines_per_file: usize,
    pub defect_rate_lines: f64,
    pub vocabulary_size: usize,
    pub signal_tokens: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_files: 200,
            lines_per_file: 100,
            defect_rate_lines: 0.02,
            vocabulary_size: 200,
            signal_tokens: vec!["bugmagic".into()],
            seed: 11,
        }
    }
}

/// Metric columns of the synthetic table, in order.
pub const METRIC_FEATURES: [&str; 8] = [
    "loc",
    "decl_lines",
    "distinct_devs",
    "ownership",
    "blank_lines",
    "output_vars",
    "comment_ratio",
    "minor_devs",
];

const STEMS: [&str; 12] = [
    "buf", "len", "idx", "node", "val", "cfg", "ptr", "count", "state", "item", "key", "ctx",
];

fn background_vocabulary(size: usize, signals: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(size);
    let mut i = 0;
    while out.len() < size {
        let tok = format!("{}_{}", STEMS[i % STEMS.len()], i / STEMS.len());
        if !signals.contains(&tok) {
            out.push(tok);
        }
        i += 1;
    }
    out
}

fn render_line(tokens: &[&str]) -> String {
    match tokens {
        [] => String::new(),
        [a] => format!("{a};"),
        [a, b] => format!("{a} = {b};"),
        [a, b, rest @ ..] => format!("{a} = {b}({});", rest.join(", ")),
    }
}

/// Planted-defect corpus and a matching metric table.
///
/// Each line draws 2 to 6 background tokens. A line is defective with
/// probability `defect_rate_lines` and then also carries one signal token,
/// which never appears elsewhere. Metric rows are drawn so that low
/// ownership and many declaration lines go with defective files.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
) -> Result<(SourceCorpus, TabularDataset), EvaluationError> {
    if spec.n_files == 0 || spec.lines_per_file == 0 {
        return Err(EvaluationError::BadSpec(
            "need at least one file and one line".into(),
        ));
    }
    if !(spec.defect_rate_lines > 0.0 && spec.defect_rate_lines < 1.0) {
        return Err(EvaluationError::BadSpec(
            "defect_rate_lines must lie in (0,1)".into(),
        ));
    }
    if spec.signal_tokens.is_empty() {
        return Err(EvaluationError::BadSpec(
            "at least one signal token is required".into(),
        ));
    }
    if spec.vocabulary_size <= spec.signal_tokens.len() {
        return Err(EvaluationError::BadSpec(
            "vocabulary_size must exceed the number of signal tokens".into(),
        ));
    }
    if let Some(bad) = spec
        .signal_tokens
        .iter()
        .find(|t| crate::tokenizer::tokenize_line(t) != [t.as_str()])
    {
        return Err(EvaluationError::BadSpec(format!(
            "`{bad}` is not a single token"
        )));
    }
    let background = background_vocabulary(
        spec.vocabulary_size - spec.signal_tokens.len(),
        &spec.signal_tokens,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n_files.to_string().len().max(3);

    let mut files = Vec::with_capacity(spec.n_files);
    let mut records = Vec::with_capacity(spec.n_files);
    for f in 0..spec.n_files {
        let file_id = format!("src/file_{f:0width$}.c");
        let mut lines = Vec::with_capacity(spec.lines_per_file);
        let mut defective = BTreeSet::new();
        for l in 0..spec.lines_per_file {
            let k = rng.gen_range(2..=6);
            let mut toks: Vec<&str> = (0..k)
                .map(|_| background.choose(&mut rng).expect("non-empty").as_str())
                .collect();
            if rng.gen_bool(spec.defect_rate_lines) {
                let signal = spec.signal_tokens.choose(&mut rng).expect("non-empty");
                let at = rng.gen_range(0..=toks.len());
                toks.insert(at, signal.as_str());
                defective.insert(l + 1);
            }
            lines.push(render_line(&toks));
        }
        let file = SourceFile::new(file_id.clone(), lines, defective).expect("lines in range");
        records.push(MetricRecord {
            file_id,
            features: synthetic_metrics(&mut rng, spec.lines_per_file, file.label == 1),
            label: file.label,
        });
        files.push(file);
    }
    let corpus = SourceCorpus::new(files).expect("unique ids");
    let table = TabularDataset {
        feature_names: METRIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        records,
    };
    Ok((corpus, table))
}

fn synthetic_metrics(rng: &mut ChaCha8Rng, loc: usize, defective: bool) -> Vec<f64> {
    let (own_lo, decl_hi, devs_hi, minor_hi) = if defective {
        (0.2, 60, 8, 5)
    } else {
        (0.5, 35, 4, 2)
    };
    let decl_lo = if defective { 20 } else { 5 };
    let ownership = (rng.gen_range(own_lo..1.0f64) * 100.0).round() / 100.0;
    let decl_lines = rng.gen_range(decl_lo..=decl_hi) as f64;
    let distinct_devs = rng.gen_range(1..=devs_hi) as f64;
    let blank_lines = rng.gen_range(0..=15) as f64;
    let output_vars = rng.gen_range(0..=5) as f64;
    let comment_ratio = (rng.gen_range(0.0..0.5f64) * 1000.0).round() / 1000.0;
    let minor_devs = rng.gen_range(0..=minor_hi) as f64;
    vec![
        loc as f64,
        decl_lines,
        distinct_devs,
        ownership,
        blank_lines,
        output_vars,
        comment_ratio,
        minor_devs,
    ]
}

/// Two uniform features, defective iff `x1 + x2 > 1`.
pub fn separable_dataset(n: usize, seed: u64) -> TabularDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let x1: f64 = rng.gen();
            let x2: f64 = rng.gen();
            MetricRecord {
                file_id: format!("row_{i}"),
                features: vec![x1, x2],
                label: u8::from(x1 + x2 > 1.0),
            }
        })
        .collect();
    TabularDataset {
        feature_names: vec!["x1".into(), "x2".into()],
        records,
    }
}

/// Metric rows where defectiveness is driven by low ownership alone
/// (`ownership < 0.5`); the other columns are noise.
pub fn ownership_dataset(n: usize, seed: u64) -> TabularDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let ownership = (rng.gen_range(0.0..1.0f64) * 1000.0).round() / 1000.0;
            let features = vec![
                rng.gen_range(50..=2000) as f64,
                rng.gen_range(1..=60) as f64,
                rng.gen_range(1..=8) as f64,
                ownership,
                rng.gen_range(0..=40) as f64,
                rng.gen_range(0..=6) as f64,
                (rng.gen_range(0.0..0.6f64) * 1000.0).round() / 1000.0,
                rng.gen_range(0..=5) as f64,
            ];
            MetricRecord {
                file_id: format!("src/module_{i:04}.c"),
                features,
                label: u8::from(ownership < 0.5),
            }
        })
        .collect();
    TabularDataset {
        feature_names: METRIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        records,
    }
}
