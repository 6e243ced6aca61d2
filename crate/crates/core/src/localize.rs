//! Line-level risk from token attributions, and effort-aware recall.
//!
//! A line's score is the sum of the positive weights of the distinct tokens
//! on it. A token on several lines contributes its full weight to each.

use std::collections::BTreeSet;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::explain::Explanation;
use crate::tokenizer::TokenLineIndex;

pub const DEFAULT_EFFORT_POINTS: [f64; 4] = [0.05, 0.10, 0.20, 0.50];
pub const DEFAULT_RECALL_TARGETS: [f64; 3] = [0.5, 0.8, 1.0];

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("explanation token `{0}` does not occur in the file")]
    TokenNotInIndex(String),
    #[error("file has no defective lines; effort metrics are undefined")]
    EmptyTruth,
    #[error("defective line {0} is missing from the ranking")]
    TruthNotRanked(usize),
    #[error("fraction {0} must lie in (0,1]")]
    BadFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRisk {
    pub line: usize,
    pub score: f64,
    pub risky_tokens: Vec<(String, f64)>,
}

/// Ordered `fraction → value` pairs, serialized as a JSON object keyed by
/// the fraction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FractionMap(pub Vec<(f64, f64)>);

impl FractionMap {
    pub fn get(&self, key: f64) -> Option<f64> {
        self.0.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }
}

impl Serialize for FractionMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FractionMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = FractionMap;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map from fractions to numbers")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<FractionMap, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, f64>()? {
                    let k: f64 = k.parse().map_err(serde::de::Error::custom)?;
                    out.push((k, v));
                }
                Ok(FractionMap(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortMetrics {
    pub recall_at_effort: FractionMap,
    pub effort_at_recall: FractionMap,
}

pub fn score_lines(
    explanation: &Explanation,
    index: &TokenLineIndex,
    line_count: usize,
) -> Result<Vec<LineRisk>, LocalizeError> {
    let mut lines: Vec<LineRisk> = (1..=line_count)
        .map(|line| LineRisk {
            line,
            score: 0.0,
            risky_tokens: Vec::new(),
        })
        .collect();
    for c in &explanation.contributions {
        let occurrences = index
            .lines_of(&c.feature)
            .ok_or_else(|| LocalizeError::TokenNotInIndex(c.feature.clone()))?;
        if c.weight <= 0.0 {
            continue;
        }
        for &l in occurrences.iter().filter(|&&l| l >= 1 && l <= line_count) {
            let entry = &mut lines[l - 1];
            entry.score += c.weight;
            entry.risky_tokens.push((c.feature.clone(), c.weight));
        }
    }
    Ok(lines)
}

/// Descending score, ties by ascending line number.
pub fn rank_lines(mut scores: Vec<LineRisk>) -> Vec<LineRisk> {
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.line.cmp(&b.line)));
    scores
}

/// Number of lines inspected at effort fraction `e`, i.e. `⌈e·n⌉`. The
/// small slack keeps products like `0.1 · 30` from rounding up a line.
fn lines_at_effort(e: f64, n: usize) -> usize {
    ((e * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Recall at each effort point and the smallest effort reaching each recall
/// target. `ranking` lists line numbers most-risky first.
pub fn effort_metrics(
    ranking: &[usize],
    truth: &BTreeSet<usize>,
    effort_points: &[f64],
    recall_targets: &[f64],
) -> Result<EffortMetrics, LocalizeError> {
    if truth.is_empty() {
        return Err(LocalizeError::EmptyTruth);
    }
    for &f in effort_points.iter().chain(recall_targets) {
        if !(f > 0.0 && f <= 1.0) {
            return Err(LocalizeError::BadFraction(f));
        }
    }
    let ranked: BTreeSet<usize> = ranking.iter().copied().collect();
    if let Some(&missing) = truth.iter().find(|l| !ranked.contains(l)) {
        return Err(LocalizeError::TruthNotRanked(missing));
    }
    let n = ranking.len();
    // hits[k] = defective lines among the first k ranked
    let mut hits = Vec::with_capacity(n + 1);
    hits.push(0usize);
    for &l in ranking {
        hits.push(hits.last().unwrap() + usize::from(truth.contains(&l)));
    }
    let total = truth.len() as f64;
    let recall_at_effort = effort_points
        .iter()
        .map(|&e| (e, hits[lines_at_effort(e, n)] as f64 / total))
        .collect();
    let effort_at_recall = recall_targets
        .iter()
        .map(|&r| {
            let k = (0..=n)
                .find(|&k| hits[k] as f64 / total >= r - 1e-12)
                .unwrap_or(n);
            (r, k as f64 / n as f64)
        })
        .collect();
    Ok(EffortMetrics {
        recall_at_effort: FractionMap(recall_at_effort),
        effort_at_recall: FractionMap(effort_at_recall),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub line: usize,
    pub score: f64,
    pub risky_tokens: Vec<RiskyToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskyToken {
    pub token: String,
    pub weight: f64,
}

/// Ranked lines plus effort metrics for one file. `metrics` is `None` when
/// the file has no known defective lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub file_id: String,
    pub lines: Vec<ReportLine>,
    pub metrics: Option<EffortMetrics>,
    pub seed: u64,
}

impl LocalizationReport {
    pub fn new(
        file_id: &str,
        ranking: &[LineRisk],
        truth: &BTreeSet<usize>,
        seed: u64,
    ) -> Result<Self, LocalizeError> {
        let order: Vec<usize> = ranking.iter().map(|l| l.line).collect();
        let metrics = match effort_metrics(
            &order,
            truth,
            &DEFAULT_EFFORT_POINTS,
            &DEFAULT_RECALL_TARGETS,
        ) {
            Ok(m) => Some(m),
            Err(LocalizeError::EmptyTruth) => None,
            Err(e) => return Err(e),
        };
        let lines = ranking
            .iter()
            .map(|l| ReportLine {
                line: l.line,
                score: crate::numfmt::round_sig(l.score, crate::explain::EXPLANATION_DIGITS),
                risky_tokens: l
                    .risky_tokens
                    .iter()
                    .map(|(t, w)| RiskyToken {
                        token: t.clone(),
                        weight: *w,
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            file_id: file_id.to_string(),
            lines,
            metrics,
            seed,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Direction, ExplainerConfig, FeatureContribution};
    use proptest::prelude::*;

    fn explanation(weights: &[(&str, f64)]) -> Explanation {
        Explanation {
            file_id: "f".into(),
            risk_score: 0.9,
            intercept: 0.1,
            fidelity_r2: 0.9,
            contributions: weights
                .iter()
                .map(|(t, w)| FeatureContribution {
                    feature: t.to_string(),
                    weight: *w,
                    direction: Direction::of(*w),
                })
                .collect(),
            config: ExplainerConfig::tokens(1),
            seed: 1,
        }
    }

    fn index(entries: &[(&str, &[usize])]) -> TokenLineIndex {
        let mut idx = TokenLineIndex::default();
        for (t, lines) in entries {
            idx.occurrences
                .insert(t.to_string(), lines.iter().copied().collect());
        }
        idx
    }

    #[test]
    fn negative_weights_are_ignored() {
        let e = explanation(&[("foo", 0.4), ("bar", -0.2)]);
        let idx = index(&[("foo", &[1]), ("bar", &[2])]);
        let lines = score_lines(&e, &idx, 2).unwrap();
        assert_eq!(lines[0].score, 0.4);
        assert_eq!(lines[1].score, 0.0);
    }

    #[test]
    fn multi_line_token_adds_full_weight() {
        let e = explanation(&[("foo", 0.3)]);
        let idx = index(&[("foo", &[1, 3])]);
        let lines = score_lines(&e, &idx, 3).unwrap();
        assert_eq!(
            lines.iter().map(|l| l.score).collect::<Vec<_>>(),
            [0.3, 0.0, 0.3]
        );
    }

    #[test]
    fn empty_contributions_and_unknown_token() {
        let lines = score_lines(&explanation(&[]), &index(&[]), 4).unwrap();
        assert!(lines.iter().all(|l| l.score == 0.0));
        assert!(matches!(
            score_lines(&explanation(&[("ghost", 0.1)]), &index(&[]), 1),
            Err(LocalizeError::TokenNotInIndex(_))
        ));
    }

    fn risk(line: usize, score: f64) -> LineRisk {
        LineRisk {
            line,
            score,
            risky_tokens: Vec::new(),
        }
    }

    #[test]
    fn ranking_breaks_ties_by_line() {
        let order: Vec<usize> = rank_lines(vec![risk(1, 0.4), risk(2, 0.0), risk(3, 0.4)])
            .iter()
            .map(|l| l.line)
            .collect();
        assert_eq!(order, [1, 3, 2]);
        let zeros: Vec<usize> = rank_lines((1..=5).rev().map(|l| risk(l, 0.0)).collect())
            .iter()
            .map(|l| l.line)
            .collect();
        assert_eq!(zeros, [1, 2, 3, 4, 5]);
        assert_eq!(rank_lines(vec![risk(7, 1.0)])[0].line, 7);
    }

    #[test]
    fn perfect_and_inverse_rankings() {
        let truth = BTreeSet::from([1, 2]);
        let perfect: Vec<usize> = (1..=10).collect();
        let m = effort_metrics(&perfect, &truth, &[0.2], &[1.0]).unwrap();
        assert_eq!(m.recall_at_effort.get(0.2), Some(1.0));
        assert_eq!(m.effort_at_recall.get(1.0), Some(0.2));
        let inverse: Vec<usize> = (1..=10).rev().collect();
        let m = effort_metrics(&inverse, &truth, &[0.2], &[1.0]).unwrap();
        assert_eq!(m.recall_at_effort.get(0.2), Some(0.0));
    }

    #[test]
    fn empty_truth_is_explicit() {
        assert!(matches!(
            effort_metrics(&[1, 2], &BTreeSet::new(), &[0.5], &[1.0]),
            Err(LocalizeError::EmptyTruth)
        ));
    }

    #[test]
    fn effort_cut_is_not_inflated_by_rounding() {
        assert_eq!(lines_at_effort(0.1, 30), 3);
        assert_eq!(lines_at_effort(0.05, 10), 1);
        assert_eq!(lines_at_effort(1.0, 7), 7);
    }

    #[test]
    fn fraction_map_serializes_as_object() {
        let m = FractionMap(vec![(0.05, 0.5), (1.0, 1.0)]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"0.05":0.5,"1":1.0}"#);
        assert_eq!(serde_json::from_str::<FractionMap>(&json).unwrap(), m);
    }

    proptest! {
        #[test]
        fn recall_is_monotone_and_complete(perm in Just((1..=40usize).collect::<Vec<_>>()).prop_shuffle(),
                                           truth in prop::collection::btree_set(1..=40usize, 1..6)) {
            let points: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
            let m = effort_metrics(&perm, &truth, &points, &[1.0]).unwrap();
            let values: Vec<f64> = m.recall_at_effort.0.iter().map(|(_, v)| *v).collect();
            prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(m.recall_at_effort.get(1.0), Some(1.0));
        }

        #[test]
        fn line_scores_conserve_weight(weights in prop::collection::vec(-1.0f64..1.0, 1..6),
                                       spread in prop::collection::vec(prop::collection::btree_set(1..=12usize, 1..4), 6)) {
            let names: Vec<String> = (0..weights.len()).map(|i| format!("t{i}")).collect();
            let pairs: Vec<(&str, f64)> = names.iter().map(String::as_str).zip(weights.iter().copied()).collect();
            let e = explanation(&pairs);
            let mut idx = TokenLineIndex::default();
            for (i, n) in names.iter().enumerate() {
                idx.occurrences.insert(n.clone(), spread[i].clone());
            }
            let total: f64 = score_lines(&e, &idx, 12).unwrap().iter().map(|l| l.score).sum();
            let expected: f64 = weights.iter().zip(&spread).filter(|(w, _)| **w > 0.0).map(|(w, s)| w * s.len() as f64).sum();
            prop_assert!((total - expected).abs() < 1e-9);
        }
    }
}
