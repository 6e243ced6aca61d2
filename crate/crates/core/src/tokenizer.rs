//! Bag-of-token features for source files.
//!
//! A token is a maximal run of alphanumeric or `_` characters. Runs made
//! only of digits are dropped; everything else (comments, string contents)
//! is kept verbatim with its original case.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{MetricRecord, SourceCorpus, SourceFile, TabularDataset};

/// Occurrence counts of each token in one file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVector {
    pub counts: BTreeMap<String, usize>,
}

impl TokenVector {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Distinct tokens in canonical (lexicographic) order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    /// Dense count vector over `vocabulary`; tokens outside it are ignored.
    pub fn to_features(&self, vocabulary: &[String]) -> Vec<f64> {
        vocabulary
            .iter()
            .map(|t| self.counts.get(t).copied().unwrap_or(0) as f64)
            .collect()
    }
}

/// Lines on which each token occurs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLineIndex {
    pub occurrences: BTreeMap<String, BTreeSet<usize>>,
}

impl TokenLineIndex {
    pub fn lines_of(&self, token: &str) -> Option<&BTreeSet<usize>> {
        self.occurrences.get(token)
    }
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub fn tokenize_line(text: &str) -> Vec<&str> {
    text.split(|c: char| !is_token_char(c))
        .filter(|t| !t.is_empty() && !t.chars().all(|c| c.is_numeric()))
        .collect()
}

pub fn build_token_features(file: &SourceFile) -> (TokenVector, TokenLineIndex) {
    let mut vector = TokenVector::default();
    let mut index = TokenLineIndex::default();
    for (i, line) in file.lines.iter().enumerate() {
        for tok in tokenize_line(line) {
            *vector.counts.entry(tok.to_string()).or_insert(0) += 1;
            index
                .occurrences
                .entry(tok.to_string())
                .or_default()
                .insert(i + 1);
        }
    }
    (vector, index)
}

/// Tokens present in at least `min_files` distinct files, sorted.
pub fn corpus_vocabulary(corpus: &SourceCorpus, min_files: usize) -> Vec<String> {
    let min_files = min_files.max(1);
    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    for file in &corpus.files {
        let distinct: BTreeSet<&str> = file.lines.iter().flat_map(|l| tokenize_line(l)).collect();
        for tok in distinct {
            *doc_freq.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    doc_freq
        .into_iter()
        .filter(|(_, n)| *n >= min_files)
        .map(|(t, _)| t)
        .collect()
}

/// Token-count table over `vocabulary` for every file in the corpus, in a
/// shape the forest can train on directly.
pub fn token_dataset(corpus: &SourceCorpus, vocabulary: &[String]) -> TabularDataset {
    let records = corpus
        .files
        .iter()
        .map(|f| MetricRecord {
            file_id: f.file_id.clone(),
            features: build_token_features(f).0.to_features(vocabulary),
            label: f.label,
        })
        .collect();
    TabularDataset {
        feature_names: vocabulary.to_vec(),
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn file(lines: &[&str]) -> SourceFile {
        SourceFile::from_text("f", &lines.join("\n"))
    }

    #[test]
    fn splits_and_drops_integers() {
        assert_eq!(
            tokenize_line("int foo_bar = baz(2);"),
            ["int", "foo_bar", "baz"]
        );
        assert!(tokenize_line("").is_empty());
        assert_eq!(tokenize_line("x+x"), ["x", "x"]);
        assert_eq!(tokenize_line("utf8 = 0x1F + 42"), ["utf8", "0x1F"]);
        assert_eq!(tokenize_line("Foo foo"), ["Foo", "foo"]);
    }

    #[test]
    fn counts_and_index() {
        let (v, idx) = build_token_features(&file(&["a b", "b c"]));
        assert_eq!(
            v.counts,
            BTreeMap::from([("a".into(), 1), ("b".into(), 2), ("c".into(), 1)])
        );
        assert_eq!(idx.occurrences["a"], BTreeSet::from([1]));
        assert_eq!(idx.occurrences["b"], BTreeSet::from([1, 2]));
        assert_eq!(idx.occurrences["c"], BTreeSet::from([2]));
    }

    #[test]
    fn empty_file_and_repeated_token() {
        let (v, idx) = build_token_features(&file(&[]));
        assert!(v.is_empty() && idx.occurrences.is_empty());
        let (v, idx) = build_token_features(&file(&["x x x"]));
        assert_eq!(v.counts["x"], 3);
        assert_eq!(idx.occurrences["x"], BTreeSet::from([1]));
    }

    #[test]
    fn vocabulary_respects_min_files() {
        let corpus = SourceCorpus::new(vec![
            SourceFile::from_text("1", "a b"),
            SourceFile::from_text("2", "a"),
            SourceFile::from_text("3", "a a"),
        ])
        .unwrap();
        assert_eq!(corpus_vocabulary(&corpus, 2), ["a"]);
        assert_eq!(corpus_vocabulary(&corpus, 1), ["a", "b"]);
        assert!(corpus_vocabulary(&SourceCorpus::default(), 1).is_empty());
    }

    proptest! {
        #[test]
        fn counts_match_emitted_tokens(lines in prop::collection::vec("[a-c0-9 _+(){}]{0,20}", 0..8)) {
            let f = SourceFile::from_text("p", &lines.join("\n"));
            let (v, idx) = build_token_features(&f);
            let emitted: usize = f.lines.iter().map(|l| tokenize_line(l).len()).sum();
            prop_assert_eq!(v.total(), emitted);
            prop_assert!(v.counts.keys().eq(idx.occurrences.keys()));
            prop_assert!(v.counts.values().all(|&c| c >= 1));
        }
    }
}
