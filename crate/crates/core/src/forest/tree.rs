use rand::Rng;
use serde::{Deserialize, Serialize};

/// One node of a flattened binary tree. The root is `nodes[0]`; a sample goes
/// left when `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Weighted Gini decrease of this split, in sample-count units.
        impurity_decrease: f64,
    },
    Leaf {
        defective_fraction: f64,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Index of the leaf `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf {
                defective_fraction, ..
            } => *defective_fraction,
            Node::Split { .. } => unreachable!("leaf_index stops at a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub(crate) fn max_feature_index(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub mtry: usize,
}

/// Grows a Gini tree over `samples` (row indices, repeats allowed).
///
/// Thresholds are midpoints between consecutive distinct values. Among
/// equally good splits the lowest feature index wins, then the lowest
/// threshold.
pub(crate) fn grow_tree<R: Rng>(
    rows: &[&[f64]],
    labels: &[u8],
    samples: Vec<usize>,
    params: GrowParams,
    rng: &mut R,
) -> DecisionTree {
    let mut grower = Grower {
        rows,
        labels,
        params,
        n_features: rows.first().map_or(0, |r| r.len()),
        nodes: Vec::new(),
    };
    grower.grow(samples, 0, rng);
    DecisionTree {
        nodes: grower.nodes,
    }
}

struct Grower<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [u8],
    params: GrowParams,
    n_features: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Sum of squared class counts over size; larger is purer.
fn purity(pos: usize, n: usize) -> f64 {
    let p = pos as f64;
    let q = (n - pos) as f64;
    (p * p + q * q) / n as f64
}

pub fn gini_from_counts(pos: usize, n: usize) -> f64 {
    let p = pos as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

impl Grower<'_> {
    fn grow<R: Rng>(&mut self, samples: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.labels[i] == 1).count();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            defective_fraction: pos as f64 / n as f64,
            samples: n,
        });

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || pos == 0 || pos == n || n < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&samples, rng) else {
            return id;
        };
        let decrease = best.score - purity(pos, n);
        if decrease <= 1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.rows[i][best.feature] <= best.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            impurity_decrease: decrease,
        };
        id
    }

    fn candidate_features<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        if self.params.mtry >= self.n_features {
            return (0..self.n_features).collect();
        }
        let mut feats = rand::seq::index::sample(rng, self.n_features, self.params.mtry).into_vec();
        feats.sort_unstable();
        feats
    }

    fn best_split<R: Rng>(&self, samples: &[usize], rng: &mut R) -> Option<BestSplit> {
        let n = samples.len();
        let total_pos = samples.iter().filter(|&&i| self.labels[i] == 1).count();
        let min_leaf = self.params.min_leaf;
        let mut best: Option<BestSplit> = None;
        let mut column: Vec<(f64, u8)> = Vec::with_capacity(n);
        for f in self.candidate_features(rng) {
            column.clear();
            column.extend(samples.iter().map(|&i| (self.rows[i][f], self.labels[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += column[k - 1].1 as usize;
                let (lo, hi) = (column[k - 1].0, column[k].0);
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let score = purity(left_pos, k) + purity(total_pos - left_pos, n - k);
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi || !threshold.is_finite() {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grow(rows: &[Vec<f64>], labels: &[u8], params: GrowParams) -> DecisionTree {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        grow_tree(
            &refs,
            labels,
            (0..rows.len()).collect(),
            params,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
    }

    #[test]
    fn splits_at_midpoint() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let labels: Vec<u8> = (0..10).map(|i| u8::from(i >= 6)).collect();
        let tree = grow(
            &rows,
            &labels,
            GrowParams {
                min_leaf: 1,
                max_depth: None,
                mtry: 1,
            },
        );
        match &tree.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 5.5);
            }
            n => panic!("expected split, got {n:?}"),
        }
        assert_eq!(tree.predict(&[2.0]), 0.0);
        assert_eq!(tree.predict(&[8.0]), 1.0);
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // both columns separate the labels identically
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, i as f64 * 10.0]).collect();
        let labels: Vec<u8> = (0..8).map(|i| u8::from(i >= 4)).collect();
        let tree = grow(
            &rows,
            &labels,
            GrowParams {
                min_leaf: 1,
                max_depth: None,
                mtry: 2,
            },
        );
        assert!(matches!(tree.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn min_leaf_is_respected() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i == 19)).collect();
        let tree = grow(
            &rows,
            &labels,
            GrowParams {
                min_leaf: 5,
                max_depth: None,
                mtry: 1,
            },
        );
        for node in &tree.nodes {
            if let Node::Leaf { samples, .. } = node {
                assert!(*samples >= 5);
            }
        }
    }

    #[test]
    fn max_depth_caps_growth() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let labels: Vec<u8> = (0..64).map(|i| (i % 2) as u8).collect();
        let tree = grow(
            &rows,
            &labels,
            GrowParams {
                min_leaf: 1,
                max_depth: Some(2),
                mtry: 1,
            },
        );
        assert!(tree.depth() <= 2);
    }
}
