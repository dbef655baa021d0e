//! Depth-limited CART classifier (Gini impurity) for the static-feature router.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_DEPTH: usize = 4;
pub const DEFAULT_MIN_LEAF: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        /// Route local?
        local: bool,
        samples: usize,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub n_features: usize,
}

/// Gini impurity of a node with `pos` positives out of `n`.
pub fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Majority label; ties go remote.
fn majority(pos: usize, n: usize) -> bool {
    2 * pos > n
}

#[derive(Debug, Clone, Copy)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Sample-weighted Gini impurity of the two children.
    pub impurity: f64,
}

/// Best axis-aligned split over `idx`. Candidates are midpoints between
/// consecutive distinct values; ties keep the lowest feature index, then the
/// lowest threshold.
#[allow(clippy::needless_range_loop)]
pub fn best_split(
    samples: &[Vec<f64>],
    labels: &[bool],
    idx: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = idx.len();
    let n_features = samples.first().map_or(0, |s| s.len());
    let total_pos = idx.iter().filter(|&&i| labels[i]).count();
    let mut best: Option<SplitChoice> = None;
    for feature in 0..n_features {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| samples[a][feature].total_cmp(&samples[b][feature]).then(a.cmp(&b)));
        let mut left_pos = 0;
        for cut in 1..n {
            if labels[order[cut - 1]] {
                left_pos += 1;
            }
            let lo = samples[order[cut - 1]][feature];
            let hi = samples[order[cut]][feature];
            if lo == hi || cut < min_leaf || n - cut < min_leaf {
                continue;
            }
            let impurity = (cut as f64 * gini(left_pos, cut)
                + (n - cut) as f64 * gini(total_pos - left_pos, n - cut))
                / n as f64;
            if best.is_none_or(|b| impurity < b.impurity - 1e-12) {
                best = Some(SplitChoice {
                    feature,
                    threshold: lo + (hi - lo) / 2.0,
                    impurity,
                });
            }
        }
    }
    best
}

impl DecisionTree {
    pub fn fit(
        samples: &[Vec<f64>],
        labels: &[bool],
        max_depth: usize,
        min_leaf: usize,
    ) -> Result<DecisionTree> {
        if samples.is_empty() {
            return Err(Error::Argument("cannot train a tree on zero samples".into()));
        }
        if samples.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let n_features = samples[0].len();
        if samples.iter().any(|s| s.len() != n_features) {
            return Err(Error::Validation("samples have differing dimensions".into()));
        }
        let idx: Vec<usize> = (0..samples.len()).collect();
        Ok(DecisionTree {
            root: grow(samples, labels, &idx, max_depth, min_leaf.max(1)),
            n_features,
        })
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { local, .. } => return *local,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn depth(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + depth(left).max(depth(right)),
            }
        }
        depth(&self.root)
    }
}

fn grow(samples: &[Vec<f64>], labels: &[bool], idx: &[usize], depth_left: usize, min_leaf: usize) -> TreeNode {
    let pos = idx.iter().filter(|&&i| labels[i]).count();
    let leaf = TreeNode::Leaf {
        local: majority(pos, idx.len()),
        samples: idx.len(),
    };
    if depth_left == 0 || pos == 0 || pos == idx.len() {
        return leaf;
    }
    let Some(split) = best_split(samples, labels, idx, min_leaf) else {
        return leaf;
    };
    if split.impurity >= gini(pos, idx.len()) - 1e-12 {
        return leaf;
    }
    let (left, right): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| samples[i][split.feature] <= split.threshold);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(samples, labels, &left, depth_left - 1, min_leaf)),
        right: Box::new(grow(samples, labels, &right, depth_left - 1, min_leaf)),
    }
}
