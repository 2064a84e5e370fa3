use serde::{Deserialize, Serialize};

use crate::cue::NUM_CUES;
use crate::error::{Error, Result};
use crate::training::compute_metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            max_depth: 4,
            min_leaf: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n: usize,
        /// Drop in summed squared error achieved by this split.
        gain: f64,
    },
    Leaf {
        value: f64,
        n: usize,
        /// Variance of the targets reaching the leaf.
        impurity: f64,
    },
}

/// Regression tree; node 0 is the root. Samples with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTree {
    pub nodes: Vec<TreeNode>,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdiImportance {
    pub weights: [f64; NUM_CUES],
    /// Set when the tree is a single leaf and every weight is zero.
    pub undefined: bool,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
    split_at: usize,
}

fn sse(y: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    idx.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

fn best_split(x: &[[f64; NUM_CUES]], y: &[f64], idx: &mut [usize], min_leaf: usize) -> Option<Best> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
    let parent = total_sq - total * total / n as f64;
    let mut best: Option<Best> = None;
    for f in 0..NUM_CUES {
        idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left = 0.0;
        let mut left_sq = 0.0;
        for k in 1..n {
            let yi = y[idx[k - 1]];
            left += yi;
            left_sq += yi * yi;
            let (lo, hi) = (x[idx[k - 1]][f], x[idx[k]][f]);
            if k < min_leaf || n - k < min_leaf || lo == hi {
                continue;
            }
            let (nl, nr) = (k as f64, (n - k) as f64);
            let right = total - left;
            let right_sq = total_sq - left_sq;
            let child = (left_sq - left * left / nl) + (right_sq - right * right / nr);
            let gain = parent - child;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Best {
                    feature: f,
                    threshold: lo + (hi - lo) / 2.0,
                    gain,
                    split_at: k,
                });
            }
        }
    }
    best
}

/// Greedy CART on squared error. A node becomes a leaf at `max_depth`, when
/// either child would hold fewer than `min_leaf` samples, or when no split
/// lowers the error.
pub fn fit_surrogate(x: &[[f64; NUM_CUES]], y: &[f64], config: &SurrogateConfig) -> Result<SurrogateTree> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if config.min_leaf == 0 || x.len() < 2 * config.min_leaf {
        return Err(Error::Validation(format!(
            "surrogate needs at least {} samples, got {}",
            2 * config.min_leaf.max(1),
            x.len()
        )));
    }
    let mut tree = SurrogateTree {
        nodes: Vec::new(),
        n_train: x.len(),
    };
    let mut idx: Vec<usize> = (0..x.len()).collect();
    grow(&mut tree, x, y, &mut idx, 0, config);
    Ok(tree)
}

fn grow(
    tree: &mut SurrogateTree,
    x: &[[f64; NUM_CUES]],
    y: &[f64],
    idx: &mut [usize],
    depth: usize,
    config: &SurrogateConfig,
) -> usize {
    let id = tree.nodes.len();
    let n = idx.len();
    let node_sse = sse(y, idx);
    let leaf = TreeNode::Leaf {
        value: idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64,
        n,
        impurity: node_sse / n as f64,
    };
    tree.nodes.push(leaf);
    let first = y[idx[0]];
    if depth >= config.max_depth || idx.iter().all(|&i| y[i] == first) {
        return id;
    }
    let Some(best) = best_split(x, y, idx, config.min_leaf) else {
        return id;
    };
    // Reject gains that are rounding noise in the running sums.
    if best.gain <= 1e-12 * node_sse.max(f64::MIN_POSITIVE) {
        return id;
    }
    let f = best.feature;
    idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
    let (l_idx, r_idx) = idx.split_at_mut(best.split_at);
    let left = grow(tree, x, y, l_idx, depth + 1, config);
    let right = grow(tree, x, y, r_idx, depth + 1, config);
    tree.nodes[id] = TreeNode::Split {
        feature: f,
        threshold: best.threshold,
        left,
        right,
        n,
        gain: best.gain,
    };
    id
}

impl SurrogateTree {
    pub fn predict(&self, x: &[f64; NUM_CUES]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// R² of the tree against `y` on rows `x`; `None` when `y` is constant.
    pub fn fidelity(&self, x: &[[f64; NUM_CUES]], y: &[f64]) -> Result<Option<f64>> {
        let preds: Vec<f64> = x.iter().map(|r| self.predict(r)).collect();
        Ok(compute_metrics(&preds, y)?.r2)
    }

    pub fn mdi(&self) -> MdiImportance {
        let mut w = [0.0; NUM_CUES];
        for node in &self.nodes {
            if let TreeNode::Split { feature, gain, .. } = node {
                w[*feature] += gain;
            }
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return MdiImportance {
                weights: [0.0; NUM_CUES],
                undefined: true,
            };
        }
        MdiImportance {
            weights: w.map(|g| g / total),
            undefined: false,
        }
    }
}
