//! Histogram gradient-boosted regression trees with a softmax objective.
//!
//! Each round fits one tree per class to the gradient / hessian of the
//! softmax cross-entropy at the current scores. Features are pre-binned into
//! at most `bins` buckets; a split at bucket `b` sends `x <= edges[b]` left.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training_data, softmax_in_place};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Maximum histogram buckets per feature (2..=256).
    pub bins: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 100,
            max_depth: 6,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            lambda: 1.0,
            bins: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub class_labels: Vec<String>,
    pub num_features: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub rounds: usize,
    /// Bucket upper edges per feature.
    pub bin_edges: Vec<Vec<f64>>,
    /// `trees[round][class]`; leaf values already include the learning rate.
    pub trees: Vec<Vec<Tree>>,
}

impl GbdtModel {
    pub fn raw_scores(&self, row: &[f64]) -> Vec<f64> {
        let k = self.class_labels.len();
        let mut s = vec![0.0; k];
        for round in &self.trees {
            for (c, t) in round.iter().enumerate() {
                s[c] += t.predict(row);
            }
        }
        s
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.num_features {
            return Err(Error::Shape {
                expected: self.num_features,
                found: x.cols(),
            });
        }
        let k = self.class_labels.len();
        let mut out = Matrix::zeros(x.rows(), k);
        for i in 0..x.rows() {
            let mut s = self.raw_scores(x.row(i));
            softmax_in_place(&mut s);
            out.row_mut(i).copy_from_slice(&s);
        }
        Ok(out)
    }

    /// Keeps only the first `rounds` boosting rounds.
    pub fn truncated(&self, rounds: usize) -> GbdtModel {
        let mut m = self.clone();
        m.trees.truncate(rounds);
        m.rounds = m.trees.len();
        m
    }
}

/// Upper bucket edges for one feature. With at most `max_bins` distinct
/// values every value gets its own bucket; otherwise edges are quantiles.
pub fn bin_edges(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() <= max_bins {
        v.pop();
        return v;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..max_bins)
        .map(|i| sorted[(i * n / max_bins).min(n - 1)])
        .collect();
    edges.dedup();
    if edges.last() == sorted.last() {
        edges.pop();
    }
    edges
}

fn bucket(edges: &[f64], x: f64) -> u8 {
    edges.partition_point(|&e| e < x) as u8
}

/// Column-major bucket indices.
struct Binned {
    cols: Vec<Vec<u8>>,
    nbins: Vec<usize>,
}

#[derive(Clone, Copy, Default)]
struct GH {
    g: f64,
    h: f64,
}

struct Params {
    max_depth: usize,
    min_child_weight: f64,
    lambda: f64,
    learning_rate: f64,
}

fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

struct BestSplit {
    gain: f64,
    feature: usize,
    bucket: usize,
}

fn histograms(binned: &Binned, rows: &[usize], gh: &[GH]) -> Vec<Vec<GH>> {
    binned
        .cols
        .par_iter()
        .zip(&binned.nbins)
        .map(|(col, &nb)| {
            let mut hist = vec![GH::default(); nb];
            for &r in rows {
                let b = &mut hist[col[r] as usize];
                b.g += gh[r].g;
                b.h += gh[r].h;
            }
            hist
        })
        .collect()
}

fn best_split(hist: &[Vec<GH>], total: GH, p: &Params) -> Option<BestSplit> {
    let parent = score(total.g, total.h, p.lambda);
    let mut best: Option<BestSplit> = None;
    for (f, h) in hist.iter().enumerate() {
        let mut left = GH::default();
        for b in 0..h.len().saturating_sub(1) {
            left.g += h[b].g;
            left.h += h[b].h;
            let right = GH {
                g: total.g - left.g,
                h: total.h - left.h,
            };
            if left.h < p.min_child_weight || right.h < p.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(left.g, left.h, p.lambda) + score(right.g, right.h, p.lambda) - parent);
            if gain > 1e-12 && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                best = Some(BestSplit { gain, feature: f, bucket: b });
            }
        }
    }
    best
}

fn grow(
    binned: &Binned,
    edges: &[Vec<f64>],
    rows: Vec<usize>,
    gh: &[GH],
    depth: usize,
    p: &Params,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let total = rows.iter().fold(GH::default(), |a, &r| GH {
        g: a.g + gh[r].g,
        h: a.h + gh[r].h,
    });
    let me = nodes.len();
    nodes.push(TreeNode::Leaf {
        value: p.learning_rate * leaf_weight(total.g, total.h, p.lambda),
    });
    if depth >= p.max_depth || rows.len() < 2 {
        return me;
    }
    let hist = histograms(binned, &rows, gh);
    let Some(split) = best_split(&hist, total, p) else {
        return me;
    };
    let col = &binned.cols[split.feature];
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| (col[i] as usize) <= split.bucket);
    let left = grow(binned, edges, l, gh, depth + 1, p, nodes);
    let right = grow(binned, edges, r, gh, depth + 1, p, nodes);
    nodes[me] = TreeNode::Split {
        feature: split.feature,
        threshold: edges[split.feature][split.bucket],
        left,
        right,
    };
    me
}

pub fn train_gbdt(x: &Matrix, y: &[usize], class_labels: &[String], config: &GbdtConfig) -> Result<GbdtModel> {
    let k = class_labels.len();
    check_training_data(x, y, k)?;
    if !(2..=256).contains(&config.bins) {
        return Err(Error::invalid("bins must be in 2..=256"));
    }
    if !(config.learning_rate > 0.0 && config.lambda >= 0.0 && config.min_child_weight >= 0.0) {
        return Err(Error::invalid("invalid boosting hyperparameters"));
    }
    let n = x.rows();
    let edges: Vec<Vec<f64>> = (0..x.cols())
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| x.get(i, j)).collect();
            bin_edges(&col, config.bins)
        })
        .collect();
    let binned = Binned {
        cols: (0..x.cols())
            .into_par_iter()
            .map(|j| (0..n).map(|i| bucket(&edges[j], x.get(i, j))).collect())
            .collect(),
        nbins: edges.iter().map(|e| e.len() + 1).collect(),
    };
    let params = Params {
        max_depth: config.max_depth,
        min_child_weight: config.min_child_weight,
        lambda: config.lambda,
        learning_rate: config.learning_rate,
    };
    let mut scores = vec![0.0; n * k];
    let mut trees = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let mut probs = scores.clone();
        for row in probs.chunks_mut(k) {
            softmax_in_place(row);
        }
        let round: Vec<Tree> = (0..k)
            .map(|c| {
                let gh: Vec<GH> = (0..n)
                    .map(|i| {
                        let p = probs[i * k + c];
                        let target = if y[i] == c { 1.0 } else { 0.0 };
                        GH {
                            g: p - target,
                            h: (p * (1.0 - p)).max(1e-16),
                        }
                    })
                    .collect();
                let mut nodes = Vec::new();
                grow(&binned, &edges, (0..n).collect(), &gh, 0, &params, &mut nodes);
                Tree { nodes }
            })
            .collect();
        for i in 0..n {
            let row = x.row(i);
            for (c, t) in round.iter().enumerate() {
                scores[i * k + c] += t.predict(row);
            }
        }
        trees.push(round);
    }
    Ok(GbdtModel {
        class_labels: class_labels.to_vec(),
        num_features: x.cols(),
        learning_rate: config.learning_rate,
        max_depth: config.max_depth,
        rounds: config.rounds,
        bin_edges: edges,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_distinct_values_get_own_bins() {
        assert_eq!(bin_edges(&[3.0, 1.0, 2.0, 1.0], 256), vec![1.0, 2.0]);
        assert_eq!(bucket(&[1.0, 2.0], 1.0), 0);
        assert_eq!(bucket(&[1.0, 2.0], 1.5), 1);
        assert_eq!(bucket(&[1.0, 2.0], 3.0), 2);
    }

    #[test]
    fn many_values_are_capped() {
        let v: Vec<f64> = (0..10_000).map(f64::from).collect();
        let e = bin_edges(&v, 256);
        assert!(e.len() <= 255);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tree_count_is_rounds_times_classes() {
        let x = Matrix::from_vec(6, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let labels: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let cfg = GbdtConfig { rounds: 4, ..Default::default() };
        let m = train_gbdt(&x, &[0, 0, 1, 1, 2, 2], &labels, &cfg).unwrap();
        assert_eq!(m.trees.len() * m.trees[0].len(), 12);
        let p = m.predict_proba(&x).unwrap();
        for row in p.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
