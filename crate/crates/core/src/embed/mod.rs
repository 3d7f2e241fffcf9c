//! node2vec: second-order biased random walks over a [`MultimodalGraph`]
//! followed by skip-gram training on the walks.

pub mod skipgram;

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BlockKind, Dataset, FeatureBlock};
use crate::error::{Error, Result};
use crate::graph::{report_node_id, MultimodalGraph};
use crate::matrix::Matrix;
use crate::rng;

use skipgram::{train_skipgram, SkipGramConfig, TrainingStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walks_per_node: usize,
    /// Nodes per walk, including the start node.
    pub walk_length: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p: 1.0,
            q: 1.0,
            walks_per_node: 10,
            walk_length: 80,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0 && self.p.is_finite() && self.q.is_finite()) {
            return Err(Error::invalid("walk parameters p and q must be positive"));
        }
        if self.walks_per_node < 1 || self.walk_length < 2 {
            return Err(Error::invalid("need walks_per_node >= 1 and walk_length >= 2"));
        }
        Ok(())
    }
}

/// Search bias for stepping from `curr` to `next` after arriving from `prev`.
fn bias(graph: &MultimodalGraph, prev: usize, next: usize, p: f64, q: f64) -> f64 {
    if next == prev {
        1.0 / p
    } else if graph.has_edge(prev, next) {
        1.0
    } else {
        1.0 / q
    }
}

/// Normalized probabilities of each neighbor of `curr`, given the walk came
/// from `prev`, in adjacency order.
pub fn transition_distribution(
    graph: &MultimodalGraph,
    prev: usize,
    curr: usize,
    p: f64,
    q: f64,
) -> Result<Vec<(usize, f64)>> {
    let nbrs = graph.neighbors(curr);
    if nbrs.is_empty() {
        return Err(Error::DeadEnd(graph.nodes()[curr].id.clone()));
    }
    if !graph.has_edge(prev, curr) {
        return Err(Error::invalid(format!(
            "{} is not adjacent to {}",
            graph.nodes()[prev].id,
            graph.nodes()[curr].id
        )));
    }
    let scores: Vec<(usize, f64)> = nbrs
        .iter()
        .map(|&(x, w)| (x, w * bias(graph, prev, x, p, q)))
        .collect();
    let total: f64 = scores.iter().map(|s| s.1).sum();
    Ok(scores.into_iter().map(|(x, s)| (x, s / total)).collect())
}

/// Draws from unnormalized scores by cumulative-sum inversion.
fn draw<R: Rng>(r: &mut R, items: impl Iterator<Item = (usize, f64)> + Clone) -> usize {
    let total: f64 = items.clone().map(|i| i.1).sum();
    let x = r.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (n, s) in items {
        acc += s;
        last = n;
        if x < acc {
            return n;
        }
    }
    last
}

/// One walk from `start`, seeded independently of every other walk.
pub fn walk_from(graph: &MultimodalGraph, start: usize, config: &WalkConfig, walk_seed: u64) -> Vec<usize> {
    let mut r = rng::rng(walk_seed);
    let mut walk = Vec::with_capacity(config.walk_length);
    walk.push(start);
    while walk.len() < config.walk_length {
        let curr = *walk.last().expect("walk starts non-empty");
        let nbrs = graph.neighbors(curr);
        if nbrs.is_empty() {
            break;
        }
        let next = if walk.len() == 1 {
            draw(&mut r, nbrs.iter().copied())
        } else {
            let prev = walk[walk.len() - 2];
            draw(
                &mut r,
                nbrs.iter()
                    .map(|&(x, w)| (x, w * bias(graph, prev, x, config.p, config.q))),
            )
        };
        walk.push(next);
    }
    walk
}

/// Seed of walk number `round` started at `node`.
pub fn walk_seed(seed: u64, node: usize, round: usize) -> u64 {
    let base = rng::derive_seed(seed, "walks");
    rng::derive_index(rng::derive_index(base, node as u64), round as u64)
}

/// `walks_per_node` rounds; in each round one walk per node in index order.
pub fn generate_walks(graph: &MultimodalGraph, config: &WalkConfig) -> Result<Vec<Vec<usize>>> {
    config.check()?;
    if graph.node_count() == 0 {
        return Err(Error::invalid("cannot walk an empty graph"));
    }
    let n = graph.node_count();
    let walks = (0..config.walks_per_node * n)
        .into_par_iter()
        .map(|k| {
            let (round, node) = (k / n, k % n);
            walk_from(graph, node, config, walk_seed(config.seed, node, round))
        })
        .collect();
    Ok(walks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    node_ids: Vec<String>,
    matrix: Matrix,
    index: HashMap<String, usize>,
    pub stats: TrainingStats,
}

impl NodeEmbeddings {
    pub fn new(node_ids: Vec<String>, matrix: Matrix) -> Result<Self> {
        if node_ids.len() != matrix.rows() {
            return Err(Error::invalid("embedding rows do not match node ids"));
        }
        if !matrix.all_finite() {
            return Err(Error::invalid("non-finite embedding value"));
        }
        let index = node_ids.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(NodeEmbeddings {
            node_ids,
            matrix,
            index,
            stats: TrainingStats::default(),
        })
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dims(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vector(&self, node_id: &str) -> Option<&[f64]> {
        self.index.get(node_id).map(|&i| self.matrix.row(i))
    }
}

/// Walks plus skip-gram.
pub fn node2vec(graph: &MultimodalGraph, walks: &WalkConfig, skipgram: &SkipGramConfig) -> Result<NodeEmbeddings> {
    let sequences = generate_walks(graph, walks)?;
    let (matrix, stats) = train_skipgram(&sequences, graph.node_count(), skipgram)?;
    let ids = graph.nodes().iter().map(|n| n.id.clone()).collect();
    let mut emb = NodeEmbeddings::new(ids, matrix)?;
    emb.stats = stats;
    Ok(emb)
}

/// One row per report: the vector of its report node.
pub fn report_embedding_block(name: &str, embeddings: &NodeEmbeddings, dataset: &Dataset) -> Result<FeatureBlock> {
    let dims = embeddings.dims();
    let mut m = Matrix::zeros(dataset.len(), dims);
    let mut missing = Vec::new();
    for (i, r) in dataset.reports().iter().enumerate() {
        match embeddings.vector(&report_node_id(&r.id)) {
            Some(v) => m.row_mut(i).copy_from_slice(v),
            None => missing.push(r.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingEmbedding(missing));
    }
    let cols = (0..dims).map(|d| format!("{name}_{d}")).collect();
    FeatureBlock::new(name, BlockKind::Embedding, dataset.ids(), m, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, NodeKind};

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> MultimodalGraph {
        let nodes = (0..n)
            .map(|i| Node { id: format!("n{i}"), kind: NodeKind::Word })
            .collect();
        MultimodalGraph::from_parts(nodes, edges).unwrap()
    }

    #[test]
    fn path_example() {
        // A - B - C, at B coming from A.
        let g = graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let d = transition_distribution(&g, 0, 1, 2.0, 0.5).unwrap();
        assert_eq!(d, vec![(0, 0.2), (2, 0.8)]);
    }

    #[test]
    fn triangle_is_uniform() {
        let g = graph(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]);
        let d = transition_distribution(&g, 0, 1, 1.0, 1.0).unwrap();
        assert_eq!(d, vec![(0, 0.5), (2, 0.5)]);
    }

    #[test]
    fn isolated_node_walks_have_length_one() {
        let g = graph(3, &[(0, 1, 1.0)]);
        let cfg = WalkConfig { walks_per_node: 2, walk_length: 5, ..Default::default() };
        let walks = generate_walks(&g, &cfg).unwrap();
        assert_eq!(walks.len(), 6);
        assert!(walks.iter().filter(|w| w[0] == 2).all(|w| w.len() == 1));
    }

    #[test]
    fn two_node_walks_alternate() {
        let g = graph(2, &[(0, 1, 3.0)]);
        let cfg = WalkConfig { walks_per_node: 1, walk_length: 6, p: 0.3, q: 7.0, seed: 4 };
        for w in generate_walks(&g, &cfg).unwrap() {
            for (i, &n) in w.iter().enumerate() {
                assert_eq!(n, (w[0] + i) % 2);
            }
        }
    }

    #[test]
    fn dead_end_is_an_error() {
        let g = graph(2, &[]);
        assert!(matches!(transition_distribution(&g, 0, 1, 1.0, 1.0), Err(Error::DeadEnd(_))));
    }

    #[test]
    fn rejects_bad_walk_config() {
        let g = graph(2, &[(0, 1, 1.0)]);
        let cfg = WalkConfig { walk_length: 1, ..Default::default() };
        assert!(generate_walks(&g, &cfg).is_err());
        let cfg = WalkConfig { p: 0.0, ..Default::default() };
        assert!(generate_walks(&g, &cfg).is_err());
    }
}
