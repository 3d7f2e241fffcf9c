mod common;

use common::{random_graph, rng, walk_frequency_deviation};
use rand::Rng;
use urbanfuse::embed::skipgram::SkipGramConfig;
use urbanfuse::embed::{generate_walks, node2vec, report_embedding_block, transition_distribution, walk_from, WalkConfig};
use urbanfuse::graph::{report_node_id, MultimodalGraph, Node, NodeKind};
use urbanfuse::Error;

fn graph(n: usize, edges: &[(usize, usize, f64)]) -> MultimodalGraph {
    let nodes = (0..n)
        .map(|i| Node {
            id: format!("n{i}"),
            kind: NodeKind::Word,
        })
        .collect();
    MultimodalGraph::from_parts(nodes, edges).unwrap()
}

#[test]
fn path_example_is_exact() {
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
fn distributions_sum_to_one_and_ignore_weight_scale() {
    for seed in 0..20 {
        let g = random_graph(seed, 12, 15);
        let scaled_edges: Vec<(usize, usize, f64)> = g.edges().into_iter().map(|(u, v, w)| (u, v, w * 3.7)).collect();
        let scaled = graph(12, &scaled_edges);
        let mut r = rng(seed);
        for _ in 0..10 {
            let curr = r.gen_range(0..12);
            let nb = g.neighbors(curr);
            let prev = nb[r.gen_range(0..nb.len())].0;
            let (p, q) = (r.gen_range(0.2..4.0), r.gen_range(0.2..4.0));
            let a = transition_distribution(&g, prev, curr, p, q).unwrap();
            let b = transition_distribution(&scaled, prev, curr, p, q).unwrap();
            assert!((a.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.0, y.0);
                assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forced_and_dead_end_walks() {
    let cfg = WalkConfig {
        walk_length: 7,
        ..Default::default()
    };
    let pair = graph(2, &[(0, 1, 1.0)]);
    assert_eq!(walk_from(&pair, 0, &cfg, 3), vec![0, 1, 0, 1, 0, 1, 0]);
    let lonely = graph(3, &[(0, 1, 1.0)]);
    assert_eq!(walk_from(&lonely, 2, &cfg, 3), vec![2]);
    assert!(matches!(transition_distribution(&lonely, 0, 2, 1.0, 1.0), Err(Error::DeadEnd(_))));
}

#[test]
fn walks_follow_edges_and_are_reproducible() {
    let g = random_graph(4, 20, 30);
    let cfg = WalkConfig {
        p: 0.5,
        q: 2.0,
        walks_per_node: 3,
        walk_length: 15,
        seed: 9,
    };
    let walks = generate_walks(&g, &cfg).unwrap();
    assert_eq!(walks.len(), 60);
    for w in &walks {
        assert_eq!(w.len(), 15);
        for pair in w.windows(2) {
            assert!(g.has_edge(pair[0], pair[1]));
        }
    }
    assert_eq!(walks, generate_walks(&g, &cfg).unwrap());
}

#[test]
fn ten_node_monte_carlo() {
    let g = random_graph(77, 10, 12);
    let curr = (0..10).max_by_key(|&v| g.neighbors(v).len()).unwrap();
    let prev = g.neighbors(curr)[0].0;
    let dev = walk_frequency_deviation(&g, prev, curr, 2.0, 0.5, 100_000);
    assert!(dev <= 0.02, "deviation {dev}");
}

#[test]
fn embeddings_are_deterministic_and_feed_blocks() {
    let g = random_graph(8, 15, 20);
    let walk = WalkConfig {
        walks_per_node: 4,
        walk_length: 10,
        seed: 1,
        ..Default::default()
    };
    let sg = SkipGramConfig {
        dims: 16,
        window: 3,
        epochs: 2,
        seed: 2,
        ..Default::default()
    };
    let a = node2vec(&g, &walk, &sg).unwrap();
    let b = node2vec(&g, &walk, &sg).unwrap();
    assert_eq!(a.matrix(), b.matrix());
    assert_eq!(a.dims(), 16);

    let ids: Vec<String> = (0..15).map(|i| format!("n{i}")).collect();
    let mut report_nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, _) in ids.iter().enumerate().take(3) {
        report_nodes.push(Node {
            id: report_node_id(&format!("r{i}")),
            kind: NodeKind::Report,
        });
        edges.push((i, 3, 1.0));
    }
    report_nodes.push(Node {
        id: "hour:1".into(),
        kind: NodeKind::Hour,
    });
    let rg = MultimodalGraph::from_parts(report_nodes, &edges).unwrap();
    let emb = node2vec(&rg, &walk, &sg).unwrap();
    let pts = [urbanfuse::dataset::LatLon::new(52.0, 4.0); 3];
    let ds = common::dataset_at(&pts);
    let block = report_embedding_block("graph", &emb, &ds).unwrap();
    assert_eq!(block.width(), 16);
    for i in 0..3 {
        assert_eq!(block.matrix().row(i), emb.vector(&report_node_id(&format!("r{i}"))).unwrap());
    }
    let more = common::dataset_at(&[urbanfuse::dataset::LatLon::new(52.0, 4.0); 4]);
    assert!(matches!(report_embedding_block("graph", &emb, &more), Err(Error::MissingEmbedding(_))));
}
