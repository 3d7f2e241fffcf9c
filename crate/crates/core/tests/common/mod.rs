//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanfuse::dataset::LatLon;
use urbanfuse::embed::{transition_distribution, walk_from, WalkConfig};
use urbanfuse::geo::{haversine_m, ABSENT_DISTANCE_M};
use urbanfuse::graph::{MultimodalGraph, Node, NodeKind};
use urbanfuse::ingest::GeoObject;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- spatial

/// Random objects and query points in a box a few kilometres wide. Some
/// points are clustered so that the small radii see non-zero counts.
pub fn random_geo_instance(seed: u64, objects: usize, types: usize, queries: usize) -> (Vec<GeoObject>, Vec<LatLon>) {
    let mut r = rng(seed);
    let base = LatLon::new(r.gen_range(-60.0..60.0), r.gen_range(-170.0..170.0));
    let spread = r.gen_range(0.002..0.03);
    let mut centers = Vec::new();
    for _ in 0..5 {
        centers.push((base.lat + r.gen_range(-spread..spread), base.lon + r.gen_range(-spread..spread)));
    }
    let point = |r: &mut ChaCha8Rng| {
        if r.gen_bool(0.5) {
            let c = centers[r.gen_range(0..centers.len())];
            LatLon::new(c.0 + r.gen_range(-0.001..0.001), c.1 + r.gen_range(-0.001..0.001))
        } else {
            LatLon::new(base.lat + r.gen_range(-spread..spread), base.lon + r.gen_range(-spread..spread))
        }
    };
    let objs = (0..objects)
        .map(|_| {
            let p = point(&mut r);
            GeoObject {
                object_type: format!("t{}", r.gen_range(0..types)),
                lat: p.lat,
                lon: p.lon,
            }
        })
        .collect();
    let qs = (0..queries).map(|_| point(&mut r)).collect();
    (objs, qs)
}

/// Proximity and density features by scanning every object.
pub fn brute_force_features(objects: &[GeoObject], object_type: &str, q: LatLon) -> ([f64; 4], [u32; 4]) {
    let mut d: Vec<f64> = objects
        .iter()
        .filter(|o| o.object_type == object_type)
        .map(|o| haversine_m(q, LatLon::new(o.lat, o.lon)))
        .collect();
    d.sort_by(f64::total_cmp);
    let mut prox = [ABSENT_DISTANCE_M; 4];
    if !d.is_empty() {
        for (slot, k) in prox.iter_mut().zip([1usize, 5, 10, 100]) {
            let take = k.min(d.len());
            let mut s = 0.0;
            for v in &d[..take] {
                s += v;
            }
            *slot = s / take as f64;
        }
    }
    let mut dens = [0u32; 4];
    for (slot, r) in dens.iter_mut().zip([25.0, 50.0, 100.0, 200.0]) {
        *slot = d.iter().filter(|&&x| x <= r).count() as u32;
    }
    (prox, dens)
}

// ---------------------------------------------------------------- metrics

/// Fixed confusion matrices with hand-derived weighted F1, macro F1 and
/// accuracy: `(counts, weighted, macro, accuracy)`.
pub fn hand_metric_cases() -> Vec<(Vec<Vec<u64>>, f64, f64, f64)> {
    vec![
        // P = (1, 1/2), R = (1/2, 1), F1 = (2/3, 2/3).
        (vec![vec![1, 1], vec![0, 1]], 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0),
        // Perfect diagonal.
        (vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]], 1.0, 1.0, 1.0),
        // Class 0: P 2/3, R 2/3. Class 1: P 1/2, R 1/2. Class 2: P 3/4, R 3/4.
        // Supports 3, 2, 4.
        (
            vec![vec![2, 1, 0], vec![0, 1, 1], vec![1, 0, 3]],
            (3.0 * (2.0 / 3.0) + 2.0 * 0.5 + 4.0 * 0.75) / 9.0,
            (2.0 / 3.0 + 0.5 + 0.75) / 3.0,
            6.0 / 9.0,
        ),
        // Nothing correct: all F1 zero.
        (vec![vec![0, 2], vec![3, 0]], 0.0, 0.0, 0.0),
        // Class 2 has zero support and is excluded from the averages.
        // Class 0: P 4/5, R 4/4, F1 8/9. Class 1: tp 0, F1 0. Class 2: P 0.
        (vec![vec![4, 0, 0], vec![1, 0, 1], vec![0, 0, 0]], 4.0 * (8.0 / 9.0) / 6.0, (8.0 / 9.0) / 2.0, 4.0 / 6.0),
        // Class 1 never predicted: P defined as 0, F1 0.
        // Class 0: P 5/7, R 5/5, F1 10/12 = 5/6. Class 1: F1 0.
        (vec![vec![5, 0], vec![2, 0]], 5.0 * (5.0 / 6.0) / 7.0, (5.0 / 6.0) / 2.0, 5.0 / 7.0),
    ]
}

pub fn random_labels(seed: u64, n: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng(seed);
    let t = (0..n).map(|_| r.gen_range(0..k)).collect();
    let p = (0..n).map(|_| r.gen_range(0..k)).collect();
    (t, p)
}

// ---------------------------------------------------------- finite diffs

/// Central-difference gradient.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

// ------------------------------------------------------------------ walks

/// Connected random graph on `n` nodes: a random spanning tree plus extra
/// edges, weights in [0.1, 3).
pub fn random_graph(seed: u64, n: usize, extra: usize) -> MultimodalGraph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for v in 1..n {
        let u = r.gen_range(0..v);
        seen.insert((u, v));
        edges.push((u, v, r.gen_range(0.1..3.0)));
    }
    let mut tries = 0;
    while edges.len() < n - 1 + extra && tries < 10_000 {
        tries += 1;
        let a = r.gen_range(0..n);
        let b = r.gen_range(0..n);
        let key = (a.min(b), a.max(b));
        if a != b && seen.insert(key) {
            edges.push((key.0, key.1, r.gen_range(0.1..3.0)));
        }
    }
    let nodes = (0..n)
        .map(|i| Node {
            id: format!("n{i}"),
            kind: NodeKind::Word,
        })
        .collect();
    MultimodalGraph::from_parts(nodes, &edges).unwrap()
}

/// Empirical next-step frequencies from state `(prev, curr)` over `steps`
/// sampled second steps of walks started at `prev`. Returns the largest
/// absolute deviation from [`transition_distribution`].
pub fn walk_frequency_deviation(graph: &MultimodalGraph, prev: usize, curr: usize, p: f64, q: f64, steps: usize) -> f64 {
    let exact = transition_distribution(graph, prev, curr, p, q).unwrap();
    let cfg = WalkConfig {
        p,
        q,
        walks_per_node: 1,
        walk_length: 3,
        seed: 0,
    };
    let mut counts = vec![0usize; graph.node_count()];
    let mut collected = 0;
    let mut s = 0u64;
    while collected < steps {
        let w = walk_from(graph, prev, &cfg, 0x5eed_0000 + s);
        s += 1;
        if w.len() == 3 && w[1] == curr {
            assert!(graph.has_edge(w[1], w[2]), "walk left the graph's edges");
            counts[w[2]] += 1;
            collected += 1;
        }
    }
    let mut worst = 0.0f64;
    for (node, prob) in exact {
        let freq = counts[node] as f64 / steps as f64;
        worst = worst.max((freq - prob).abs());
    }
    worst
}

// ---------------------------------------------------------------- datasets

/// Single-class dataset with one report per location.
pub fn dataset_at(points: &[LatLon]) -> urbanfuse::Dataset {
    use urbanfuse::{Dataset, LabelTaxonomy, Report};
    let t = chrono::NaiveDate::from_ymd_opt(2018, 6, 1).unwrap().and_hms_opt(12, 0, 0).unwrap();
    let reports = points
        .iter()
        .enumerate()
        .map(|(i, p)| Report {
            id: format!("r{i}"),
            text: "loose paving stone".into(),
            timestamp: t,
            lat: p.lat,
            lon: p.lon,
            main_class: "public_space".into(),
            issue_class: "paving".into(),
            image_ref: None,
        })
        .collect();
    let tax = LabelTaxonomy::new(vec!["public_space".into()], vec!["paving".into()], vec!["public_space".into()]).unwrap();
    Dataset::new(reports, tax)
}

// ------------------------------------------------------------------ fusion

/// Balanced labels `0..k` repeated, shuffled by `seed`.
pub fn balanced_labels(seed: u64, n: usize, k: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut y: Vec<usize> = (0..n).map(|i| i % k).collect();
    y.shuffle(&mut rng(seed));
    y
}

/// A raw block whose rows are a class-specific Gaussian mean (scaled by
/// `signal`) plus unit noise.
pub fn class_block(seed: u64, name: &str, ids: &[String], y: &[usize], k: usize, width: usize, signal: f64) -> urbanfuse::FeatureBlock {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..width).map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            signal * z
        }).collect())
        .collect();
    let mut data = Vec::with_capacity(y.len() * width);
    for &c in y {
        for mean in &means[c] {
            let noise: f64 = StandardNormal.sample(&mut r);
            data.push(mean + noise);
        }
    }
    let m = urbanfuse::Matrix::from_vec(y.len(), width, data).unwrap();
    let cols = (0..width).map(|j| format!("{name}_{j}")).collect();
    urbanfuse::FeatureBlock::new(name, urbanfuse::BlockKind::Raw, ids.to_vec(), m, cols).unwrap()
}

/// Train/test pairs for blocks `(name, width, signal)` over a shuffled
/// balanced label vector; the first `n_train` rows are train.
pub fn class_pairs(
    seed: u64,
    n_train: usize,
    n_test: usize,
    k: usize,
    specs: &[(&str, usize, f64)],
) -> (Vec<urbanfuse::fusion::BlockPair>, Vec<usize>, Vec<usize>, Vec<String>) {
    let n = n_train + n_test;
    let y = balanced_labels(seed, n, k);
    let ids: Vec<String> = (0..n).map(|i| format!("r{i:05}")).collect();
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n).collect();
    let pairs = specs
        .iter()
        .enumerate()
        .map(|(b, &(name, width, signal))| {
            let full = class_block(seed * 31 + b as u64, name, &ids, &y, k, width, signal);
            let part = |idx: &[usize]| {
                let sub: Vec<String> = idx.iter().map(|&i| ids[i].clone()).collect();
                full.select(&sub).unwrap()
            };
            urbanfuse::fusion::BlockPair::new(part(&train_idx), part(&test_idx)).unwrap()
        })
        .collect();
    let labels = (0..k).map(|c| format!("c{c}")).collect();
    (pairs, y[..n_train].to_vec(), y[n_train..].to_vec(), labels)
}
