mod common;

use common::rng;
use rand::Rng;
use urbanfuse::classify::{self, route_probabilities, train_gbdt, train_logreg, ClassifierConfig, ClassifierModel, GbdtConfig, LogRegConfig, RoutingDecision};
use urbanfuse::classify::logreg::Objective;
use urbanfuse::Matrix;

fn log_loss(p: &Matrix, y: &[usize]) -> f64 {
    y.iter().enumerate().map(|(i, &c)| -p.get(i, c).ln()).sum::<f64>() / y.len() as f64
}

fn labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

/// Three well separated clusters in two dimensions.
fn separable(seed: u64, per_class: usize) -> (Matrix, Vec<usize>) {
    let centers = [(-5.0, 0.0), (5.0, 0.0), (0.0, 6.0)];
    let mut r = rng(seed);
    let mut data = Vec::new();
    let mut y = Vec::new();
    for (c, (cx, cy)) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.push(cx + r.gen_range(-1.0..1.0));
            data.push(cy + r.gen_range(-1.0..1.0));
            y.push(c);
        }
    }
    (Matrix::from_vec(y.len(), 2, data).unwrap(), y)
}

fn accuracy(model: &ClassifierModel, x: &Matrix, y: &[usize]) -> f64 {
    let p = model.predict(x).unwrap();
    p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

#[test]
fn logreg_separates_toy_clusters() {
    let (x, y) = separable(1, 30);
    let cfg = ClassifierConfig::Logreg(LogRegConfig {
        l2: 1e-3,
        ..Default::default()
    });
    let m = classify::train(&cfg, &x, &y, &labels(3)).unwrap();
    assert_eq!(accuracy(&m, &x, &y), 1.0);
    let p = m.predict_proba(&x).unwrap();
    for row in p.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn heavy_penalty_recovers_class_priors() {
    let mut r = rng(3);
    let n = 400;
    let y: Vec<usize> = (0..n).map(|i| if i < 240 { 0 } else if i < 340 { 1 } else { 2 }).collect();
    let x = Matrix::from_vec(n, 4, (0..n * 4).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let m = train_logreg(&x, &y, &labels(3), &LogRegConfig {
        l2: 1e6,
        ..Default::default()
    })
    .unwrap();
    let p = m.predict_proba(&x).unwrap();
    let priors = [0.6, 0.25, 0.15];
    for row in p.iter_rows() {
        for (a, b) in row.iter().zip(priors) {
            assert!((a - b).abs() < 0.01, "{row:?}");
        }
    }
}

#[test]
fn zero_parameters_give_uniform_loss() {
    let (x, y) = separable(5, 10);
    let obj = Objective {
        x: &x,
        y: &y,
        num_classes: 3,
        l2: 0.5,
    };
    let params = vec![0.0; obj.num_params()];
    assert!((obj.loss(&params) - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn unseen_class_keeps_a_column() {
    let (x, y) = separable(6, 10);
    let m = train_logreg(&x, &y, &labels(4), &LogRegConfig::default()).unwrap();
    let p = m.predict_proba(&x).unwrap();
    assert_eq!(p.cols(), 4);
    assert!(p.iter_rows().all(|r| r[3] < 0.25));
}

#[test]
fn gbdt_stumps_fit_toy_within_twenty_rounds() {
    let (x, y) = separable(2, 30);
    let cfg = GbdtConfig {
        rounds: 20,
        max_depth: 1,
        learning_rate: 0.3,
        ..Default::default()
    };
    let m = train_gbdt(&x, &y, &labels(3), &cfg).unwrap();
    assert_eq!(accuracy(&ClassifierModel::Gbdt(m), &x, &y), 1.0);
}

#[test]
fn gbdt_training_loss_never_increases() {
    let mut r = rng(11);
    let n = 300;
    let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap();
    let y: Vec<usize> = (0..n)
        .map(|i| {
            let row = x.row(i);
            let noisy = row[0] + 0.5 * row[1] * row[2] + r.gen_range(-0.5..0.5);
            if noisy < -0.5 {
                0
            } else if noisy < 0.7 {
                1
            } else {
                2
            }
        })
        .collect();
    let m = train_gbdt(&x, &y, &labels(3), &GbdtConfig {
        rounds: 30,
        max_depth: 3,
        ..Default::default()
    })
    .unwrap();
    let mut prev = f64::INFINITY;
    for rounds in 0..=30 {
        let loss = log_loss(&m.truncated(rounds).predict_proba(&x).unwrap(), &y);
        assert!(loss <= prev + 1e-12, "round {rounds}: {loss} > {prev}");
        prev = loss;
    }
}

#[test]
fn gbdt_ignores_monotone_feature_transforms() {
    let (x, y) = separable(4, 20);
    let transformed: Vec<f64> = x.data().iter().map(|v| (v * 0.7).exp() + 3.0).collect();
    let tx = Matrix::from_vec(x.rows(), x.cols(), transformed).unwrap();
    let cfg = GbdtConfig {
        rounds: 10,
        max_depth: 2,
        ..Default::default()
    };
    let a = train_gbdt(&x, &y, &labels(3), &cfg).unwrap();
    let b = train_gbdt(&tx, &y, &labels(3), &cfg).unwrap();
    let pa = a.predict_proba(&x).unwrap();
    let pb = b.predict_proba(&tx).unwrap();
    for (u, v) in pa.data().iter().zip(pb.data()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn routing_threshold_is_inclusive() {
    assert_eq!(
        route_probabilities(&[0.1, 0.9], 0.9),
        RoutingDecision::Auto {
            class: 1,
            probability: 0.9
        }
    );
    assert_eq!(route_probabilities(&[0.5, 0.5], 0.51), RoutingDecision::Defer { probability: 0.5 });
    let (x, y) = separable(8, 10);
    let m = classify::train(&ClassifierConfig::default(), &x, &y, &labels(3)).unwrap();
    assert!(matches!(m.route(x.row(0), 0.0).unwrap(), RoutingDecision::Auto { .. }));
    assert!(matches!(m.route(x.row(0), 1.01).unwrap(), RoutingDecision::Defer { .. }));
}
