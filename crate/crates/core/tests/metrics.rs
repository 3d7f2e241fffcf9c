mod common;

use common::{hand_metric_cases, random_labels};
use proptest::prelude::*;
use urbanfuse::eval::{confusion, f1_report, per_class_table, ConfusionMatrix, NamedReport};

fn labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

#[test]
fn hand_computed_reports() {
    for (counts, weighted, macro_f1, accuracy) in hand_metric_cases() {
        let cm = ConfusionMatrix {
            class_labels: labels(counts.len()),
            counts,
        };
        let r = f1_report(&cm).unwrap();
        assert!((r.weighted_f1 - weighted).abs() < 1e-12, "{:?}", cm.counts);
        assert!((r.macro_f1 - macro_f1).abs() < 1e-12, "{:?}", cm.counts);
        assert!((r.accuracy - accuracy).abs() < 1e-12);
        assert!((r.micro_f1 - accuracy).abs() < 1e-12);
    }
}

#[test]
fn worked_example_per_class() {
    let cm = confusion(&[0, 0, 1], &[0, 1, 1], &labels(2)).unwrap();
    assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
    let r = f1_report(&cm).unwrap();
    for c in &r.per_class {
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn micro_f1_equals_accuracy_on_random_instances() {
    for seed in 0..50 {
        let (t, p) = random_labels(seed, 40 + seed as usize, 2 + (seed as usize % 6));
        let k = 2 + (seed as usize % 6);
        let r = f1_report(&confusion(&t, &p, &labels(k)).unwrap()).unwrap();
        let direct = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
        assert!((r.micro_f1 - direct).abs() < 1e-12);
        assert!((r.accuracy - direct).abs() < 1e-12);
    }
}

#[test]
fn table_rejects_mixed_taxonomies() {
    let a = f1_report(&confusion(&[0, 1], &[0, 1], &labels(2)).unwrap()).unwrap();
    let b = f1_report(&confusion(&[0, 1, 2], &[0, 1, 2], &labels(3)).unwrap()).unwrap();
    let named = [
        NamedReport { name: "a".into(), report: &a },
        NamedReport { name: "b".into(), report: &b },
    ];
    assert!(per_class_table(&named, None).is_err());
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_permutation_invariant(
        pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..80),
        shift in 1usize..5,
    ) {
        let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let r = f1_report(&confusion(&t, &p, &labels(5)).unwrap()).unwrap();
        for v in [r.macro_f1, r.micro_f1, r.weighted_f1, r.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(r.micro_f1, r.accuracy);
        let perm = |c: usize| (c + shift) % 5;
        let t2: Vec<usize> = t.iter().map(|&c| perm(c)).collect();
        let p2: Vec<usize> = p.iter().map(|&c| perm(c)).collect();
        let r2 = f1_report(&confusion(&t2, &p2, &labels(5)).unwrap()).unwrap();
        prop_assert!((r.weighted_f1 - r2.weighted_f1).abs() < 1e-12);
    }
}
