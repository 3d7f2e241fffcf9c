mod common;

use common::{brute_force_features, dataset_at, random_geo_instance};
use proptest::prelude::*;
use urbanfuse::dataset::LatLon;
use urbanfuse::geo::{build_spatial_index, geo_block, haversine_m, historical_block, PointGrid};
use urbanfuse::ingest::HistoricalEvent;

#[test]
fn knn_and_radius_queries_match_a_full_scan() {
    let (objs, queries) = random_geo_instance(11, 1000, 1, 50);
    let pts: Vec<LatLon> = objs.iter().map(|o| o.location()).collect();
    let grid = PointGrid::new(pts.clone(), pts[0].lat);
    for q in queries {
        let mut scan: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, haversine_m(q, *p))).collect();
        scan.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for k in [1, 7, 100] {
            assert_eq!(grid.nearest(q, k), scan[..k].to_vec());
        }
        let within: Vec<(usize, f64)> = scan.iter().copied().filter(|h| h.1 <= 200.0).collect();
        assert_eq!(grid.within(q, 200.0), within);
    }
}

#[test]
fn block_rows_match_brute_force() {
    let (objs, queries) = random_geo_instance(5, 400, 3, 60);
    let ds = dataset_at(&queries);
    let idx = build_spatial_index(objs.clone());
    let block = geo_block("geo", &ds, &idx).unwrap();
    assert_eq!(block.width(), 8 * idx.types().len());
    for (i, q) in queries.iter().enumerate() {
        let row = block.matrix().row(i);
        for (t, ty) in idx.types().iter().enumerate() {
            let (prox, dens) = brute_force_features(&objs, ty, *q);
            assert_eq!(&row[8 * t..8 * t + 4], &prox);
            let dens: Vec<f64> = dens.iter().map(|&c| f64::from(c)).collect();
            assert_eq!(&row[8 * t + 4..8 * t + 8], dens.as_slice());
        }
    }
}

#[test]
fn historical_block_has_eight_columns_per_issue_type() {
    let t = chrono::NaiveDate::from_ymd_opt(2017, 3, 1).unwrap().and_hms_opt(8, 0, 0).unwrap();
    let events: Vec<HistoricalEvent> = (0..57 * 2)
        .map(|i| HistoricalEvent {
            issue_type: format!("issue_{:02}", i % 57),
            lat: 52.37 + (i as f64) * 1e-4,
            lon: 4.89,
            timestamp: t,
        })
        .collect();
    let ds = dataset_at(&[LatLon::new(52.371, 4.891)]);
    let block = historical_block("geo_hist", &ds, &events).unwrap();
    assert_eq!(block.width(), 456);
}

#[test]
fn two_types_give_sixteen_columns() {
    let (objs, queries) = random_geo_instance(2, 50, 2, 3);
    let idx = build_spatial_index(objs);
    assert_eq!(idx.types().len(), 2);
    assert_eq!(geo_block("geo", &dataset_at(&queries), &idx).unwrap().width(), 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn features_are_monotone(seed in 0u64..10_000, n in 100usize..300) {
        let (objs, queries) = random_geo_instance(seed, n, 1, 10);
        let idx = build_spatial_index(objs);
        for q in queries {
            let p = idx.proximity_features(q, "t0");
            let d = idx.density_features(q, "t0");
            prop_assert!(d[0] <= d[1] && d[1] <= d[2] && d[2] <= d[3]);
            prop_assert!(p[0] <= p[1] && p[1] <= p[2] && p[2] <= p[3]);
        }
    }

    #[test]
    fn haversine_is_symmetric(a in -80.0f64..80.0, b in -179.0f64..179.0, c in -80.0f64..80.0, d in -179.0f64..179.0) {
        let x = LatLon::new(a, b);
        let y = LatLon::new(c, d);
        prop_assert_eq!(haversine_m(x, y), haversine_m(y, x));
        prop_assert_eq!(haversine_m(x, x), 0.0);
    }
}
