//! Grid spatial index over geo objects and historical events, and the
//! proximity / density feature blocks built from it.
//!
//! Per object type the block has eight columns, in this order:
//! `nearest_1, mean_5, mean_10, mean_100, count_25m, count_50m, count_100m,
//! count_200m`. Distances are great-circle meters. A type with no objects at
//! all gets [`ABSENT_DISTANCE_M`] for the four distance columns.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{BlockKind, Dataset, FeatureBlock, LatLon};
use crate::error::{Error, Result};
use crate::ingest::{GeoObject, HistoricalEvent};
use crate::matrix::Matrix;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const ABSENT_DISTANCE_M: f64 = 20_000.0;
pub const GRID_CELL_M: f64 = 200.0;
pub const PROXIMITY_K: [usize; 4] = [1, 5, 10, 100];
pub const DENSITY_RADII_M: [f64; 4] = [25.0, 50.0, 100.0, 200.0];
pub const FEATURES_PER_TYPE: usize = 8;

/// Great-circle distance in meters.
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    // abs() makes the result exactly symmetric in (a, b).
    let dp = (p2 - p1).abs();
    let dl = (b.lon.to_radians() - a.lon.to_radians()).abs();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.min(1.0).sqrt().asin()
}

/// Uniform lat/lon grid over a point set with exact k-NN and radius queries.
#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<LatLon>,
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl PointGrid {
    /// Cell edge is `GRID_CELL_M` along the meridian and at `ref_lat`.
    pub fn new(points: Vec<LatLon>, ref_lat: f64) -> Self {
        let cell_lat = (GRID_CELL_M / EARTH_RADIUS_M).to_degrees();
        let cos = ref_lat.to_radians().cos().max(0.01);
        let cell_lon = (cell_lat / cos).min(360.0);
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(Self::key(p, cell_lat, cell_lon))
                .or_default()
                .push(i);
        }
        PointGrid {
            points,
            cell_lat,
            cell_lon,
            cells,
        }
    }

    fn key(p: &LatLon, cell_lat: f64, cell_lon: f64) -> (i64, i64) {
        ((p.lat / cell_lat).floor() as i64, (p.lon / cell_lon).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> LatLon {
        self.points[i]
    }

    /// Candidate point ids whose distance to `q` may be `<= radius_m`.
    /// Falls back to every point when the bounding box wraps the antimeridian
    /// or reaches a pole.
    fn candidates(&self, q: LatLon, radius_m: f64) -> Vec<usize> {
        let ang = radius_m / EARTH_RADIUS_M;
        let dlat = ang.to_degrees() * (1.0 + 1e-9) + 1e-9;
        let all = || (0..self.points.len()).collect::<Vec<_>>();
        if q.lat - dlat <= -90.0 || q.lat + dlat >= 90.0 || ang >= std::f64::consts::FRAC_PI_2 {
            return all();
        }
        // Largest longitude offset reachable within `ang` on the sphere,
        // over all latitudes in the band.
        let max_abs_lat = (q.lat.abs() + dlat).to_radians();
        let s = ang.sin() / max_abs_lat.cos();
        if s >= 1.0 {
            return all();
        }
        let dlon = s.asin().to_degrees() * (1.0 + 1e-9) + 1e-9;
        if q.lon - dlon < -180.0 || q.lon + dlon > 180.0 {
            return all();
        }
        let (r0, c0) = Self::key(&LatLon::new(q.lat - dlat, q.lon - dlon), self.cell_lat, self.cell_lon);
        let (r1, c1) = Self::key(&LatLon::new(q.lat + dlat, q.lon + dlon), self.cell_lat, self.cell_lon);
        let ncells = ((r1 - r0 + 1) as u64).saturating_mul((c1 - c0 + 1) as u64);
        if ncells > self.cells.len() as u64 * 4 {
            return all();
        }
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if let Some(ids) = self.cells.get(&(r, c)) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out
    }

    /// All points within `radius_m` (inclusive), sorted by (distance, id).
    pub fn within(&self, q: LatLon, radius_m: f64) -> Vec<(usize, f64)> {
        let mut hits: Vec<(usize, f64)> = self
            .candidates(q, radius_m)
            .into_iter()
            .map(|i| (i, haversine_m(q, self.points[i])))
            .filter(|&(_, d)| d <= radius_m)
            .collect();
        sort_hits(&mut hits);
        hits
    }

    /// The `k` nearest points, sorted by (distance, id). Fewer when the grid
    /// has fewer than `k` points.
    pub fn nearest(&self, q: LatLon, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut radius = GRID_CELL_M;
        loop {
            if radius >= std::f64::consts::PI * EARTH_RADIUS_M {
                let mut all: Vec<(usize, f64)> = (0..self.points.len())
                    .map(|i| (i, haversine_m(q, self.points[i])))
                    .collect();
                sort_hits(&mut all);
                all.truncate(k);
                return all;
            }
            let mut hits = self.within(q, radius);
            if hits.len() >= k {
                hits.truncate(k);
                return hits;
            }
            radius *= 2.0;
        }
    }
}

fn sort_hits(hits: &mut [(usize, f64)]) {
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
}

/// Per-type grids plus a grid over all objects.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    objects: Vec<GeoObject>,
    types: Vec<String>,
    by_type: Vec<PointGrid>,
    all: PointGrid,
}

/// Indexes objects by type. Types are registered in lexicographic order.
pub fn build_spatial_index(objects: Vec<GeoObject>) -> SpatialIndex {
    let ref_lat = if objects.is_empty() {
        0.0
    } else {
        objects.iter().map(|o| o.lat).sum::<f64>() / objects.len() as f64
    };
    let types: Vec<String> = objects
        .iter()
        .map(|o| o.object_type.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let by_type = types
        .iter()
        .map(|t| {
            let pts = objects
                .iter()
                .filter(|o| &o.object_type == t)
                .map(GeoObject::location)
                .collect();
            PointGrid::new(pts, ref_lat)
        })
        .collect();
    let all = PointGrid::new(objects.iter().map(GeoObject::location).collect(), ref_lat);
    SpatialIndex {
        objects,
        types,
        by_type,
        all,
    }
}

impl SpatialIndex {
    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn objects(&self) -> &[GeoObject] {
        &self.objects
    }

    pub fn type_grid(&self, object_type: &str) -> Option<&PointGrid> {
        self.types
            .binary_search_by(|t| t.as_str().cmp(object_type))
            .ok()
            .map(|i| &self.by_type[i])
    }

    /// `k` nearest objects of any type, as (object index, meters).
    pub fn nearest_objects(&self, q: LatLon, k: usize) -> Vec<(usize, f64)> {
        self.all.nearest(q, k)
    }

    /// `(nearest_1, mean_5, mean_10, mean_100)` in meters. Means use the
    /// available objects when fewer than k exist.
    pub fn proximity_features(&self, q: LatLon, object_type: &str) -> [f64; 4] {
        match self.type_grid(object_type) {
            Some(g) if !g.is_empty() => proximity_from_grid(g, q),
            _ => [ABSENT_DISTANCE_M; 4],
        }
    }

    /// Inclusive counts within 25, 50, 100 and 200 m.
    pub fn density_features(&self, q: LatLon, object_type: &str) -> [u32; 4] {
        match self.type_grid(object_type) {
            Some(g) => density_from_grid(g, q),
            None => [0; 4],
        }
    }
}

fn proximity_from_grid(g: &PointGrid, q: LatLon) -> [f64; 4] {
    let near = g.nearest(q, PROXIMITY_K[3]);
    let mut out = [0.0; 4];
    for (slot, &k) in out.iter_mut().zip(&PROXIMITY_K) {
        let take = k.min(near.len());
        *slot = near[..take].iter().map(|h| h.1).sum::<f64>() / take as f64;
    }
    out
}

fn density_from_grid(g: &PointGrid, q: LatLon) -> [u32; 4] {
    let hits = g.within(q, DENSITY_RADII_M[3]);
    let mut out = [0u32; 4];
    for (slot, &r) in out.iter_mut().zip(&DENSITY_RADII_M) {
        *slot = hits.iter().filter(|h| h.1 <= r).count() as u32;
    }
    out
}

/// Ordered column names for a type inventory.
pub fn feature_schema(types: &[String]) -> Vec<String> {
    let mut names = Vec::with_capacity(types.len() * FEATURES_PER_TYPE);
    for t in types {
        for suffix in [
            "nearest_1", "mean_5", "mean_10", "mean_100", "count_25m", "count_50m", "count_100m",
            "count_200m",
        ] {
            names.push(format!("{t}_{suffix}"));
        }
    }
    names
}

/// Writes `index,name` rows for a schema.
pub fn write_schema_csv(names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["index", "name"]).map_err(|e| Error::Format(e.to_string()))?;
    for (i, n) in names.iter().enumerate() {
        w.write_record([i.to_string(), n.clone()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Eight proximity/density features per indexed object type.
pub fn geo_block(name: &str, dataset: &Dataset, index: &SpatialIndex) -> Result<FeatureBlock> {
    let width = index.types().len() * FEATURES_PER_TYPE;
    let rows: Vec<Vec<f64>> = dataset
        .reports()
        .par_iter()
        .map(|r| {
            let q = r.location();
            let mut row = Vec::with_capacity(width);
            for (t, g) in index.types.iter().zip(&index.by_type) {
                debug_assert!(index.type_grid(t).is_some());
                let prox = if g.is_empty() {
                    [ABSENT_DISTANCE_M; 4]
                } else {
                    proximity_from_grid(g, q)
                };
                row.extend(prox);
                row.extend(density_from_grid(g, q).map(f64::from));
            }
            row
        })
        .collect();
    let m = Matrix::from_rows(&rows, width)?;
    FeatureBlock::new(name, BlockKind::Raw, dataset.ids(), m, feature_schema(index.types()))
}

/// Index over historical events, keyed by issue type.
pub fn historical_index(events: &[HistoricalEvent]) -> SpatialIndex {
    build_spatial_index(
        events
            .iter()
            .map(|e| GeoObject {
                object_type: e.issue_type.clone(),
                lat: e.lat,
                lon: e.lon,
            })
            .collect(),
    )
}

/// Same features as [`geo_block`] over past events grouped by issue type.
/// Event timestamps are not used.
pub fn historical_block(name: &str, dataset: &Dataset, events: &[HistoricalEvent]) -> Result<FeatureBlock> {
    geo_block(name, dataset, &historical_index(events))
}
