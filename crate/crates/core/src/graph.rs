//! Heterogeneous report graph: reports linked to nearby geo objects, their
//! locations, visual concepts, words, and hour / weekday nodes.
//!
//! The builder only sees [`ReportView`]s, which carry no labels.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LatLon, Report};
use crate::error::{Error, Result};
use crate::geo::{PointGrid, SpatialIndex};
use crate::ingest::VisualTable;
use crate::text::TfidfModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Report,
    GeoObject,
    Location,
    VisualConcept,
    Word,
    Hour,
    Weekday,
}

impl NodeKind {
    pub const ALL: [NodeKind; 7] = [
        NodeKind::Report,
        NodeKind::GeoObject,
        NodeKind::Location,
        NodeKind::VisualConcept,
        NodeKind::Word,
        NodeKind::Hour,
        NodeKind::Weekday,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Report => "report",
            NodeKind::GeoObject => "geo_object",
            NodeKind::Location => "location",
            NodeKind::VisualConcept => "visual_concept",
            NodeKind::Word => "word",
            NodeKind::Hour => "hour",
            NodeKind::Weekday => "weekday",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        NodeKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Node id of a report node.
pub fn report_node_id(report_id: &str) -> String {
    format!("report:{report_id}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

/// Undirected weighted graph; adjacency lists sorted by neighbor index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultimodalGraph {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl MultimodalGraph {
    /// Builds a graph from nodes and undirected edges given by node index.
    /// Rejects self-loops, duplicate edges and non-positive or non-finite
    /// weights.
    pub fn from_parts(nodes: Vec<Node>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate node {}", n.id)));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(u, v, w) in edges {
            if u >= nodes.len() || v >= nodes.len() {
                return Err(Error::invalid(format!("edge ({u}, {v}) references a missing node")));
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop on {}", nodes[u].id)));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!(
                    "edge {} - {} has invalid weight {w}",
                    nodes[u].id, nodes[v].id
                )));
            }
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
        for (u, list) in adjacency.iter_mut().enumerate() {
            list.sort_by_key(|&(v, _)| v);
            if list.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(Error::invalid(format!("duplicate edge at {}", nodes[u].id)));
            }
        }
        Ok(MultimodalGraph {
            nodes,
            index,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adjacency[u]
    }

    /// Edge weight between `u` and `v`, if adjacent.
    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let list = &self.adjacency[u];
        list.binary_search_by_key(&v, |&(n, _)| n).ok().map(|i| list[i].1)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.weight(u, v).is_some()
    }

    /// Each undirected edge once, as `(u, v, w)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (u, list) in self.adjacency.iter().enumerate() {
            for &(v, w) in list {
                if u < v {
                    out.push((u, v, w));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Writes `u\tv\tweight` lines and a `node_id\tkind` sidecar.
    pub fn write_edge_list(&self, edges_path: &Path, nodes_path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(edges_path).map_err(|e| Error::io(edges_path, e))?);
        let io = |e| Error::io(edges_path, e);
        for (u, v, wt) in self.edges() {
            writeln!(w, "{}\t{}\t{wt}", self.nodes[u].id, self.nodes[v].id).map_err(io)?;
        }
        w.flush().map_err(io)?;
        let mut w = BufWriter::new(std::fs::File::create(nodes_path).map_err(|e| Error::io(nodes_path, e))?);
        let io = |e| Error::io(nodes_path, e);
        for n in &self.nodes {
            writeln!(w, "{}\t{}", n.id, n.kind).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_edge_list(edges_path: &Path, nodes_path: &Path) -> Result<Self> {
        let parse = |path: &Path, line: usize, m: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        let f = std::fs::File::open(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
        let mut nodes = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(nodes_path, e))?;
            let (id, kind) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse(nodes_path, i + 1, "expected id\\tkind".into()))?;
            let kind = NodeKind::parse(kind)
                .ok_or_else(|| parse(nodes_path, i + 1, format!("unknown node kind {kind}")))?;
            nodes.push(Node { id: id.to_string(), kind });
        }
        let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let f = std::fs::File::open(edges_path).map_err(|e| Error::io(edges_path, e))?;
        let mut edges = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(edges_path, e))?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(parse(edges_path, i + 1, "expected u\\tv\\tweight".into()));
            }
            let look = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| parse(edges_path, i + 1, format!("unknown node {id}")))
            };
            let w: f64 = parts[2]
                .parse()
                .map_err(|_| parse(edges_path, i + 1, format!("bad weight {}", parts[2])))?;
            edges.push((look(parts[0])?, look(parts[1])?, w));
        }
        MultimodalGraph::from_parts(nodes, &edges)
    }
}

/// How geo distances become edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceWeighting {
    /// `1 / (1 + meters)`: nearer means stronger.
    #[default]
    Inverse,
    /// Raw meters (floored at 1 mm so weights stay positive).
    Raw,
}

impl DistanceWeighting {
    pub fn weight(self, meters: f64) -> f64 {
        match self {
            DistanceWeighting::Inverse => 1.0 / (1.0 + meters),
            DistanceWeighting::Raw => meters.max(1e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub distance_weighting: DistanceWeighting,
    pub geo_neighbors: usize,
    pub visual_concepts: usize,
    pub location_neighbors: usize,
    /// Weight of report-to-neighboring-hour/weekday and ring edges.
    pub ring_weight: f64,
    /// Locations are deduplicated after rounding to this many decimals.
    pub location_decimals: u32,
    /// Size of the word vocabulary used for word nodes.
    pub max_words: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            distance_weighting: DistanceWeighting::Inverse,
            geo_neighbors: 2,
            visual_concepts: 2,
            location_neighbors: 2,
            ring_weight: 0.5,
            location_decimals: 5,
            max_words: 5000,
        }
    }
}

/// A report without its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportView<'a> {
    pub id: &'a str,
    pub text: &'a str,
    pub timestamp: NaiveDateTime,
    pub location: LatLon,
    pub image_ref: Option<&'a str>,
}

impl<'a> From<&'a Report> for ReportView<'a> {
    fn from(r: &'a Report) -> Self {
        ReportView {
            id: &r.id,
            text: &r.text,
            timestamp: r.timestamp,
            location: r.location(),
            image_ref: r.image_ref.as_deref(),
        }
    }
}

pub fn unlabeled(dataset: &Dataset) -> Vec<ReportView<'_>> {
    dataset.reports().iter().map(ReportView::from).collect()
}

struct Builder {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    edges: BTreeMap<(usize, usize), f64>,
}

impl Builder {
    fn node(&mut self, id: String, kind: NodeKind) -> usize {
        if let Some(&i) = self.index.get(&id) {
            return i;
        }
        let i = self.nodes.len();
        self.index.insert(id.clone(), i);
        self.nodes.push(Node { id, kind });
        i
    }

    /// Adds an undirected edge; a repeated edge keeps the larger weight.
    fn edge(&mut self, u: usize, v: usize, w: f64) {
        if u == v || !(w > 0.0) {
            return;
        }
        let key = (u.min(v), u.max(v));
        let e = self.edges.entry(key).or_insert(w);
        if w > *e {
            *e = w;
        }
    }
}

fn location_key(p: LatLon, decimals: u32) -> (i64, i64) {
    let s = 10f64.powi(decimals as i32);
    ((p.lat * s).round() as i64, (p.lon * s).round() as i64)
}

/// Builds the report graph. `words` is the TF-IDF model whose vocabulary
/// defines the word nodes.
pub fn build_graph(
    reports: &[ReportView<'_>],
    geo: &SpatialIndex,
    visual: &VisualTable,
    words: &TfidfModel,
    config: &GraphConfig,
) -> Result<MultimodalGraph> {
    let mut b = Builder {
        nodes: Vec::new(),
        index: HashMap::new(),
        edges: BTreeMap::new(),
    };
    let report_nodes: Vec<usize> = reports
        .iter()
        .map(|r| b.node(report_node_id(r.id), NodeKind::Report))
        .collect();
    if b.nodes.len() != reports.len() {
        return Err(Error::invalid("duplicate report ids in graph input"));
    }
    let hours: Vec<usize> = (0..24).map(|h| b.node(format!("hour:{h}"), NodeKind::Hour)).collect();
    let days: Vec<usize> = (0..7).map(|d| b.node(format!("weekday:{d}"), NodeKind::Weekday)).collect();
    for h in 0..24 {
        b.edge(hours[h], hours[(h + 1) % 24], config.ring_weight);
    }
    for d in 0..7 {
        b.edge(days[d], days[(d + 1) % 7], config.ring_weight);
    }

    // Location nodes, deduplicated by rounded coordinate, in first-seen order.
    let mut loc_keys: HashMap<(i64, i64), usize> = HashMap::new();
    let mut loc_points: Vec<LatLon> = Vec::new();
    let mut report_loc = Vec::with_capacity(reports.len());
    for r in reports {
        let key = location_key(r.location, config.location_decimals);
        let li = *loc_keys.entry(key).or_insert_with(|| {
            loc_points.push(r.location);
            loc_points.len() - 1
        });
        report_loc.push(li);
    }
    let s = 10f64.powi(config.location_decimals as i32);
    let loc_nodes: Vec<usize> = loc_points
        .iter()
        .map(|p| {
            let (a, c) = location_key(*p, config.location_decimals);
            let prec = config.location_decimals as usize;
            b.node(
                format!("loc:{:.prec$},{:.prec$}", a as f64 / s, c as f64 / s),
                NodeKind::Location,
            )
        })
        .collect();

    let mut isolated = Vec::new();
    for (ri, r) in reports.iter().enumerate() {
        let rn = report_nodes[ri];
        let mut content_edges = 0usize;

        for (obj, d) in geo.nearest_objects(r.location, config.geo_neighbors) {
            let o = &geo.objects()[obj];
            let gn = b.node(format!("geo:{}:{obj}", o.object_type), NodeKind::GeoObject);
            b.edge(rn, gn, config.distance_weighting.weight(d));
            content_edges += 1;
        }

        if let Some(entry) = visual.get(r.id) {
            for c in entry.concepts.iter().take(config.visual_concepts) {
                if c.prob > 0.0 {
                    let cn = b.node(format!("concept:{}", c.label), NodeKind::VisualConcept);
                    b.edge(rn, cn, c.prob);
                    content_edges += 1;
                }
            }
        }

        for (term, w) in words.transform(r.text) {
            // Vocabulary indices follow document frequency rank.
            if w > 0.0 && term < config.max_words {
                let wn = b.node(format!("word:{}", words.vocabulary.terms()[term]), NodeKind::Word);
                b.edge(rn, wn, w);
                content_edges += 1;
            }
        }

        let h = r.timestamp.hour() as usize;
        let d = r.timestamp.weekday().num_days_from_monday() as usize;
        b.edge(rn, hours[h], 1.0);
        b.edge(rn, hours[(h + 1) % 24], config.ring_weight);
        b.edge(rn, hours[(h + 23) % 24], config.ring_weight);
        b.edge(rn, days[d], 1.0);
        b.edge(rn, days[(d + 1) % 7], config.ring_weight);
        b.edge(rn, days[(d + 6) % 7], config.ring_weight);

        b.edge(rn, loc_nodes[report_loc[ri]], 1.0);

        if content_edges == 0 {
            isolated.push(r.id.to_string());
        }
    }
    if !isolated.is_empty() {
        return Err(Error::IsolatedReports(isolated));
    }

    let ref_lat = if loc_points.is_empty() {
        0.0
    } else {
        loc_points.iter().map(|p| p.lat).sum::<f64>() / loc_points.len() as f64
    };
    let grid = PointGrid::new(loc_points.clone(), ref_lat);
    for (li, p) in loc_points.iter().enumerate() {
        let near = grid.nearest(*p, config.location_neighbors + 1);
        for (other, d) in near.into_iter().filter(|&(o, _)| o != li).take(config.location_neighbors) {
            b.edge(loc_nodes[li], loc_nodes[other], config.distance_weighting.weight(d));
        }
    }

    let edges: Vec<(usize, usize, f64)> = b.edges.into_iter().map(|((u, v), w)| (u, v, w)).collect();
    MultimodalGraph::from_parts(b.nodes, &edges)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GraphStats {
    pub nodes_per_kind: BTreeMap<NodeKind, usize>,
    pub node_count: usize,
    pub edge_count: usize,
    /// degree -> number of nodes with that degree
    pub degree_histogram: BTreeMap<usize, usize>,
}

pub fn graph_stats(graph: &MultimodalGraph) -> GraphStats {
    let mut s = GraphStats {
        nodes_per_kind: NodeKind::ALL.iter().map(|&k| (k, 0)).collect(),
        node_count: graph.node_count(),
        edge_count: graph.edge_count(),
        degree_histogram: BTreeMap::new(),
    };
    for (i, n) in graph.nodes().iter().enumerate() {
        *s.nodes_per_kind.entry(n.kind).or_default() += 1;
        *s.degree_histogram.entry(graph.neighbors(i).len()).or_default() += 1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_parts_rejects_bad_edges() {
        let nodes = vec![
            Node { id: "a".into(), kind: NodeKind::Word },
            Node { id: "b".into(), kind: NodeKind::Word },
        ];
        assert!(MultimodalGraph::from_parts(nodes.clone(), &[(0, 0, 1.0)]).is_err());
        assert!(MultimodalGraph::from_parts(nodes.clone(), &[(0, 1, 0.0)]).is_err());
        assert!(MultimodalGraph::from_parts(nodes.clone(), &[(0, 1, 1.0), (1, 0, 1.0)]).is_err());
        assert!(MultimodalGraph::from_parts(nodes.clone(), &[(0, 2, 1.0)]).is_err());
        let g = MultimodalGraph::from_parts(nodes, &[(1, 0, 2.5)]).unwrap();
        assert_eq!(g.weight(0, 1), Some(2.5));
        assert_eq!(g.weight(1, 0), Some(2.5));
    }

    #[test]
    fn empty_graph_stats() {
        let s = graph_stats(&MultimodalGraph::default());
        assert_eq!(s.node_count, 0);
        assert_eq!(s.edge_count, 0);
        assert!(s.nodes_per_kind.values().all(|&c| c == 0));
        assert!(s.degree_histogram.is_empty());
    }

    #[test]
    fn inverse_distance_weights() {
        assert_eq!(DistanceWeighting::Inverse.weight(10.0), 1.0 / 11.0);
        assert_eq!(DistanceWeighting::Raw.weight(0.0), 1e-3);
    }
}
