//! Reports, label taxonomy, feature blocks, splitting and validation.

use std::collections::{HashMap, HashSet};
use std::fmt;

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// One citizen report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub text: String,
    /// Local wall-clock time, no timezone.
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub main_class: String,
    pub issue_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl Report {
    pub fn location(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Which label a classifier is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Main,
    Issue,
}

/// Main classes, issue classes and the total mapping issue -> main.
///
/// Label strings map to dense indices in list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy", into = "RawTaxonomy")]
pub struct LabelTaxonomy {
    main_classes: Vec<String>,
    issue_classes: Vec<String>,
    issue_to_main: Vec<usize>,
    main_index: HashMap<String, usize>,
    issue_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawTaxonomy {
    main_classes: Vec<String>,
    issue_classes: Vec<String>,
    /// Main class name for each issue class, in issue order.
    issue_to_main: Vec<String>,
}

impl TryFrom<RawTaxonomy> for LabelTaxonomy {
    type Error = Error;

    fn try_from(raw: RawTaxonomy) -> Result<Self> {
        LabelTaxonomy::new(raw.main_classes, raw.issue_classes, raw.issue_to_main)
    }
}

impl From<LabelTaxonomy> for RawTaxonomy {
    fn from(t: LabelTaxonomy) -> Self {
        let issue_to_main = t
            .issue_to_main
            .iter()
            .map(|&m| t.main_classes[m].clone())
            .collect();
        RawTaxonomy {
            main_classes: t.main_classes,
            issue_classes: t.issue_classes,
            issue_to_main,
        }
    }
}

impl LabelTaxonomy {
    pub fn new(
        main_classes: Vec<String>,
        issue_classes: Vec<String>,
        issue_to_main: Vec<String>,
    ) -> Result<Self> {
        if main_classes.is_empty() {
            return Err(Error::invalid("taxonomy has no main classes"));
        }
        if issue_classes.len() != issue_to_main.len() {
            return Err(Error::invalid(format!(
                "{} issue classes but {} issue->main entries",
                issue_classes.len(),
                issue_to_main.len()
            )));
        }
        let main_index = index_names(&main_classes, "main class")?;
        let issue_index = index_names(&issue_classes, "issue class")?;
        let mut mapping = Vec::with_capacity(issue_to_main.len());
        for (issue, main) in issue_classes.iter().zip(&issue_to_main) {
            let m = *main_index.get(main).ok_or_else(|| {
                Error::invalid(format!("issue class {issue} maps to unknown main class {main}"))
            })?;
            mapping.push(m);
        }
        for (m, name) in main_classes.iter().enumerate() {
            if !mapping.contains(&m) {
                return Err(Error::invalid(format!("main class {name} has no issue classes")));
            }
        }
        Ok(LabelTaxonomy {
            main_classes,
            issue_classes,
            issue_to_main: mapping,
            main_index,
            issue_index,
        })
    }

    pub fn main_classes(&self) -> &[String] {
        &self.main_classes
    }

    pub fn issue_classes(&self) -> &[String] {
        &self.issue_classes
    }

    pub fn main_of_issue(&self, issue: usize) -> usize {
        self.issue_to_main[issue]
    }

    pub fn main_index(&self, name: &str) -> Option<usize> {
        self.main_index.get(name).copied()
    }

    pub fn issue_index(&self, name: &str) -> Option<usize> {
        self.issue_index.get(name).copied()
    }

    pub fn labels(&self, target: Target) -> &[String] {
        match target {
            Target::Main => &self.main_classes,
            Target::Issue => &self.issue_classes,
        }
    }

    pub fn num_classes(&self, target: Target) -> usize {
        self.labels(target).len()
    }
}

fn index_names(names: &[String], what: &str) -> Result<HashMap<String, usize>> {
    let mut idx = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::invalid(format!("empty {what} name")));
        }
        if idx.insert(n.clone(), i).is_some() {
            return Err(Error::invalid(format!("duplicate {what} {n}")));
        }
    }
    Ok(idx)
}

/// Ordered reports plus their taxonomy. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    reports: Vec<Report>,
    taxonomy: LabelTaxonomy,
}

impl Dataset {
    /// Wraps reports without checking them; see [`Dataset::validated`].
    pub fn new(reports: Vec<Report>, taxonomy: LabelTaxonomy) -> Self {
        Dataset { reports, taxonomy }
    }

    /// Builds the dataset and fails on any error-level validation finding.
    pub fn validated(reports: Vec<Report>, taxonomy: LabelTaxonomy) -> Result<Self> {
        let ds = Dataset::new(reports, taxonomy);
        let report = validate_dataset(&ds);
        if report.has_errors() {
            let msgs: Vec<String> = report.errors().map(|f| f.to_string()).collect();
            return Err(Error::Validation(msgs.join("; ")));
        }
        Ok(ds)
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.reports.iter().map(|r| r.id.clone()).collect()
    }

    /// Dense label indices for the chosen target.
    pub fn labels(&self, target: Target) -> Result<Vec<usize>> {
        self.reports
            .iter()
            .map(|r| {
                let (name, idx) = match target {
                    Target::Main => (&r.main_class, self.taxonomy.main_index(&r.main_class)),
                    Target::Issue => (&r.issue_class, self.taxonomy.issue_index(&r.issue_class)),
                };
                idx.ok_or_else(|| Error::invalid(format!("report {}: unknown label {name}", r.id)))
            })
            .collect()
    }

    /// Subset by positions, preserving the given order.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            reports: positions.iter().map(|&i| self.reports[i].clone()).collect(),
            taxonomy: self.taxonomy.clone(),
        }
    }

    /// Subset by ids; unknown ids are an error.
    pub fn subset_by_ids(&self, ids: &[String]) -> Result<Dataset> {
        let pos: HashMap<&str, usize> = self
            .reports
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let positions = ids
            .iter()
            .map(|id| {
                pos.get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("unknown report id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&positions))
    }
}

/// Deterministic stratified train/test split by issue class.
///
/// Per-class test counts are allocated by largest remainder so that the total
/// is exactly `round(test_fraction * N)`. Classes with a single member stay in
/// train. Within each half the original order is kept.
pub fn split_dataset(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 reports to split"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let strata = stratum_members(dataset);
    let target = ((test_fraction * n as f64).round() as usize).min(n);
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let alloc = allocate(&sizes, test_fraction, target);

    let mut r = rng::rng(rng::derive_seed(seed, "split"));
    let mut is_test = vec![false; n];
    for (members, &k) in strata.iter().zip(&alloc) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut r);
        for &i in &shuffled[..k] {
            is_test[i] = true;
        }
    }
    let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| is_test[i]).collect();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Positions grouped by issue label, strata ordered by taxonomy index
/// (unknown labels last, by name).
fn stratum_members(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut keyed: HashMap<(usize, &str), Vec<usize>> = HashMap::new();
    for (i, r) in dataset.reports().iter().enumerate() {
        let k = dataset
            .taxonomy()
            .issue_index(&r.issue_class)
            .unwrap_or(usize::MAX);
        keyed.entry((k, r.issue_class.as_str())).or_default().push(i);
    }
    let mut keys: Vec<_> = keyed.keys().copied().collect();
    keys.sort();
    keys.into_iter().map(|k| keyed.remove(&k).unwrap_or_default()).collect()
}

/// Largest-remainder allocation of `target` test slots over strata.
///
/// First pass keeps at least one member of every stratum in train; if the
/// target still cannot be met the cap is lifted.
pub(crate) fn allocate(sizes: &[usize], fraction: f64, target: usize) -> Vec<usize> {
    let cap1: Vec<usize> = sizes.iter().map(|&s| if s <= 1 { 0 } else { s - 1 }).collect();
    let mut alloc: Vec<usize> = sizes
        .iter()
        .zip(&cap1)
        .map(|(&s, &c)| ((fraction * s as f64).floor() as usize).min(c))
        .collect();
    let mut remaining = target.saturating_sub(alloc.iter().sum());
    for cap in [cap1, sizes.to_vec()] {
        if remaining == 0 {
            break;
        }
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        let rem = |i: usize| fraction * sizes[i] as f64 - alloc[i] as f64;
        order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
        // Repeated passes: a stratum can take more than one extra slot when
        // earlier strata are capped.
        while remaining > 0 {
            let mut progressed = false;
            for &i in &order {
                if remaining == 0 {
                    break;
                }
                if alloc[i] < cap[i] {
                    alloc[i] += 1;
                    remaining -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }
    alloc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub report_id: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev} [{}]: {}", self.report_id, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }
}

/// Checks coordinates, id uniqueness, labels against the taxonomy, and that
/// each report has text or an image.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let tax = dataset.taxonomy();
    let mut findings = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |severity, id: &str, message: String| {
        findings.push(Finding {
            severity,
            report_id: id.to_string(),
            message,
        })
    };
    for r in dataset.reports() {
        if r.id.is_empty() {
            push(Severity::Error, "", "empty report id".into());
        } else if !seen.insert(r.id.as_str()) {
            push(Severity::Error, &r.id, "duplicate report id".into());
        }
        if !(-90.0..=90.0).contains(&r.lat) {
            push(Severity::Error, &r.id, format!("latitude {} out of range", r.lat));
        }
        if !(-180.0..=180.0).contains(&r.lon) {
            push(Severity::Error, &r.id, format!("longitude {} out of range", r.lon));
        }
        let main = tax.main_index(&r.main_class);
        let issue = tax.issue_index(&r.issue_class);
        if main.is_none() {
            push(Severity::Error, &r.id, format!("unknown main class {}", r.main_class));
        }
        match issue {
            None => push(Severity::Error, &r.id, format!("unknown issue class {}", r.issue_class)),
            Some(i) => {
                if let Some(m) = main {
                    if tax.main_of_issue(i) != m {
                        push(
                            Severity::Error,
                            &r.id,
                            format!(
                                "issue class {} belongs to {}, not {}",
                                r.issue_class,
                                tax.main_classes()[tax.main_of_issue(i)],
                                r.main_class
                            ),
                        );
                    }
                }
            }
        }
        if r.text.trim().is_empty() && r.image_ref.is_none() {
            push(Severity::Warning, &r.id, "no text and no image".into());
        }
    }
    ValidationReport { findings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Raw,
    Probability,
    Embedding,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Raw => "raw",
            BlockKind::Probability => "probability",
            BlockKind::Embedding => "embedding",
        })
    }
}

/// A named feature matrix, row-aligned to a list of report ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    name: String,
    kind: BlockKind,
    report_ids: Vec<String>,
    matrix: Matrix,
    column_names: Vec<String>,
}

impl FeatureBlock {
    pub fn new(
        name: impl Into<String>,
        kind: BlockKind,
        report_ids: Vec<String>,
        matrix: Matrix,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let name = name.into();
        if matrix.rows() != report_ids.len() {
            return Err(Error::invalid(format!(
                "block {name}: {} rows for {} report ids",
                matrix.rows(),
                report_ids.len()
            )));
        }
        if matrix.cols() != column_names.len() {
            return Err(Error::invalid(format!(
                "block {name}: {} columns but {} column names",
                matrix.cols(),
                column_names.len()
            )));
        }
        if !matrix.all_finite() {
            return Err(Error::invalid(format!("block {name}: non-finite value")));
        }
        if kind == BlockKind::Probability {
            for (i, row) in matrix.iter_rows().enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::invalid(format!(
                        "block {name}: row {i} is not a probability distribution (sum {s})"
                    )));
                }
            }
        }
        Ok(FeatureBlock {
            name,
            kind,
            report_ids,
            matrix,
            column_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn report_ids(&self) -> &[String] {
        &self.report_ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.report_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.report_ids.is_empty()
    }

    /// Rows for the given ids, in that order.
    pub fn select(&self, ids: &[String]) -> Result<FeatureBlock> {
        let pos: HashMap<&str, usize> = self
            .report_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let idx = ids
            .iter()
            .map(|id| {
                pos.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Alignment(format!("block {} has no row for report {id}", self.name))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureBlock {
            name: self.name.clone(),
            kind: self.kind,
            report_ids: ids.to_vec(),
            matrix: self.matrix.select_rows(&idx),
            column_names: self.column_names.clone(),
        })
    }
}
