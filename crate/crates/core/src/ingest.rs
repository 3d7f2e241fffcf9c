//! Readers and writers for every on-disk format.
//!
//! * reports: JSON Lines, optional first line `{"taxonomy": {...}}`, otherwise a
//!   `<stem>.taxonomy.json` sidecar next to the file
//! * geo objects, historical events, weather: headered CSV
//! * visual features: JSON Lines (`report_id`, `vector`, `concepts`)
//! * embeddings: `node_id\tv1\t...\tvd`
//! * feature blocks: `# urbanfuse-block\t<name>\t<kind>` line, a TSV header, rows
//! * models: JSON container `{format_version, kind, payload}`
//!
//! Floats are written in Rust's shortest round-trip form, so every reader
//! recovers the exact bits the writer was given.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, Timelike};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{BlockKind, Dataset, FeatureBlock, LabelTaxonomy, LatLon, Report};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Width of the visual feature vectors.
pub const VISUAL_DIMS: usize = 2048;

/// Current model container version.
pub const MODEL_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoObject {
    pub object_type: String,
    pub lat: f64,
    pub lon: f64,
}

impl GeoObject {
    pub fn location(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalEvent {
    pub issue_type: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(with = "datetime_text")]
    pub timestamp: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub label: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualFeatureEntry {
    pub report_id: String,
    pub vector: Vec<f64>,
    /// Sorted by descending probability, at least two entries.
    pub concepts: Vec<Concept>,
}

impl VisualFeatureEntry {
    pub fn check(&self) -> Result<()> {
        if self.vector.len() != VISUAL_DIMS {
            return Err(Error::Format(format!(
                "visual entry {}: vector has {} values, expected {VISUAL_DIMS}",
                self.report_id,
                self.vector.len()
            )));
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "visual entry {}: non-finite vector value",
                self.report_id
            )));
        }
        if self.concepts.len() < 2 {
            return Err(Error::Format(format!(
                "visual entry {}: need at least 2 concepts",
                self.report_id
            )));
        }
        if self.concepts.iter().any(|c| !(0.0..=1.0).contains(&c.prob)) {
            return Err(Error::Format(format!(
                "visual entry {}: concept probability outside [0, 1]",
                self.report_id
            )));
        }
        if self.concepts.windows(2).any(|w| w[0].prob < w[1].prob) {
            return Err(Error::Format(format!(
                "visual entry {}: concepts not sorted by descending probability",
                self.report_id
            )));
        }
        Ok(())
    }
}

/// Visual entries keyed by report id, iterated in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VisualTable {
    entries: Vec<VisualFeatureEntry>,
    index: HashMap<String, usize>,
}

impl VisualTable {
    pub fn new(entries: Vec<VisualFeatureEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            e.check()?;
            if index.insert(e.report_id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate visual entry {}", e.report_id)));
            }
        }
        Ok(VisualTable { entries, index })
    }

    pub fn get(&self, key: &str) -> Option<&VisualFeatureEntry> {
        self.index.get(key).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[VisualFeatureEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Hourly weather values, one row per hour.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRow {
    pub timestamp: NaiveDateTime,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherTable {
    pub column_names: Vec<String>,
    pub rows: Vec<WeatherRow>,
}

pub(crate) mod datetime_text {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_datetime(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_datetime(&s).map_err(serde::de::Error::custom)
    }
}

pub fn format_datetime(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Accepts `YYYY-MM-DDTHH:MM:SS[.f]` or the same with a space separator.
pub fn parse_datetime(s: &str) -> std::result::Result<NaiveDateTime, String> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

pub fn truncate_to_hour(t: &NaiveDateTime) -> NaiveDateTime {
    t.date()
        .and_hms_opt(t.hour(), 0, 0)
        .expect("hour from a valid datetime")
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[derive(Deserialize)]
struct TaxonomyHeader {
    taxonomy: LabelTaxonomy,
}

#[derive(Serialize)]
struct TaxonomyHeaderRef<'a> {
    taxonomy: &'a LabelTaxonomy,
}

fn taxonomy_sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.taxonomy.json"))
}

/// Loads a report file. Line numbers in errors are 1-based physical lines.
pub fn load_reports(path: &Path) -> Result<Dataset> {
    let reader = open(path)?;
    let mut taxonomy = None;
    let mut reports = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if taxonomy.is_none() && reports.is_empty() && line.trim_start().starts_with("{\"taxonomy\"") {
            let h: TaxonomyHeader = serde_json::from_str(&line)
                .map_err(|e| parse_err(path, lineno, format!("bad taxonomy header: {e}")))?;
            taxonomy = Some(h.taxonomy);
            continue;
        }
        let r: Report =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        reports.push(r);
    }
    let taxonomy = match taxonomy {
        Some(t) => t,
        None => {
            let side = taxonomy_sidecar(path);
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?
        }
    };
    Dataset::validated(reports, taxonomy)
}

/// Writes reports with the taxonomy as the header line.
pub fn save_reports(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let header = serde_json::to_string(&TaxonomyHeaderRef {
        taxonomy: dataset.taxonomy(),
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w, "{header}").map_err(io)?;
    for r in dataset.reports() {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?))
}

/// Line number of a CSV record (header is line 1).
fn csv_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

fn field<'a>(path: &Path, rec: &'a csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing field {name}")))
}

fn parse_f64(path: &Path, s: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("{name}: not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{name}: non-finite value")));
    }
    Ok(v)
}

fn parse_coord(path: &Path, lat: &str, lon: &str, line: usize) -> Result<(f64, f64)> {
    let lat = parse_f64(path, lat, "lat", line)?;
    let lon = parse_f64(path, lon, "lon", line)?;
    if !LatLon::new(lat, lon).is_valid() {
        return Err(parse_err(path, line, format!("coordinate ({lat}, {lon}) out of range")));
    }
    Ok((lat, lon))
}

fn header_positions(path: &Path, headers: &csv::StringRecord, want: &[&str]) -> Result<Vec<usize>> {
    want.iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h.trim() == *w)
                .ok_or_else(|| parse_err(path, 1, format!("missing column {w}")))
        })
        .collect()
}

pub fn load_geo_objects(path: &Path) -> Result<Vec<GeoObject>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let pos = header_positions(path, &headers, &["object_type", "lat", "lon"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        let line = csv_line(&rec, i + 2);
        let object_type = field(path, &rec, pos[0], "object_type", line)?.trim().to_string();
        if object_type.is_empty() {
            return Err(parse_err(path, line, "empty object_type"));
        }
        let (lat, lon) = parse_coord(
            path,
            field(path, &rec, pos[1], "lat", line)?,
            field(path, &rec, pos[2], "lon", line)?,
            line,
        )?;
        out.push(GeoObject { object_type, lat, lon });
    }
    Ok(out)
}

pub fn save_geo_objects(objects: &[GeoObject], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["object_type", "lat", "lon"]).map_err(err)?;
    for o in objects {
        w.write_record([o.object_type.clone(), o.lat.to_string(), o.lon.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_historical_events(path: &Path) -> Result<Vec<HistoricalEvent>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let pos = header_positions(path, &headers, &["issue_type", "lat", "lon", "timestamp"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        let line = csv_line(&rec, i + 2);
        let issue_type = field(path, &rec, pos[0], "issue_type", line)?.trim().to_string();
        if issue_type.is_empty() {
            return Err(parse_err(path, line, "empty issue_type"));
        }
        let (lat, lon) = parse_coord(
            path,
            field(path, &rec, pos[1], "lat", line)?,
            field(path, &rec, pos[2], "lon", line)?,
            line,
        )?;
        let timestamp = parse_datetime(field(path, &rec, pos[3], "timestamp", line)?)
            .map_err(|m| parse_err(path, line, m))?;
        out.push(HistoricalEvent {
            issue_type,
            lat,
            lon,
            timestamp,
        });
    }
    Ok(out)
}

pub fn save_historical_events(events: &[HistoricalEvent], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["issue_type", "lat", "lon", "timestamp"]).map_err(err)?;
    for e in events {
        w.write_record([
            e.issue_type.clone(),
            e.lat.to_string(),
            e.lon.to_string(),
            format_datetime(&e.timestamp),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads an hourly weather table. Timestamps are truncated to the hour; two
/// rows for the same hour are an error.
pub fn load_weather(path: &Path) -> Result<WeatherTable> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    if headers.get(0).map(str::trim) != Some("timestamp") {
        return Err(parse_err(path, 1, "first column must be timestamp"));
    }
    let column_names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        let line = csv_line(&rec, i + 2);
        if rec.len() != column_names.len() + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", column_names.len() + 1, rec.len()),
            ));
        }
        let ts = parse_datetime(&rec[0]).map_err(|m| parse_err(path, line, m))?;
        let ts = truncate_to_hour(&ts);
        if !seen.insert(ts) {
            return Err(Error::Format(format!(
                "{}: duplicate weather hour {}",
                path.display(),
                ts.format("%Y-%m-%d %H:00")
            )));
        }
        let values = column_names
            .iter()
            .enumerate()
            .map(|(j, name)| parse_f64(path, &rec[j + 1], name, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(WeatherRow { timestamp: ts, values });
    }
    Ok(WeatherTable { column_names, rows })
}

pub fn save_weather(table: &WeatherTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut header = vec!["timestamp".to_string()];
    header.extend(table.column_names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for row in &table.rows {
        let mut rec = vec![format_datetime(&row.timestamp)];
        rec.extend(row.values.iter().map(f64::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_visual_features(path: &Path) -> Result<VisualTable> {
    let reader = open(path)?;
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: VisualFeatureEntry =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        e.check().map_err(|err| match err {
            Error::Format(m) => Error::Format(format!("{}:{}: {m}", path.display(), i + 1)),
            other => other,
        })?;
        entries.push(e);
    }
    VisualTable::new(entries)
}

pub fn save_visual_features(table: &VisualTable, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for e in table.entries() {
        let line = serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Node vectors in the tab-separated embedding format.
pub fn save_embeddings(node_ids: &[String], matrix: &Matrix, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for (id, row) in node_ids.iter().zip(matrix.iter_rows()) {
        write!(w, "{id}").map_err(io)?;
        for v in row {
            write!(w, "\t{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_embeddings(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let reader = open(path)?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let id = parts.next().unwrap_or_default().to_string();
        let vals = parts
            .map(|p| parse_f64(path, p, "value", i + 1))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(parse_err(path, i + 1, format!("expected {w} values, got {}", vals.len())))
            }
            _ => {}
        }
        ids.push(id);
        data.extend(vals);
    }
    let m = Matrix::from_vec(ids.len(), width.unwrap_or(0), data)?;
    Ok((ids, m))
}

const BLOCK_MAGIC: &str = "# urbanfuse-block";

pub fn save_block(block: &FeatureBlock, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{BLOCK_MAGIC}\t{}\t{}", block.name(), block.kind()).map_err(io)?;
    write!(w, "report_id").map_err(io)?;
    for c in block.column_names() {
        write!(w, "\t{c}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (id, row) in block.report_ids().iter().zip(block.matrix().iter_rows()) {
        write!(w, "{id}").map_err(io)?;
        for v in row {
            write!(w, "\t{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_block(path: &Path) -> Result<FeatureBlock> {
    let mut lines = open(path)?.lines();
    let mut next = |n: usize| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| parse_err(path, n, "unexpected end of file"))?
            .map_err(|e| Error::io(path, e))
    };
    let meta = next(1)?;
    let meta: Vec<&str> = meta.split('\t').collect();
    if meta.len() != 3 || meta[0] != BLOCK_MAGIC {
        return Err(parse_err(path, 1, "not a feature block file"));
    }
    let name = meta[1].to_string();
    let kind = match meta[2] {
        "raw" => BlockKind::Raw,
        "probability" => BlockKind::Probability,
        "embedding" => BlockKind::Embedding,
        k => return Err(parse_err(path, 1, format!("unknown block kind {k}"))),
    };
    let header = next(2)?;
    let columns: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        ids.push(parts.next().unwrap_or_default().to_string());
        let before = data.len();
        for p in parts {
            data.push(parse_f64(path, p, "value", lineno)?);
        }
        if data.len() - before != columns.len() {
            return Err(parse_err(path, lineno, "row width does not match header"));
        }
    }
    let m = Matrix::from_vec(ids.len(), columns.len(), data)?;
    FeatureBlock::new(name, kind, ids, m, columns)
}

/// A value that can be stored in the model container.
pub trait Persist: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

#[derive(Serialize)]
struct ContainerRef<'a, T> {
    format_version: u64,
    kind: &'a str,
    payload: &'a T,
}

pub fn save_model<T: Persist>(model: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(
        &mut w,
        &ContainerRef {
            format_version: MODEL_FORMAT_VERSION,
            kind: T::KIND,
            payload: model,
        },
    )
    .map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Persist>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

pub fn model_from_str<T: Persist>(text: &str) -> Result<T> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Corrupt("container is not a JSON object".into()))?;
    let version = obj
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Corrupt("missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let kind = obj.get("kind").and_then(serde_json::Value::as_str).unwrap_or("");
    if kind != T::KIND {
        return Err(Error::Format(format!("expected a {} model, found {kind:?}", T::KIND)));
    }
    let payload = obj
        .remove("payload")
        .ok_or_else(|| Error::Corrupt("missing payload".into()))?;
    serde_json::from_value(payload).map_err(|e| Error::Corrupt(e.to_string()))
}
