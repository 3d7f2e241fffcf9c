//! Synthetic citizen reports with planted, per-modality class signal.
//!
//! Every report has a true issue class. For each modality (text, visual,
//! geo, time) the generator flips a coin with the modality's weight: on heads
//! the modality is rendered from the true class, on tails from a uniformly
//! drawn class. A modality with weight 0 therefore carries no information and
//! a modality with weight 1 identifies the class as well as its rendering
//! allows. The coins are independent, so combining modalities recovers the
//! class more often than any single one does.
//!
//! Issue class `i` belongs to main class `i % num_main_classes`. Weather is a
//! seasonal sinusoid plus noise and never depends on the class.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelTaxonomy, Report};
use crate::error::{Error, Result};
use crate::ingest::{Concept, GeoObject, HistoricalEvent, VisualFeatureEntry, VisualTable, WeatherRow, WeatherTable, VISUAL_DIMS};
use crate::rng;

/// How much class identity each modality carries, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModalityWeights {
    pub text: f64,
    pub visual: f64,
    pub geo: f64,
    pub time: f64,
}

impl Default for ModalityWeights {
    fn default() -> Self {
        ModalityWeights {
            text: 0.4,
            visual: 0.4,
            geo: 0.4,
            time: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_reports: usize,
    pub num_main_classes: usize,
    pub num_issue_classes: usize,
    pub weights: ModalityWeights,
    /// Distinct words across class vocabularies and shared filler.
    pub vocabulary_size: usize,
    /// Words reserved for each issue class.
    pub class_words: usize,
    pub words_per_report: usize,
    /// Words per report drawn from the rendered class's vocabulary.
    pub signal_words: usize,
    pub geo_object_types: usize,
    pub objects_per_class: usize,
    pub background_objects: usize,
    pub history_per_class: usize,
    /// Non-zero visual dimensions in each class mean.
    pub visual_active_dims: usize,
    pub visual_signal: f64,
    /// Fraction of reports with an image.
    pub image_rate: f64,
    /// Fraction of issue labels replaced by a uniform draw.
    pub label_noise: f64,
    /// Class prior exponent: issue class `i` has weight `(i + 1)^-skew`.
    pub prior_skew: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_reports: 2000,
            num_main_classes: 8,
            num_issue_classes: 16,
            weights: ModalityWeights::default(),
            vocabulary_size: 1000,
            class_words: 20,
            words_per_report: 12,
            signal_words: 4,
            geo_object_types: 8,
            objects_per_class: 30,
            background_objects: 300,
            history_per_class: 40,
            visual_active_dims: 32,
            visual_signal: 2.0,
            image_rate: 1.0,
            label_noise: 0.0,
            prior_skew: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.num_main_classes < 2 {
            return bad("need at least 2 main classes");
        }
        if self.num_issue_classes < self.num_main_classes {
            return bad("fewer issue classes than main classes");
        }
        if self.num_reports < self.num_issue_classes {
            return bad("fewer reports than issue classes");
        }
        let w = self.weights;
        if [w.text, w.visual, w.geo, w.time].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("modality weights must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad("label noise must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.image_rate) {
            return bad("image rate must lie in [0, 1]");
        }
        if self.num_issue_classes * self.class_words >= self.vocabulary_size {
            return bad("vocabulary too small for the class words");
        }
        if self.signal_words > self.words_per_report || self.class_words == 0 {
            return bad("invalid word counts");
        }
        if self.geo_object_types == 0 || self.visual_active_dims == 0 || self.visual_active_dims > VISUAL_DIMS {
            return bad("invalid geo type count or visual dims");
        }
        if !(self.prior_skew >= 0.0 && self.visual_signal.is_finite()) {
            return bad("invalid prior skew or visual signal");
        }
        Ok(())
    }

    /// Issue class priors (sum to 1).
    pub fn priors(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.num_issue_classes)
            .map(|i| ((i + 1) as f64).powf(-self.prior_skew))
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub geo_objects: Vec<GeoObject>,
    pub history: Vec<HistoricalEvent>,
    pub weather: WeatherTable,
    pub visual: VisualTable,
}

const LAT_RANGE: (f64, f64) = (52.30, 52.42);
const LON_RANGE: (f64, f64) = (4.80, 5.00);
const CLUSTER_SD_M: f64 = 150.0;
const OBJECT_SD_M: f64 = 120.0;
const METERS_PER_DEGREE: f64 = 111_320.0;
const WEATHER_COLUMNS: [&str; 6] = [
    "temperature",
    "humidity",
    "wind_speed",
    "precipitation",
    "pressure",
    "cloud_cover",
];

const SYLLABLES: [&str; 20] = [
    "ba", "ke", "mi", "lo", "su", "ra", "te", "vi", "no", "pu", "da", "fe", "gi", "ho", "ju", "za", "we", "xi", "yo", "cu",
];

/// Deterministic pronounceable word for an index; all-letter, length >= 6.
pub fn synthetic_word(mut i: usize) -> String {
    let mut w = String::new();
    for _ in 0..3 {
        w.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
    }
    while i > 0 {
        w.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
    }
    w
}

fn main_name(m: usize) -> String {
    format!("main_{m:02}")
}

fn issue_name(i: usize) -> String {
    format!("issue_{i:02}")
}

fn object_type_name(t: usize) -> String {
    format!("objtype_{t:02}")
}

fn concept_name(i: usize, j: usize) -> String {
    format!("concept_{}", synthetic_word(10_000 + 2 * i + j))
}

fn offset(center: (f64, f64), sd_m: f64, r: &mut ChaCha8Rng) -> (f64, f64) {
    let n = Normal::new(0.0, sd_m).expect("finite sd");
    let dy = n.sample(r);
    let dx = n.sample(r);
    let lat = center.0 + dy / METERS_PER_DEGREE;
    let lon = center.1 + dx / (METERS_PER_DEGREE * center.0.to_radians().cos());
    (round_to(lat, 1e-6), round_to(lon, 1e-6))
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

fn uniform_point(r: &mut ChaCha8Rng) -> (f64, f64) {
    (
        round_to(r.gen_range(LAT_RANGE.0..LAT_RANGE.1), 1e-6),
        round_to(r.gen_range(LON_RANGE.0..LON_RANGE.1), 1e-6),
    )
}

fn draw_categorical(cdf: &[f64], r: &mut ChaCha8Rng) -> usize {
    let u: f64 = r.gen();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// The class a modality is rendered from for one report.
fn rendered_class(truth: usize, weight: f64, k: usize, r: &mut ChaCha8Rng) -> usize {
    if r.gen::<f64>() < weight {
        truth
    } else {
        r.gen_range(0..k)
    }
}

fn start_of_year() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2018, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

/// Preferred hours and weekday of an issue class.
fn time_profile(class: usize) -> ([u32; 3], u32) {
    let h = (3 * class as u32) % 24;
    ([h, (h + 1) % 24, (h + 2) % 24], class as u32 % 7)
}

struct ClassProfile {
    center: (f64, f64),
    words: Vec<String>,
    visual_dims: Vec<usize>,
    concepts: [String; 2],
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.check()?;
    let k = config.num_issue_classes;
    let mut setup = rng::rng(rng::derive_seed(config.seed, "synth/classes"));

    let inner_lat = (LAT_RANGE.0 + 0.01, LAT_RANGE.1 - 0.01);
    let inner_lon = (LON_RANGE.0 + 0.01, LON_RANGE.1 - 0.01);
    let profiles: Vec<ClassProfile> = (0..k)
        .map(|c| ClassProfile {
            center: (
                setup.gen_range(inner_lat.0..inner_lat.1),
                setup.gen_range(inner_lon.0..inner_lon.1),
            ),
            words: (0..config.class_words)
                .map(|j| synthetic_word(c * config.class_words + j))
                .collect(),
            visual_dims: sample(&mut setup, VISUAL_DIMS, config.visual_active_dims).into_vec(),
            concepts: [concept_name(c, 0), concept_name(c, 1)],
        })
        .collect();
    let filler: Vec<String> = (k * config.class_words..config.vocabulary_size)
        .map(synthetic_word)
        .collect();

    let mut geo_objects = Vec::new();
    let mut geo_rng = rng::rng(rng::derive_seed(config.seed, "synth/geo"));
    for (c, p) in profiles.iter().enumerate() {
        let t = object_type_name(c % config.geo_object_types);
        for _ in 0..config.objects_per_class {
            let (lat, lon) = offset(p.center, OBJECT_SD_M, &mut geo_rng);
            geo_objects.push(GeoObject {
                object_type: t.clone(),
                lat,
                lon,
            });
        }
    }
    for _ in 0..config.background_objects {
        let t = object_type_name(geo_rng.gen_range(0..config.geo_object_types));
        let (lat, lon) = uniform_point(&mut geo_rng);
        geo_objects.push(GeoObject { object_type: t, lat, lon });
    }

    let mut history = Vec::new();
    let mut hist_rng = rng::rng(rng::derive_seed(config.seed, "synth/history"));
    let start = start_of_year();
    for (c, p) in profiles.iter().enumerate() {
        for _ in 0..config.history_per_class {
            let (lat, lon) = offset(p.center, CLUSTER_SD_M, &mut hist_rng);
            let minutes = hist_rng.gen_range(0..365 * 24 * 60);
            history.push(HistoricalEvent {
                issue_type: issue_name(c),
                lat,
                lon,
                timestamp: start - Duration::days(365) + Duration::minutes(minutes),
            });
        }
    }

    let priors = config.priors();
    let cdf: Vec<f64> = priors
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let w = config.weights;
    let mut reports = Vec::with_capacity(config.num_reports);
    let mut visual = Vec::new();
    for i in 0..config.num_reports {
        let mut r = rng::rng(rng::derive_index(rng::derive_seed(config.seed, "synth/report"), i as u64));
        let truth = if i < k { i } else { draw_categorical(&cdf, &mut r) };
        let id = format!("r{i:06}");

        let tc = rendered_class(truth, w.text, k, &mut r);
        let mut words: Vec<&str> = (0..config.signal_words)
            .map(|_| profiles[tc].words[r.gen_range(0..config.class_words)].as_str())
            .collect();
        for _ in config.signal_words..config.words_per_report {
            words.push(&filler[r.gen_range(0..filler.len())]);
        }
        for j in (1..words.len()).rev() {
            words.swap(j, r.gen_range(0..=j));
        }

        let gc = rendered_class(truth, w.geo, k, &mut r);
        let (lat, lon) = offset(profiles[gc].center, CLUSTER_SD_M, &mut r);

        let hc = rendered_class(truth, w.time, k, &mut r);
        let (hours, weekday) = time_profile(hc);
        let hour = hours[r.gen_range(0..3)];
        let day = if r.gen::<f64>() < 0.7 { weekday } else { r.gen_range(0..7) };
        let week = r.gen_range(0..52i64);
        let minute = r.gen_range(0..60i64);
        let timestamp = start
            + Duration::days(7 * week + day as i64)
            + Duration::hours(hour as i64)
            + Duration::minutes(minute);

        let vc = rendered_class(truth, w.visual, k, &mut r);
        let has_image = r.gen::<f64>() < config.image_rate;
        if has_image {
            let mut vector: Vec<f64> = (0..VISUAL_DIMS).map(|_| noise.sample(&mut r)).collect();
            for &d in &profiles[vc].visual_dims {
                vector[d] += config.visual_signal;
            }
            for v in &mut vector {
                *v = round_to(*v, 1e-4);
            }
            let p1 = round_to(r.gen_range(0.5..0.95), 1e-4);
            let p2 = round_to(r.gen_range(0.0..(1.0 - p1)), 1e-4);
            visual.push(VisualFeatureEntry {
                report_id: id.clone(),
                vector,
                concepts: vec![
                    Concept {
                        label: profiles[vc].concepts[0].clone(),
                        prob: p1,
                    },
                    Concept {
                        label: profiles[vc].concepts[1].clone(),
                        prob: p2.min(p1),
                    },
                ],
            });
        }

        let label = if r.gen::<f64>() < config.label_noise {
            r.gen_range(0..k)
        } else {
            truth
        };
        reports.push(Report {
            id: id.clone(),
            text: words.join(" "),
            timestamp,
            lat,
            lon,
            main_class: main_name(label % config.num_main_classes),
            issue_class: issue_name(label),
            image_ref: has_image.then(|| format!("images/{id}.jpg")),
        });
    }

    let taxonomy = LabelTaxonomy::new(
        (0..config.num_main_classes).map(main_name).collect(),
        (0..k).map(issue_name).collect(),
        (0..k).map(|i| main_name(i % config.num_main_classes)).collect(),
    )?;
    Ok(SynthOutput {
        dataset: Dataset::validated(reports, taxonomy)?,
        geo_objects,
        history,
        weather: weather_table(config.seed),
        visual: VisualTable::new(visual)?,
    })
}

/// Hourly weather for 2018: seasonal and daily sinusoids plus noise.
pub fn weather_table(seed: u64) -> WeatherTable {
    let mut r = rng::rng(rng::derive_seed(seed, "synth/weather"));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let start = start_of_year();
    let tau = std::f64::consts::TAU;
    let rows = (0..365 * 24)
        .map(|h| {
            let day = h as f64 / 24.0;
            let season = (tau * (day - 100.0) / 365.0).sin();
            let daily = (tau * ((h % 24) as f64 - 9.0) / 24.0).sin();
            let mut e = || noise.sample(&mut r);
            let values = vec![
                round_to(10.0 + 8.0 * season + 3.0 * daily + e(), 0.1),
                round_to((75.0 - 10.0 * daily + 5.0 * e()).clamp(0.0, 100.0), 0.1),
                round_to((4.0 + 1.5 * e()).abs(), 0.1),
                round_to((0.4 * e()).max(0.0), 0.1),
                round_to(1013.0 + 6.0 * e(), 0.1),
                round_to((0.6 + 0.2 * e()).clamp(0.0, 1.0), 0.01),
            ];
            WeatherRow {
                timestamp: start + Duration::hours(h as i64),
                values,
            }
        })
        .collect();
    WeatherTable {
        column_names: WEATHER_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    #[test]
    fn words_are_distinct_tokens() {
        let words: Vec<String> = (0..2000).map(synthetic_word).collect();
        let mut sorted = words.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), words.len());
        for w in &words {
            assert_eq!(tokenize(w), vec![w.clone()]);
        }
    }

    #[test]
    fn config_checks() {
        let mut c = SynthConfig {
            num_reports: 3,
            ..Default::default()
        };
        assert!(generate(&c).is_err());
        c.num_reports = 100;
        c.label_noise = 1.0;
        assert!(c.check().is_err());
    }

    #[test]
    fn small_run_is_consistent() {
        let c = SynthConfig {
            num_reports: 60,
            ..Default::default()
        };
        let out = generate(&c).unwrap();
        assert_eq!(out.dataset.len(), 60);
        assert_eq!(out.visual.len(), 60);
        assert_eq!(out.weather.rows.len(), 8760);
        for e in out.visual.entries() {
            e.check().unwrap();
        }
        let p = c.priors();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
