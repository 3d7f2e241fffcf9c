//! The staged pipeline behind the command-line tool.
//!
//! Every stage reads its inputs from the run directory (or from explicit
//! input paths), writes its outputs there, and returns a one-line summary.
//! All randomness comes from the root seed through labeled derivation, so a
//! stage run twice with the same config writes identical bytes.
//!
//! Run directory layout:
//!
//! ```text
//! data/       reports.jsonl geo_objects.csv history.csv weather.csv visual.jsonl
//! split.json
//! models/     tfidf.json [word_vectors.json] fusion.json
//! features/   <block>.tsv geo_schema.csv geo_hist_schema.csv
//! graph/      edges.tsv nodes.tsv embeddings.tsv stats.json
//! eval/       metrics.json confusion.csv per_class.csv report.txt leaderboard.csv
//! search/     leaderboard.csv results.json
//! route/      decisions.jsonl
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{self, route_probabilities, ClassifierConfig, RoutingDecision};
use crate::dataset::{split_dataset, validate_dataset, BlockKind, Dataset, FeatureBlock, Target};
use crate::embed::skipgram::SkipGramConfig;
use crate::embed::{node2vec, report_embedding_block, WalkConfig};
use crate::error::{Error, Result};
use crate::eval::{confusion, f1_report, per_class_table, NamedReport};
use crate::fusion::{fit_fusion, leaderboard_csv, search_fusion, BlockPair, FusionConfig, FusionModel, FusionResult};
use crate::geo::{build_spatial_index, feature_schema, geo_block, historical_block, historical_index, write_schema_csv};
use crate::graph::{build_graph, graph_stats, unlabeled, GraphConfig, MultimodalGraph};
use crate::ingest::{self, VisualTable, VISUAL_DIMS};
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::synth::{self, SynthConfig};
use crate::temporal::{time_block, weather_block};
use crate::text::{build_vocabulary, report_text_block, tfidf_fit, tokenize, train_word_vectors, TextEncoder, TfidfModel, WordVectors};

/// Names of the feature blocks the pipeline can produce.
pub const BLOCK_NAMES: [&str; 7] = ["text", "image", "geo", "geo_hist", "time", "weather", "graph"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct InputPaths {
    pub reports: Option<PathBuf>,
    pub geo_objects: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub visual: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoding {
    #[default]
    Tfidf,
    Word2vec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub encoding: TextEncoding,
    pub max_terms: usize,
    pub min_df: u64,
    pub normalize: bool,
    pub word_vectors: SkipGramConfig,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            encoding: TextEncoding::Tfidf,
            max_terms: 50_000,
            min_df: 2,
            normalize: true,
            word_vectors: SkipGramConfig {
                dims: 100,
                window: 5,
                epochs: 3,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureToggles {
    pub text: bool,
    pub image: bool,
    pub geo: bool,
    pub geo_hist: bool,
    pub time: bool,
    pub weather: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        FeatureToggles {
            text: true,
            image: true,
            geo: true,
            geo_hist: true,
            time: true,
            weather: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub target: Target,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            target: Target::Main,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub walk: WalkConfig,
    pub skipgram: SkipGramConfig,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            walk: WalkConfig {
                walks_per_node: 10,
                walk_length: 40,
                ..Default::default()
            },
            skipgram: SkipGramConfig {
                dims: 64,
                window: 5,
                epochs: 1,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSection {
    pub raw_blocks: Vec<String>,
    pub prob_blocks: Vec<String>,
    pub folds: usize,
    pub in_sample: bool,
    /// Blocks considered by `fuse-search`.
    pub search_blocks: Vec<String>,
    pub search_budget: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            raw_blocks: vec!["text".into()],
            prob_blocks: vec!["image".into(), "geo".into(), "geo_hist".into(), "time".into()],
            folds: 5,
            in_sample: false,
            search_blocks: vec![
                "text".into(),
                "image".into(),
                "geo".into(),
                "geo_hist".into(),
                "time".into(),
                "weather".into(),
            ],
            search_budget: 729,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RouteConfig {
    /// Minimum top-class probability for automatic routing. Required by the
    /// `route` stage.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed. Must be set here or on the command line.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub inputs: InputPaths,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub features: FeatureToggles,
    pub text: TextConfig,
    pub graph: GraphConfig,
    pub embed: EmbedConfig,
    pub classifier: ClassifierConfig,
    pub fusion: FusionSection,
    pub route: RouteConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(text.as_str())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// A config with its seed and run directory resolved.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: PipelineConfig,
    pub seed: u64,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let seed = config
            .seed
            .ok_or_else(|| Error::Config("no seed given; set `seed` in the config or pass --seed".into()))?;
        let dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("urbanfuse-run"));
        Ok(Run { config, seed, dir })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn input(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.path(default))
    }

    pub fn reports_path(&self) -> PathBuf {
        self.input(&self.config.inputs.reports, "data/reports.jsonl")
    }
    pub fn geo_objects_path(&self) -> PathBuf {
        self.input(&self.config.inputs.geo_objects, "data/geo_objects.csv")
    }
    pub fn history_path(&self) -> PathBuf {
        self.input(&self.config.inputs.history, "data/history.csv")
    }
    pub fn weather_path(&self) -> PathBuf {
        self.input(&self.config.inputs.weather, "data/weather.csv")
    }
    pub fn visual_path(&self) -> PathBuf {
        self.input(&self.config.inputs.visual, "data/visual.jsonl")
    }
    pub fn block_path(&self, name: &str) -> PathBuf {
        self.path(&format!("features/{name}.tsv"))
    }
    pub fn model_path(&self) -> PathBuf {
        self.path("models/fusion.json")
    }
}

fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingStage {
            stage,
            path: path.to_path_buf(),
        })
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Format(e.to_string()))
}

fn from_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
}

/// `synth`: writes a synthetic dataset into `data/`.
pub fn stage_synth(run: &Run) -> Result<String> {
    let mut cfg = run.config.synth.clone();
    cfg.seed = derive_seed(run.seed, "synth");
    let out = synth::generate(&cfg)?;
    ensure_dir(&run.path("data"))?;
    ingest::save_reports(&out.dataset, &run.reports_path())?;
    ingest::save_geo_objects(&out.geo_objects, &run.geo_objects_path())?;
    ingest::save_historical_events(&out.history, &run.history_path())?;
    ingest::save_weather(&out.weather, &run.weather_path())?;
    ingest::save_visual_features(&out.visual, &run.visual_path())?;
    Ok(format!(
        "synth: {} reports, {} issue classes, {} main classes, {} geo objects, {} historical events, {} images",
        out.dataset.len(),
        out.dataset.taxonomy().issue_classes().len(),
        out.dataset.taxonomy().main_classes().len(),
        out.geo_objects.len(),
        out.history.len(),
        out.visual.len()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub test_fraction: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn load_dataset(run: &Run) -> Result<Dataset> {
    let path = run.reports_path();
    require(&path, "synth")?;
    ingest::load_reports(&path)
}

fn load_split(run: &Run) -> Result<SplitRecord> {
    let path = run.path("split.json");
    require(&path, "featurize")?;
    from_json(&path)
}

/// Image block: the visual vector of each report, zeros without an image.
pub fn image_block(name: &str, dataset: &Dataset, visual: &VisualTable) -> Result<FeatureBlock> {
    let mut m = Matrix::zeros(dataset.len(), VISUAL_DIMS);
    for (i, r) in dataset.reports().iter().enumerate() {
        if let Some(e) = visual.get(&r.id) {
            m.row_mut(i).copy_from_slice(&e.vector);
        }
    }
    let cols = (0..VISUAL_DIMS).map(|d| format!("visual_{d:04}")).collect();
    FeatureBlock::new(name, BlockKind::Raw, dataset.ids(), m, cols)
}

fn fit_tfidf(train: &Dataset, cfg: &TextConfig) -> Result<TfidfModel> {
    let corpus: Vec<Vec<String>> = train.reports().iter().map(|r| tokenize(&r.text)).collect();
    let vocab = build_vocabulary(&corpus, cfg.max_terms, cfg.min_df)?;
    Ok(tfidf_fit(&corpus, vocab, cfg.normalize))
}

/// `featurize`: fixes the split, fits text models on the training rows and
/// writes every enabled feature block.
pub fn stage_featurize(run: &Run) -> Result<String> {
    let dataset = load_dataset(run)?;
    let validation = validate_dataset(&dataset);
    if validation.has_errors() {
        let first = validation.errors().next().map(|f| f.message.clone()).unwrap_or_default();
        return Err(Error::Validation(first));
    }
    let cfg = &run.config;
    let (train, test) = split_dataset(&dataset, cfg.split.test_fraction, derive_seed(run.seed, "split"))?;
    let split = SplitRecord {
        test_fraction: cfg.split.test_fraction,
        train: train.ids(),
        test: test.ids(),
    };
    write_text(&run.path("split.json"), &to_json(&split)?)?;
    ensure_dir(&run.path("features"))?;
    ensure_dir(&run.path("models"))?;

    let tfidf = fit_tfidf(&train, &cfg.text)?;
    ingest::save_model(&tfidf, &run.path("models/tfidf.json"))?;
    let mut written = Vec::new();
    let toggles = &cfg.features;
    if toggles.text {
        let block = match cfg.text.encoding {
            TextEncoding::Tfidf => report_text_block("text", &dataset, TextEncoder::Tfidf(&tfidf))?,
            TextEncoding::Word2vec => {
                let corpus: Vec<Vec<String>> = train.reports().iter().map(|r| tokenize(&r.text)).collect();
                let mut wv_cfg = cfg.text.word_vectors.clone();
                wv_cfg.seed = derive_seed(run.seed, "word_vectors");
                let wv: WordVectors = train_word_vectors(&corpus, &wv_cfg)?;
                ingest::save_model(&wv, &run.path("models/word_vectors.json"))?;
                report_text_block("text", &dataset, TextEncoder::WordVectors(&wv))?
            }
        };
        ingest::save_block(&block, &run.block_path("text"))?;
        written.push(format!("text:{}", block.width()));
    }
    if toggles.image {
        let path = run.visual_path();
        require(&path, "synth")?;
        let visual = ingest::load_visual_features(&path)?;
        let block = image_block("image", &dataset, &visual)?;
        ingest::save_block(&block, &run.block_path("image"))?;
        written.push(format!("image:{}", block.width()));
    }
    if toggles.geo {
        let path = run.geo_objects_path();
        require(&path, "synth")?;
        let index = build_spatial_index(ingest::load_geo_objects(&path)?);
        let block = geo_block("geo", &dataset, &index)?;
        write_schema_csv(&feature_schema(index.types()), &run.path("features/geo_schema.csv"))?;
        ingest::save_block(&block, &run.block_path("geo"))?;
        written.push(format!("geo:{}", block.width()));
    }
    if toggles.geo_hist {
        let path = run.history_path();
        require(&path, "synth")?;
        let events = ingest::load_historical_events(&path)?;
        let block = historical_block("geo_hist", &dataset, &events)?;
        let index = historical_index(&events);
        write_schema_csv(&feature_schema(index.types()), &run.path("features/geo_hist_schema.csv"))?;
        ingest::save_block(&block, &run.block_path("geo_hist"))?;
        written.push(format!("geo_hist:{}", block.width()));
    }
    if toggles.time {
        let block = time_block("time", &dataset)?;
        ingest::save_block(&block, &run.block_path("time"))?;
        written.push(format!("time:{}", block.width()));
    }
    if toggles.weather {
        let path = run.weather_path();
        require(&path, "synth")?;
        let block = weather_block("weather", &dataset, &ingest::load_weather(&path)?)?;
        ingest::save_block(&block, &run.block_path("weather"))?;
        written.push(format!("weather:{}", block.width()));
    }
    Ok(format!(
        "featurize: {} train / {} test reports, {} warnings, blocks {}",
        split.train.len(),
        split.test.len(),
        validation.warnings().count(),
        written.join(" ")
    ))
}

/// `graph`: builds the multimodal graph over all reports.
pub fn stage_graph(run: &Run) -> Result<String> {
    let dataset = load_dataset(run)?;
    let tfidf_path = run.path("models/tfidf.json");
    require(&tfidf_path, "featurize")?;
    let tfidf: TfidfModel = ingest::load_model(&tfidf_path)?;
    require(&run.geo_objects_path(), "synth")?;
    let index = build_spatial_index(ingest::load_geo_objects(&run.geo_objects_path())?);
    let visual = if run.visual_path().exists() {
        ingest::load_visual_features(&run.visual_path())?
    } else {
        VisualTable::new(Vec::new())?
    };
    let graph = build_graph(&unlabeled(&dataset), &index, &visual, &tfidf, &run.config.graph)?;
    ensure_dir(&run.path("graph"))?;
    graph.write_edge_list(&run.path("graph/edges.tsv"), &run.path("graph/nodes.tsv"))?;
    let stats = graph_stats(&graph);
    write_text(&run.path("graph/stats.json"), &to_json(&stats)?)?;
    let kinds: Vec<String> = stats
        .nodes_per_kind
        .iter()
        .map(|(k, n)| format!("{}={n}", k.as_str()))
        .collect();
    Ok(format!(
        "graph: {} nodes, {} edges ({})",
        stats.node_count,
        stats.edge_count,
        kinds.join(" ")
    ))
}

/// `embed`: node2vec over the stored graph; writes all node vectors and the
/// `graph` feature block.
pub fn stage_embed(run: &Run) -> Result<String> {
    let dataset = load_dataset(run)?;
    let edges = run.path("graph/edges.tsv");
    require(&edges, "graph")?;
    let graph = MultimodalGraph::read_edge_list(&edges, &run.path("graph/nodes.tsv"))?;
    let mut walk = run.config.embed.walk.clone();
    walk.seed = derive_seed(run.seed, "embed/walk");
    let mut sg = run.config.embed.skipgram.clone();
    sg.seed = derive_seed(run.seed, "embed/skipgram");
    let emb = node2vec(&graph, &walk, &sg)?;
    ingest::save_embeddings(emb.node_ids(), emb.matrix(), &run.path("graph/embeddings.tsv"))?;
    let block = report_embedding_block("graph", &emb, &dataset)?;
    ensure_dir(&run.path("features"))?;
    ingest::save_block(&block, &run.block_path("graph"))?;
    let last = emb.stats.epoch_loss.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "embed: {} nodes x {} dims, {} pairs per epoch, final epoch loss {:.6}",
        emb.node_ids().len(),
        emb.dims(),
        emb.stats.pairs_per_epoch,
        last
    ))
}

/// Train/test rows of the named blocks plus the labels.
pub struct LoadedSplit {
    pub blocks: Vec<BlockPair>,
    pub y_train: Vec<usize>,
    pub y_test: Vec<usize>,
    pub class_labels: Vec<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

fn stage_of_block(name: &str) -> &'static str {
    if name == "graph" {
        "embed"
    } else {
        "featurize"
    }
}

pub fn load_split_blocks(run: &Run, names: &[String]) -> Result<LoadedSplit> {
    let dataset = load_dataset(run)?;
    let split = load_split(run)?;
    let target = run.config.split.target;
    let train = dataset.subset_by_ids(&split.train)?;
    let test = dataset.subset_by_ids(&split.test)?;
    let mut blocks = Vec::with_capacity(names.len());
    for name in names {
        if !BLOCK_NAMES.contains(&name.as_str()) {
            return Err(Error::Config(format!("unknown feature block {name}")));
        }
        let path = run.block_path(name);
        require(&path, stage_of_block(name))?;
        let block = ingest::load_block(&path)?;
        blocks.push(BlockPair::new(block.select(&split.train)?, block.select(&split.test)?)?);
    }
    Ok(LoadedSplit {
        blocks,
        y_train: train.labels(target)?,
        y_test: test.labels(target)?,
        class_labels: dataset.taxonomy().labels(target).to_vec(),
        train_ids: split.train,
        test_ids: split.test,
    })
}

fn fusion_config(run: &Run) -> FusionConfig {
    let f = &run.config.fusion;
    FusionConfig {
        raw_blocks: f.raw_blocks.clone(),
        prob_blocks: f.prob_blocks.clone(),
        classifier: run.config.classifier.clone(),
        folds: f.folds,
        seed: derive_seed(run.seed, "fusion"),
        in_sample: f.in_sample,
    }
}

/// `train`: fits the configured fusion model on the training rows.
pub fn stage_train(run: &Run) -> Result<String> {
    let config = fusion_config(run);
    config.check()?;
    let names: Vec<String> = config.raw_blocks.iter().chain(&config.prob_blocks).cloned().collect();
    let data = load_split_blocks(run, &names)?;
    let (model, fused) = fit_fusion(&config, &data.blocks, &data.y_train, &data.class_labels)?;
    ensure_dir(&run.path("models"))?;
    ingest::save_model(&model, &run.model_path())?;
    Ok(format!(
        "train: {} {} on {} rows x {} columns",
        config.classifier.short_name(),
        config.label(),
        fused.train.rows(),
        fused.train.cols()
    ))
}

fn load_fusion_model(run: &Run) -> Result<FusionModel> {
    let path = run.model_path();
    require(&path, "train")?;
    ingest::load_model(&path)
}

#[derive(Debug, Clone, Serialize)]
struct Metrics {
    model: String,
    classifier: String,
    test_rows: usize,
    accuracy: f64,
    macro_f1: f64,
    micro_f1: f64,
    weighted_f1: f64,
}

/// `evaluate`: scores the trained model on the test rows next to one
/// single-block baseline per block it uses.
pub fn stage_evaluate(run: &Run) -> Result<String> {
    let model = load_fusion_model(run)?;
    let names: Vec<String> = model
        .config
        .raw_blocks
        .iter()
        .chain(&model.config.prob_blocks)
        .cloned()
        .collect();
    let data = load_split_blocks(run, &names)?;
    let test_blocks: Vec<&FeatureBlock> = data.blocks.iter().map(|b| &b.test).collect();
    let probs = model.predict_proba(&test_blocks)?;
    let pred: Vec<usize> = probs.iter_rows().map(classify::argmax).collect();
    let cm = confusion(&data.y_test, &pred, &data.class_labels)?;
    let fused_report = f1_report(&cm)?;

    let mut results = vec![FusionResult {
        config: model.config.clone(),
        enumeration_index: 0,
        weighted_f1: fused_report.weighted_f1,
        macro_f1: fused_report.macro_f1,
        micro_f1: fused_report.micro_f1,
        accuracy: fused_report.accuracy,
        per_class: fused_report.per_class.clone(),
    }];
    let mut baselines = Vec::new();
    for (i, pair) in data.blocks.iter().enumerate() {
        let m = classify::train(&model.config.classifier, pair.train.matrix(), &data.y_train, &data.class_labels)?;
        let p = m.predict(pair.test.matrix())?;
        let r = f1_report(&confusion(&data.y_test, &p, &data.class_labels)?)?;
        let mut cfg = model.config.clone();
        cfg.raw_blocks = vec![pair.name().to_string()];
        cfg.prob_blocks.clear();
        results.push(FusionResult {
            config: cfg,
            enumeration_index: i + 1,
            weighted_f1: r.weighted_f1,
            macro_f1: r.macro_f1,
            micro_f1: r.micro_f1,
            accuracy: r.accuracy,
            per_class: r.per_class.clone(),
        });
        baselines.push((pair.name().to_string(), r));
    }
    let mut named: Vec<NamedReport<'_>> = baselines
        .iter()
        .map(|(n, r)| NamedReport {
            name: n.clone(),
            report: r,
        })
        .collect();
    named.push(NamedReport {
        name: "fused".into(),
        report: &fused_report,
    });
    let table = per_class_table(&named, None)?;
    crate::fusion::rank(&mut results);

    let metrics = Metrics {
        model: model.config.label(),
        classifier: model.config.classifier.short_name().to_string(),
        test_rows: data.y_test.len(),
        accuracy: fused_report.accuracy,
        macro_f1: fused_report.macro_f1,
        micro_f1: fused_report.micro_f1,
        weighted_f1: fused_report.weighted_f1,
    };
    write_text(&run.path("eval/metrics.json"), &to_json(&metrics)?)?;
    write_text(&run.path("eval/confusion.csv"), &cm.to_csv())?;
    write_text(&run.path("eval/per_class.csv"), &table.to_csv())?;
    write_text(&run.path("eval/report.txt"), &fused_report.to_text())?;
    write_text(&run.path("eval/leaderboard.csv"), &leaderboard_csv(&results))?;
    Ok(format!(
        "evaluate: {} rows, weighted F1 {:.4}, macro F1 {:.4}, accuracy {:.4}",
        data.y_test.len(),
        fused_report.weighted_f1,
        fused_report.macro_f1,
        fused_report.accuracy
    ))
}

/// `fuse-search`: every early/late/hybrid combination of the search blocks.
pub fn stage_fuse_search(run: &Run) -> Result<String> {
    let base = fusion_config(run);
    let names = run.config.fusion.search_blocks.clone();
    let data = load_split_blocks(run, &names)?;
    let results = search_fusion(
        &data.blocks,
        &base,
        &data.y_train,
        &data.class_labels,
        &data.y_test,
        run.config.fusion.search_budget,
    )?;
    write_text(&run.path("search/leaderboard.csv"), &leaderboard_csv(&results))?;
    write_text(&run.path("search/results.json"), &to_json(&results)?)?;
    let best = &results[0];
    Ok(format!(
        "fuse-search: {} configs, best {} {} weighted F1 {:.4}",
        results.len(),
        best.config.classifier.short_name(),
        best.config.label(),
        best.weighted_f1
    ))
}

#[derive(Debug, Clone, Serialize)]
struct RouteLine<'a> {
    report_id: &'a str,
    #[serde(flatten)]
    decision: RouteOutcome<'a>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
enum RouteOutcome<'a> {
    Auto { class: &'a str, probability: f64 },
    Defer { probability: f64 },
}

/// `route`: applies the confidence threshold to every test report.
pub fn stage_route(run: &Run) -> Result<String> {
    let threshold = run
        .config
        .route
        .threshold
        .ok_or_else(|| Error::Config("route needs a threshold (route.threshold or --threshold)".into()))?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [0, 1]")));
    }
    let model = load_fusion_model(run)?;
    let names: Vec<String> = model
        .config
        .raw_blocks
        .iter()
        .chain(&model.config.prob_blocks)
        .cloned()
        .collect();
    let data = load_split_blocks(run, &names)?;
    let test_blocks: Vec<&FeatureBlock> = data.blocks.iter().map(|b| &b.test).collect();
    let probs = model.predict_proba(&test_blocks)?;
    let mut out = String::new();
    let mut counts = BTreeMap::from([("auto", 0usize), ("defer", 0usize)]);
    for (id, row) in data.test_ids.iter().zip(probs.iter_rows()) {
        let decision = match route_probabilities(row, threshold) {
            RoutingDecision::Auto { class, probability } => {
                *counts.get_mut("auto").expect("key") += 1;
                RouteOutcome::Auto {
                    class: &data.class_labels[class],
                    probability,
                }
            }
            RoutingDecision::Defer { probability } => {
                *counts.get_mut("defer").expect("key") += 1;
                RouteOutcome::Defer { probability }
            }
        };
        let line = RouteLine {
            report_id: id,
            decision,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    write_text(&run.path("route/decisions.jsonl"), &out)?;
    Ok(format!(
        "route: {} reports at threshold {threshold}, {} auto, {} deferred",
        data.test_ids.len(),
        counts["auto"],
        counts["defer"]
    ))
}
