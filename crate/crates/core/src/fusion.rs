//! Early, late and hybrid fusion of feature blocks.
//!
//! A [`FusionConfig`] names the blocks that enter the final classifier as-is
//! (`raw_blocks`) and the blocks that enter as class probabilities from a
//! per-block classifier (`prob_blocks`). Early fusion has no probability
//! blocks, late fusion has no raw blocks.
//!
//! Probability features for training rows are out-of-fold: each training row
//! is scored by a model trained on the other folds. Test rows are scored by a
//! model trained on all training rows. Test labels are only used by
//! [`search_fusion`] to score finished models.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{self, ClassifierConfig, ClassifierModel};
use crate::dataset::{BlockKind, FeatureBlock};
use crate::error::{Error, Result};
use crate::eval::{confusion, f1_report, ClassScore};
use crate::ingest::Persist;
use crate::matrix::Matrix;
use crate::rng;

/// Concatenates blocks column-wise. Column names get a `block:` prefix.
pub fn early_fuse(blocks: &[&FeatureBlock]) -> Result<FeatureBlock> {
    let Some(first) = blocks.first() else {
        return Err(Error::invalid("nothing to fuse"));
    };
    for b in &blocks[1..] {
        if b.report_ids() != first.report_ids() {
            return Err(Error::Alignment(format!(
                "blocks {} and {} have different report order",
                first.name(),
                b.name()
            )));
        }
    }
    if blocks.len() == 1 {
        return Ok((*first).clone());
    }
    let mats: Vec<&Matrix> = blocks.iter().map(|b| b.matrix()).collect();
    let names = blocks
        .iter()
        .flat_map(|b| b.column_names().iter().map(move |c| format!("{}:{c}", b.name())))
        .collect();
    let name = blocks.iter().map(|b| b.name()).collect::<Vec<_>>().join("+");
    FeatureBlock::new(
        name,
        BlockKind::Raw,
        first.report_ids().to_vec(),
        Matrix::hstack(&mats)?,
        names,
    )
}

/// The train and test rows of one named block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPair {
    pub train: FeatureBlock,
    pub test: FeatureBlock,
}

impl BlockPair {
    pub fn new(train: FeatureBlock, test: FeatureBlock) -> Result<Self> {
        if train.name() != test.name() || train.width() != test.width() || train.kind() != test.kind() {
            return Err(Error::Alignment(format!(
                "train block {} and test block {} do not match",
                train.name(),
                test.name()
            )));
        }
        Ok(BlockPair { train, test })
    }

    pub fn name(&self) -> &str {
        self.train.name()
    }
}

fn find<'a>(blocks: &'a [BlockPair], name: &str) -> Result<&'a BlockPair> {
    blocks
        .iter()
        .find(|b| b.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown feature block {name}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub raw_blocks: Vec<String>,
    pub prob_blocks: Vec<String>,
    pub classifier: ClassifierConfig,
    pub folds: usize,
    pub seed: u64,
    /// Score training rows with the full-train model instead of out-of-fold
    /// models. Leaks labels; only for comparison runs.
    pub in_sample: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            raw_blocks: Vec::new(),
            prob_blocks: Vec::new(),
            classifier: ClassifierConfig::default(),
            folds: 5,
            seed: 0,
            in_sample: false,
        }
    }
}

impl FusionConfig {
    pub fn check(&self) -> Result<()> {
        if self.raw_blocks.is_empty() && self.prob_blocks.is_empty() {
            return Err(Error::Config("fusion config selects no blocks".into()));
        }
        if let Some(dup) = self.raw_blocks.iter().find(|b| self.prob_blocks.contains(b)) {
            return Err(Error::Config(format!("block {dup} is both raw and probability")));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        Ok(())
    }

    /// Leaderboard label, e.g. `text, graph, prob_time, prob_image`.
    pub fn label(&self) -> String {
        self.raw_blocks
            .iter()
            .cloned()
            .chain(self.prob_blocks.iter().map(|b| format!("prob_{b}")))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn block_count(&self) -> usize {
        self.raw_blocks.len() + self.prob_blocks.len()
    }
}

/// Stratified fold assignment: members of each class are shuffled and dealt
/// round-robin, continuing where the previous class stopped.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid("folds must be >= 2"));
    }
    if folds > y.len() {
        return Err(Error::invalid(format!("{folds} folds for {} rows", y.len())));
    }
    let k = y.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); k];
    for (i, &c) in y.iter().enumerate() {
        members[c].push(i);
    }
    let mut r = rng::rng(rng::derive_seed(seed, "folds"));
    let mut assign = vec![0; y.len()];
    let mut next = 0;
    for m in &mut members {
        m.shuffle(&mut r);
        for &i in m.iter() {
            assign[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok(assign)
}

/// Out-of-fold probability features for one block.
#[derive(Debug, Clone)]
pub struct OofOutput {
    /// `prob_<name>` block over the training rows.
    pub train: FeatureBlock,
    /// Fold of every training row.
    pub fold_of_row: Vec<usize>,
    /// Training row indices of each fold model.
    pub fold_train_rows: Vec<Vec<usize>>,
    /// Model fit on all training rows, used for test rows.
    pub full_model: ClassifierModel,
    /// Classes with fewer members than folds.
    pub warnings: Vec<String>,
}

fn prob_columns(block: &str, class_labels: &[String]) -> Vec<String> {
    class_labels.iter().map(|c| format!("prob_{block}_{c}")).collect()
}

fn prob_block(source: &FeatureBlock, probs: Matrix, class_labels: &[String]) -> Result<FeatureBlock> {
    FeatureBlock::new(
        format!("prob_{}", source.name()),
        BlockKind::Probability,
        source.report_ids().to_vec(),
        probs,
        prob_columns(source.name(), class_labels),
    )
}

pub fn oof_probabilities(
    block: &FeatureBlock,
    y_train: &[usize],
    class_labels: &[String],
    classifier: &ClassifierConfig,
    folds: usize,
    seed: u64,
) -> Result<OofOutput> {
    if block.len() != y_train.len() {
        return Err(Error::invalid("block rows and labels differ in length"));
    }
    let fold_seed = rng::derive_seed(seed, block.name());
    let fold_of_row = stratified_folds(y_train, folds, fold_seed)?;
    let mut warnings = Vec::new();
    let mut counts = vec![0usize; class_labels.len()];
    for &c in y_train {
        counts[c] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 && n < folds {
            warnings.push(format!(
                "class {} has {n} training rows, fewer than {folds} folds",
                class_labels[c]
            ));
        }
    }
    let x = block.matrix();
    let fold_train_rows: Vec<Vec<usize>> = (0..folds)
        .map(|f| (0..y_train.len()).filter(|&i| fold_of_row[i] != f).collect())
        .collect();
    let fold_results: Vec<(Vec<usize>, Matrix)> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<(Vec<usize>, Matrix)> {
            let rows = &fold_train_rows[f];
            let held: Vec<usize> = (0..y_train.len()).filter(|&i| fold_of_row[i] == f).collect();
            let ys: Vec<usize> = rows.iter().map(|&i| y_train[i]).collect();
            let model = classify::train(classifier, &x.select_rows(rows), &ys, class_labels)?;
            let p = model.predict_proba(&x.select_rows(&held))?;
            Ok((held, p))
        })
        .collect::<Result<_>>()?;
    let full_model = classify::train(classifier, x, y_train, class_labels)?;
    let mut probs = Matrix::zeros(y_train.len(), class_labels.len());
    for (held, p) in &fold_results {
        for (j, &i) in held.iter().enumerate() {
            probs.row_mut(i).copy_from_slice(p.row(j));
        }
    }
    Ok(OofOutput {
        train: prob_block(block, probs, class_labels)?,
        fold_of_row,
        fold_train_rows,
        full_model,
        warnings,
    })
}

/// Fitted per-block classifier plus its train-row probabilities.
#[derive(Debug, Clone)]
struct ProbFeature {
    train: Matrix,
    model: ClassifierModel,
}

fn prob_feature(
    pair: &BlockPair,
    y_train: &[usize],
    class_labels: &[String],
    config: &FusionConfig,
) -> Result<ProbFeature> {
    if pair.train.kind() == BlockKind::Probability {
        return Err(Error::Config(format!(
            "block {} already holds probabilities and cannot be stacked again",
            pair.name()
        )));
    }
    if config.in_sample {
        let model = classify::train(&config.classifier, pair.train.matrix(), y_train, class_labels)?;
        let train = model.predict_proba(pair.train.matrix())?;
        return Ok(ProbFeature { train, model });
    }
    let oof = oof_probabilities(&pair.train, y_train, class_labels, &config.classifier, config.folds, config.seed)?;
    Ok(ProbFeature {
        train: oof.train.matrix().clone(),
        model: oof.full_model,
    })
}

/// Train and test design matrices for one fusion config.
#[derive(Debug, Clone)]
pub struct FusedMatrices {
    pub train: Matrix,
    pub test: Matrix,
    pub column_names: Vec<String>,
}

pub fn hybrid_fuse(
    config: &FusionConfig,
    blocks: &[BlockPair],
    y_train: &[usize],
    class_labels: &[String],
) -> Result<FusedMatrices> {
    let mut cache = ProbCache::default();
    let fused = fuse_with_cache(config, blocks, y_train, class_labels, &mut cache)?;
    Ok(fused.matrices)
}

#[derive(Default)]
struct ProbCache {
    features: HashMap<String, ProbFeature>,
}

struct Fused {
    matrices: FusedMatrices,
    prob_models: Vec<(String, ClassifierModel)>,
}

fn fuse_with_cache(
    config: &FusionConfig,
    blocks: &[BlockPair],
    y_train: &[usize],
    class_labels: &[String],
    cache: &mut ProbCache,
) -> Result<Fused> {
    config.check()?;
    let first = find(blocks, config.raw_blocks.first().or(config.prob_blocks.first()).expect("checked"))?;
    let (train_ids, test_ids) = (first.train.report_ids(), first.test.report_ids());
    let mut train_parts = Vec::new();
    let mut test_parts = Vec::new();
    let mut names = Vec::new();
    for name in &config.raw_blocks {
        let b = find(blocks, name)?;
        if b.train.report_ids() != train_ids || b.test.report_ids() != test_ids {
            return Err(Error::Alignment(format!("block {name} rows are not aligned")));
        }
        train_parts.push(b.train.matrix().clone());
        test_parts.push(b.test.matrix().clone());
        names.extend(b.train.column_names().iter().map(|c| format!("{name}:{c}")));
    }
    let mut prob_models = Vec::new();
    for name in &config.prob_blocks {
        let b = find(blocks, name)?;
        if b.train.report_ids() != train_ids || b.test.report_ids() != test_ids {
            return Err(Error::Alignment(format!("block {name} rows are not aligned")));
        }
        if !cache.features.contains_key(name) {
            let pf = prob_feature(b, y_train, class_labels, config)?;
            cache.features.insert(name.clone(), pf);
        }
        let pf = &cache.features[name];
        train_parts.push(pf.train.clone());
        test_parts.push(pf.model.predict_proba(b.test.matrix())?);
        names.extend(prob_columns(name, class_labels));
        prob_models.push((name.clone(), pf.model.clone()));
    }
    let tr: Vec<&Matrix> = train_parts.iter().collect();
    let te: Vec<&Matrix> = test_parts.iter().collect();
    Ok(Fused {
        matrices: FusedMatrices {
            train: Matrix::hstack(&tr)?,
            test: Matrix::hstack(&te)?,
            column_names: names,
        },
        prob_models,
    })
}

/// A trained fusion pipeline: per-block probability models plus the final
/// classifier over the fused columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub prob_models: Vec<(String, ClassifierModel)>,
    pub final_model: ClassifierModel,
}

impl Persist for FusionModel {
    const KIND: &'static str = "fusion";
}

/// Fits prob-block models (out-of-fold on train) and the final classifier.
pub fn fit_fusion(
    config: &FusionConfig,
    blocks: &[BlockPair],
    y_train: &[usize],
    class_labels: &[String],
) -> Result<(FusionModel, FusedMatrices)> {
    let mut cache = ProbCache::default();
    let fused = fuse_with_cache(config, blocks, y_train, class_labels, &mut cache)?;
    let final_model = classify::train(&config.classifier, &fused.matrices.train, y_train, class_labels)?;
    Ok((
        FusionModel {
            config: config.clone(),
            prob_models: fused.prob_models,
            final_model,
        },
        fused.matrices,
    ))
}

impl FusionModel {
    /// Fused design matrix for arbitrary rows; `blocks` maps block name to
    /// rows in a common report order.
    pub fn design_matrix(&self, blocks: &[&FeatureBlock]) -> Result<Matrix> {
        let get = |name: &str| {
            blocks
                .iter()
                .find(|b| b.name() == name)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing feature block {name}")))
        };
        let raw: Vec<&FeatureBlock> = self.config.raw_blocks.iter().map(|n| get(n)).collect::<Result<_>>()?;
        let prob: Vec<&FeatureBlock> = self.prob_models.iter().map(|(n, _)| get(n)).collect::<Result<_>>()?;
        let ids = raw.first().or(prob.first()).map(|b| b.report_ids()).unwrap_or_default();
        if let Some(b) = raw.iter().chain(&prob).find(|b| b.report_ids() != ids) {
            return Err(Error::Alignment(format!("block {} rows are not aligned", b.name())));
        }
        let mut parts: Vec<Matrix> = raw.iter().map(|b| b.matrix().clone()).collect();
        for ((_, model), b) in self.prob_models.iter().zip(&prob) {
            parts.push(model.predict_proba(b.matrix())?);
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        Matrix::hstack(&refs)
    }

    pub fn predict_proba(&self, blocks: &[&FeatureBlock]) -> Result<Matrix> {
        self.final_model.predict_proba(&self.design_matrix(blocks)?)
    }

    fn raw_width(&self) -> usize {
        self.final_model.num_features() - self.prob_models.len() * self.final_model.num_classes()
    }

    /// Width of a flat input row: the raw blocks, then the inputs of each
    /// probability block, both in config order.
    pub fn input_width(&self) -> usize {
        self.raw_width() + self.prob_models.iter().map(|(_, m)| m.num_features()).sum::<usize>()
    }

    /// Class probabilities for flat rows laid out as in [`FusionModel::input_width`].
    pub fn predict_proba_flat(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape {
                expected: self.input_width(),
                found: x.cols(),
            });
        }
        let raw = self.raw_width();
        let mut parts = Vec::with_capacity(1 + self.prob_models.len());
        if raw > 0 {
            parts.push(x.slice_cols(0, raw));
        }
        let mut at = raw;
        for (_, model) in &self.prob_models {
            let w = model.num_features();
            parts.push(model.predict_proba(&x.slice_cols(at, at + w))?);
            at += w;
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        self.final_model.predict_proba(&Matrix::hstack(&refs)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub config: FusionConfig,
    /// Position in the enumeration order.
    pub enumeration_index: usize,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassScore>,
}

/// Role of a block in one enumerated config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Absent,
    Raw,
    Prob,
}

/// Every assignment of blocks to {absent, raw, prob} except all-absent, in
/// base-3 counting order (block 0 is the least significant digit).
/// Probability-kind blocks are never assigned `Prob`.
pub fn enumerate_assignments(kinds: &[BlockKind]) -> Vec<Vec<Role>> {
    let b = kinds.len() as u32;
    let total = 3usize.pow(b);
    (1..total)
        .filter_map(|mut code| {
            let mut roles = Vec::with_capacity(kinds.len());
            for kind in kinds {
                let role = match code % 3 {
                    0 => Role::Absent,
                    1 => Role::Raw,
                    _ => Role::Prob,
                };
                if role == Role::Prob && *kind == BlockKind::Probability {
                    return None;
                }
                roles.push(role);
                code /= 3;
            }
            Some(roles)
        })
        .collect()
}

/// Trains and scores every fusion combination (up to `budget`) on the fixed
/// split, ranked by weighted F1, then fewer blocks, then enumeration order.
pub fn search_fusion(
    blocks: &[BlockPair],
    base: &FusionConfig,
    y_train: &[usize],
    class_labels: &[String],
    test_labels: &[usize],
    budget: usize,
) -> Result<Vec<FusionResult>> {
    if budget < 1 {
        return Err(Error::invalid("search budget must be >= 1"));
    }
    if blocks.is_empty() {
        return Err(Error::invalid("need at least one block"));
    }
    let kinds: Vec<BlockKind> = blocks.iter().map(|b| b.train.kind()).collect();
    let mut assignments = enumerate_assignments(&kinds);
    assignments.truncate(budget);
    let configs: Vec<FusionConfig> = assignments
        .iter()
        .map(|roles| {
            let mut c = base.clone();
            c.raw_blocks.clear();
            c.prob_blocks.clear();
            for (b, role) in blocks.iter().zip(roles) {
                match role {
                    Role::Raw => c.raw_blocks.push(b.name().to_string()),
                    Role::Prob => c.prob_blocks.push(b.name().to_string()),
                    Role::Absent => {}
                }
            }
            c
        })
        .collect();

    // Probability features depend only on the block, so fit them once.
    let needed: Vec<&BlockPair> = blocks
        .iter()
        .filter(|b| configs.iter().any(|c| c.prob_blocks.iter().any(|n| n == b.name())))
        .collect();
    let feats: Vec<(String, ProbFeature)> = needed
        .par_iter()
        .map(|b| Ok((b.name().to_string(), prob_feature(b, y_train, class_labels, base)?)))
        .collect::<Result<_>>()?;
    let cache_template: HashMap<String, ProbFeature> = feats.into_iter().collect();

    let mut results: Vec<FusionResult> = configs
        .par_iter()
        .enumerate()
        .map(|(idx, config)| {
            let mut cache = ProbCache {
                features: config
                    .prob_blocks
                    .iter()
                    .map(|n| (n.clone(), cache_template[n].clone()))
                    .collect(),
            };
            let fused = fuse_with_cache(config, blocks, y_train, class_labels, &mut cache)?;
            let model = classify::train(&config.classifier, &fused.matrices.train, y_train, class_labels)?;
            let pred = model.predict(&fused.matrices.test)?;
            let report = f1_report(&confusion(test_labels, &pred, class_labels)?)?;
            Ok(FusionResult {
                config: config.clone(),
                enumeration_index: idx,
                weighted_f1: report.weighted_f1,
                macro_f1: report.macro_f1,
                micro_f1: report.micro_f1,
                accuracy: report.accuracy,
                per_class: report.per_class,
            })
        })
        .collect::<Result<_>>()?;
    rank(&mut results);
    Ok(results)
}

pub fn rank(results: &mut [FusionResult]) {
    results.sort_by(|a, b| {
        b.weighted_f1
            .total_cmp(&a.weighted_f1)
            .then(a.config.block_count().cmp(&b.config.block_count()))
            .then(a.enumeration_index.cmp(&b.enumeration_index))
    });
}

/// Leaderboard CSV: rank, classifier, features, scores.
pub fn leaderboard_csv(results: &[FusionResult]) -> String {
    let mut s = String::from("rank,classifier,features,weighted_f1,macro_f1,micro_f1,accuracy\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},\"{}\",{:.6},{:.6},{:.6},{:.6}",
            i + 1,
            r.config.classifier.short_name(),
            r.config.label(),
            r.weighted_f1,
            r.macro_f1,
            r.micro_f1,
            r.accuracy
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(name: &str, ids: &[&str], width: usize) -> FeatureBlock {
        let ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        let data = (0..ids.len() * width).map(|v| v as f64).collect();
        let m = Matrix::from_vec(ids.len(), width, data).unwrap();
        let cols = (0..width).map(|c| format!("f{c}")).collect();
        FeatureBlock::new(name, BlockKind::Raw, ids, m, cols).unwrap()
    }

    #[test]
    fn early_fuse_widths() {
        let a = block("a", &["x", "y"], 3);
        let b = block("b", &["x", "y"], 2);
        let f = early_fuse(&[&a, &b]).unwrap();
        assert_eq!(f.width(), 5);
        assert_eq!(f.column_names()[3], "b:f0");
        assert_eq!(early_fuse(&[&a]).unwrap().matrix(), a.matrix());
        let c = block("c", &["y", "x"], 1);
        assert!(matches!(early_fuse(&[&a, &c]), Err(Error::Alignment(_))));
    }

    #[test]
    fn two_blocks_give_eight_configs() {
        let e = enumerate_assignments(&[BlockKind::Raw, BlockKind::Raw]);
        assert_eq!(e.len(), 8);
        let e = enumerate_assignments(&[BlockKind::Raw, BlockKind::Probability]);
        assert_eq!(e.len(), 5);
        assert_eq!(enumerate_assignments(&[BlockKind::Raw; 6]).len(), 728);
    }

    #[test]
    fn config_validation() {
        let mut c = FusionConfig::default();
        assert!(c.check().is_err());
        c.raw_blocks = vec!["a".into()];
        c.prob_blocks = vec!["a".into()];
        assert!(c.check().is_err());
        c.prob_blocks = vec!["b".into()];
        assert!(c.check().is_ok());
        assert_eq!(c.label(), "a, prob_b");
    }

    #[test]
    fn folds_are_stratified_and_bounded() {
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let f = stratified_folds(&y, 5, 1).unwrap();
        for fold in 0..5 {
            let members: Vec<usize> = (0..20).filter(|&i| f[i] == fold).collect();
            assert_eq!(members.len(), 4);
            assert_eq!(members.iter().filter(|&&i| y[i] == 0).count(), 2);
        }
        assert!(stratified_folds(&[0, 1], 3, 1).is_err());
    }
}
