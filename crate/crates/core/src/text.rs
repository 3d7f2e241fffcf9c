//! Tokenization, vocabularies, TF-IDF and averaged word vectors.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{BlockKind, Dataset, FeatureBlock};
use crate::embed::skipgram::{train_skipgram, SkipGramConfig, TrainingStats};
use crate::error::{Error, Result};
use crate::ingest::Persist;
use crate::matrix::Matrix;

/// Lowercases and splits on every character that is not alphanumeric, and
/// also between letters and digits. Tokens shorter than two characters and
/// pure-digit tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_digit = false;
    let flush = |cur: &mut String, out: &mut Vec<String>| {
        if cur.chars().count() >= 2 && !cur.chars().all(char::is_numeric) {
            out.push(std::mem::take(cur));
        } else {
            cur.clear();
        }
    };
    for ch in text.chars() {
        if !ch.is_alphanumeric() {
            flush(&mut cur, &mut out);
            continue;
        }
        let digit = ch.is_numeric();
        if !cur.is_empty() && digit != cur_digit {
            flush(&mut cur, &mut out);
        }
        cur_digit = digit;
        cur.extend(ch.to_lowercase());
    }
    flush(&mut cur, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawVocabulary", into = "RawVocabulary")]
pub struct Vocabulary {
    terms: Vec<String>,
    document_frequency: Vec<u64>,
    corpus_size: u64,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawVocabulary {
    terms: Vec<String>,
    document_frequency: Vec<u64>,
    corpus_size: u64,
}

impl From<RawVocabulary> for Vocabulary {
    fn from(r: RawVocabulary) -> Self {
        Vocabulary::from_parts(r.terms, r.document_frequency, r.corpus_size)
    }
}

impl From<Vocabulary> for RawVocabulary {
    fn from(v: Vocabulary) -> Self {
        RawVocabulary {
            terms: v.terms,
            document_frequency: v.document_frequency,
            corpus_size: v.corpus_size,
        }
    }
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, document_frequency: Vec<u64>, corpus_size: u64) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            terms,
            document_frequency,
            corpus_size,
            index,
        }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn df(&self, index: usize) -> u64 {
        self.document_frequency[index]
    }

    pub fn corpus_size(&self) -> u64 {
        self.corpus_size
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Document frequency per distinct token.
fn document_frequencies(corpus: &[Vec<String>]) -> BTreeMap<&str, u64> {
    let mut df: BTreeMap<&str, u64> = BTreeMap::new();
    for doc in corpus {
        let uniq: HashSet<&str> = doc.iter().map(String::as_str).collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    df
}

/// Keeps terms with `df >= min_df`, then the `max_terms` most frequent by
/// document frequency (ties lexicographic). Terms are indexed in that order.
pub fn build_vocabulary(corpus: &[Vec<String>], max_terms: usize, min_df: u64) -> Result<Vocabulary> {
    if max_terms < 1 {
        return Err(Error::invalid("max_terms must be >= 1"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut kept: Vec<(&str, u64)> = document_frequencies(corpus)
        .into_iter()
        .filter(|&(_, df)| df >= min_df.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.truncate(max_terms);
    let terms = kept.iter().map(|(t, _)| t.to_string()).collect();
    let dfs = kept.iter().map(|&(_, df)| df).collect();
    Ok(Vocabulary::from_parts(terms, dfs, corpus.len() as u64))
}

/// A sparse row as sorted `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: Vocabulary,
    pub idf: Vec<f64>,
    pub normalize: bool,
}

impl Persist for TfidfModel {
    const KIND: &'static str = "tfidf";
}

/// `ln((1 + n) / (1 + df)) + 1`.
pub fn smoothed_idf(n: u64, df: u64) -> f64 {
    ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Computes idf for each vocabulary term from its document frequency in `corpus`.
pub fn tfidf_fit(corpus: &[Vec<String>], vocabulary: Vocabulary, normalize: bool) -> TfidfModel {
    let df = document_frequencies(corpus);
    let n = corpus.len() as u64;
    let idf = vocabulary
        .terms()
        .iter()
        .map(|t| smoothed_idf(n, df.get(t.as_str()).copied().unwrap_or(0)))
        .collect();
    TfidfModel {
        vocabulary,
        idf,
        normalize,
    }
}

impl TfidfModel {
    pub fn transform(&self, text: &str) -> SparseRow {
        self.transform_tokens(&tokenize(text))
    }

    /// Raw counts times idf, optionally L2-normalized; OOV tokens ignored.
    pub fn transform_tokens(&self, tokens: &[String]) -> SparseRow {
        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        for t in tokens {
            if let Some(i) = self.vocabulary.index_of(t) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let mut row: SparseRow = counts
            .into_iter()
            .map(|(i, c)| (i, c as f64 * self.idf[i]))
            .collect();
        if self.normalize {
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|(_, v)| *v /= norm);
            }
        }
        row
    }

    pub fn width(&self) -> usize {
        self.vocabulary.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordVectors {
    pub vocabulary: Vocabulary,
    pub dims: usize,
    pub matrix: Matrix,
    pub stats: TrainingStats,
}

impl Persist for WordVectors {
    const KIND: &'static str = "word_vectors";
}

impl WordVectors {
    pub fn vector(&self, term: &str) -> Option<&[f64]> {
        self.vocabulary.index_of(term).map(|i| self.matrix.row(i))
    }

    /// Unweighted mean of in-vocabulary token vectors; zeros if none.
    pub fn mean_vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dims];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.vector(t) {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                n += 1;
            }
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }
}

/// Skip-gram word vectors, each document being one sequence. Every token of
/// the corpus is in the vocabulary.
pub fn train_word_vectors(corpus: &[Vec<String>], config: &SkipGramConfig) -> Result<WordVectors> {
    if corpus.iter().all(Vec::is_empty) {
        return Err(Error::invalid("word-vector corpus has an empty vocabulary"));
    }
    let vocabulary = build_vocabulary(corpus, usize::MAX, 1)?;
    let sequences: Vec<Vec<usize>> = corpus
        .iter()
        .filter(|d| !d.is_empty())
        .map(|d| d.iter().filter_map(|t| vocabulary.index_of(t)).collect())
        .collect();
    let (matrix, stats) = train_skipgram(&sequences, vocabulary.len(), config)?;
    Ok(WordVectors {
        vocabulary,
        dims: config.dims,
        matrix,
        stats,
    })
}

/// Either text encoder.
#[derive(Debug, Clone, Copy)]
pub enum TextEncoder<'a> {
    Tfidf(&'a TfidfModel),
    WordVectors(&'a WordVectors),
}

/// One raw row per report: a dense TF-IDF row or the mean word vector.
pub fn report_text_block(name: &str, dataset: &Dataset, encoder: TextEncoder<'_>) -> Result<FeatureBlock> {
    let ids = dataset.ids();
    let (matrix, columns) = match encoder {
        TextEncoder::Tfidf(model) => {
            let mut m = Matrix::zeros(dataset.len(), model.width());
            for (i, r) in dataset.reports().iter().enumerate() {
                for (j, v) in model.transform(&r.text) {
                    m.set(i, j, v);
                }
            }
            let cols = model.vocabulary.terms().iter().map(|t| format!("tfidf_{t}")).collect();
            (m, cols)
        }
        TextEncoder::WordVectors(wv) => {
            let mut m = Matrix::zeros(dataset.len(), wv.dims);
            for (i, r) in dataset.reports().iter().enumerate() {
                m.row_mut(i).copy_from_slice(&wv.mean_vector(&tokenize(&r.text)));
            }
            let cols = (0..wv.dims).map(|d| format!("w2v_{d}")).collect();
            (m, cols)
        }
    };
    FeatureBlock::new(name, BlockKind::Raw, ids, matrix, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Grofvuil op straat!"), toks(&["grofvuil", "op", "straat"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Bak 3x vol, 2019"), toks(&["bak", "vol"]));
        assert_eq!(tokenize("Één ÜBER-straße"), toks(&["één", "über", "straße"]));
    }

    #[test]
    fn vocabulary_examples() {
        let corpus = vec![toks(&["a", "b"]), toks(&["b"])];
        let v = build_vocabulary(&corpus, 10, 1).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.df(v.index_of("a").unwrap()), 1);
        assert_eq!(v.df(v.index_of("b").unwrap()), 2);

        let v = build_vocabulary(&corpus, 1, 1).unwrap();
        assert_eq!(v.terms(), &["b".to_string()]);

        let tie = vec![toks(&["y", "x"])];
        let v = build_vocabulary(&tie, 1, 1).unwrap();
        assert_eq!(v.terms(), &["x".to_string()]);

        assert!(build_vocabulary(&corpus, 0, 1).is_err());
    }

    #[test]
    fn min_df_filters() {
        let corpus = vec![toks(&["aa", "bb"]), toks(&["bb"])];
        let v = build_vocabulary(&corpus, 10, 2).unwrap();
        assert_eq!(v.terms(), &["bb".to_string()]);
    }

    #[test]
    fn idf_hand_values() {
        let corpus = vec![tokenize("trash on street"), tokenize("trash bag")];
        let vocab = build_vocabulary(&corpus, 100, 1).unwrap();
        let model = tfidf_fit(&corpus, vocab, false);
        let idf = |t: &str| model.idf[model.vocabulary.index_of(t).unwrap()];
        assert!((idf("trash") - 1.0).abs() < 1e-12);
        let street = (3.0f64 / 2.0).ln() + 1.0;
        assert!((idf("street") - street).abs() < 1e-12);
        assert!((street - 1.4055).abs() < 1e-4);

        let row = model.transform("trash on street");
        let get = |t: &str| {
            let j = model.vocabulary.index_of(t).unwrap();
            row.iter().find(|(i, _)| *i == j).unwrap().1
        };
        assert!((get("trash") - 1.0).abs() < 1e-12);
        assert!((get("on") - street).abs() < 1e-12);
        assert!((get("street") - street).abs() < 1e-12);
        assert!(model.transform("").is_empty());
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let corpus = vec![tokenize("trash on street trash"), tokenize("trash bag")];
        let vocab = build_vocabulary(&corpus, 100, 1).unwrap();
        let model = tfidf_fit(&corpus, vocab, true);
        let row = model.transform("trash trash street unknownword");
        let n: f64 = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mean_vector_and_oov() {
        let vocab = build_vocabulary(&[toks(&["aa", "bb"])], 10, 1).unwrap();
        let matrix = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let wv = WordVectors { vocabulary: vocab, dims: 2, matrix, stats: TrainingStats::default() };
        assert_eq!(wv.mean_vector(&toks(&["zz"])), vec![0.0, 0.0]);
        assert_eq!(wv.mean_vector(&toks(&["aa", "bb"])), vec![2.0, 4.0]);
    }

    #[test]
    fn word_vectors_reject_empty_vocabulary() {
        let cfg = SkipGramConfig { dims: 4, ..Default::default() };
        assert!(train_word_vectors(&[vec![]], &cfg).is_err());
    }

    #[test]
    fn single_token_document_warns_no_signal() {
        let cfg = SkipGramConfig { dims: 4, ..Default::default() };
        let wv = train_word_vectors(&[toks(&["alone"])], &cfg).unwrap();
        assert!(wv.stats.no_signal());
    }
}
