//! Sentence vectors: averaged word vectors, SIF weighting with common
//! component removal, externally computed vectors, and bag-of-words counts.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{LabeledCorpus, Utterance};

/// Default SIF smoothing parameter.
pub const DEFAULT_SIF_A: f64 = 1e-3;

/// Word to vector lookup, all vectors of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    source: String,
    duplicates: usize,
}

impl WordVectorTable {
    pub fn new(dim: usize, source: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config(
                "word vector dimension must be positive".into(),
            ));
        }
        Ok(WordVectorTable {
            dim,
            vectors: HashMap::new(),
            source: source.into(),
            duplicates: 0,
        })
    }

    /// Inserts a vector. Returns false (and keeps the old one) if the word
    /// is already present.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: vector.len(),
                line: None,
            });
        }
        let word = word.into();
        if self.vectors.contains_key(&word) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.vectors.insert(word, vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of repeated words skipped while loading.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Reads whitespace-separated `word v1 ... vd` lines.
    pub fn read<R: BufRead>(
        reader: R,
        expected_dim: Option<usize>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let source = source.into();
        let mut table: Option<WordVectorTable> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else {
                continue;
            };
            let vector = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad component `{f}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let table = match table.as_mut() {
                Some(t) => t,
                None => {
                    let dim = expected_dim.unwrap_or(vector.len());
                    if dim == 0 {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("word `{word}` has no vector"),
                        });
                    }
                    table.insert(WordVectorTable::new(dim, source.clone())?)
                }
            };
            if vector.len() != table.dim {
                return Err(Error::Dimension {
                    expected: table.dim,
                    found: vector.len(),
                    line: Some(line_no),
                });
            }
            table.insert(word, vector)?;
        }
        let table = table.ok_or_else(|| Error::Empty(format!("word vector table `{source}`")))?;
        if table.duplicates > 0 {
            log::warn!(
                "{}: skipped {} duplicate word(s), first occurrence kept",
                table.source,
                table.duplicates
            );
        }
        Ok(table)
    }
}

pub fn load_word_vectors(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<WordVectorTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    WordVectorTable::read(
        BufReader::new(file),
        expected_dim,
        path.display().to_string(),
    )
}

/// Token counts over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn from_counts(counts: HashMap<String, u64>) -> Self {
        let total = counts.values().sum();
        FrequencyTable { counts, total }
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Relative frequency; zero for unseen tokens.
    pub fn probability(&self, token: &str) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.count(token) as f64 / self.total as f64
    }
}

pub fn count_frequencies(corpus: &LabeledCorpus) -> Result<FrequencyTable> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus for frequency counts".into()));
    }
    let mut counts = HashMap::new();
    for token in corpus.iter().flat_map(Utterance::tokens) {
        *counts.entry(token.clone()).or_insert(0) += 1;
    }
    Ok(FrequencyTable::from_counts(counts))
}

/// SIF weighting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SifConfig {
    pub a: f64,
    pub remove_common_component: bool,
    pub power_iterations: usize,
    pub power_tolerance: f64,
}

impl Default for SifConfig {
    fn default() -> Self {
        SifConfig {
            a: DEFAULT_SIF_A,
            remove_common_component: true,
            power_iterations: 100,
            power_tolerance: 1e-6,
        }
    }
}

impl SifConfig {
    pub fn validate(&self) -> Result<()> {
        if self.a.is_nan() || self.a <= 0.0 {
            return Err(Error::Config(format!(
                "SIF a must be positive, got {}",
                self.a
            )));
        }
        if self.power_iterations == 0 {
            return Err(Error::Config("power_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row vectors keyed by utterance id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        EmbeddingMatrix {
            ids: Vec::new(),
            data: Vec::new(),
            dim,
        }
    }

    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Config(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut m = EmbeddingMatrix::new(dim);
        for (id, row) in ids.into_iter().zip(rows) {
            m.push(id, &row)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, id: impl Into<String>, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: row.len(),
                line: None,
            });
        }
        self.ids.push(id.into());
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|i| self.row(i))
    }

    /// Rows for `ids`, in that order. Every id must be present.
    pub fn select<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<EmbeddingMatrix> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut out = EmbeddingMatrix::new(self.dim);
        for id in ids {
            let &i = index
                .get(id)
                .ok_or_else(|| Error::UnknownId(id.to_string()))?;
            out.push(id, self.row(i))?;
        }
        Ok(out)
    }

    /// Ids present here but not in `corpus`.
    pub fn unused_ids(&self, corpus: &LabeledCorpus) -> Vec<String> {
        self.ids
            .iter()
            .filter(|id| !corpus.contains_id(id))
            .cloned()
            .collect()
    }
}

/// Unweighted mean of the in-vocabulary token vectors, plus the number of
/// tokens that had no vector. All-OOV input gives the zero vector.
pub fn embed_average(tokens: &[String], table: &WordVectorTable) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; table.dim()];
    let mut found = 0usize;
    for token in tokens {
        if let Some(v) = table.get(token) {
            add_scaled(&mut sum, v, 1.0);
            found += 1;
        }
    }
    if found > 0 {
        let inv = 1.0 / found as f64;
        sum.iter_mut().for_each(|x| *x *= inv);
    }
    (sum, tokens.len() - found)
}

/// Embeds each utterance with [`embed_average`].
pub fn embed_average_all(utterances: &[Utterance], table: &WordVectorTable) -> EmbeddingMatrix {
    let mut m = EmbeddingMatrix::new(table.dim());
    for u in utterances {
        let (v, _) = embed_average(u.tokens(), table);
        m.push(u.id(), &v).expect("row has table dim");
    }
    m
}

/// `a / (a + p(token))`; unseen tokens get weight 1.
pub fn sif_weight(token: &str, freq: &FrequencyTable, a: f64) -> f64 {
    a / (a + freq.probability(token))
}

/// SIF sentence vectors: frequency-weighted token averages, optionally with
/// the dominant direction of the row set projected out.
pub fn embed_sif(
    utterances: &[Utterance],
    table: &WordVectorTable,
    freq: &FrequencyTable,
    cfg: &SifConfig,
) -> Result<EmbeddingMatrix> {
    cfg.validate()?;
    let mut m = EmbeddingMatrix::new(table.dim());
    let mut any_in_vocab = false;
    for u in utterances {
        let mut row = vec![0.0; table.dim()];
        let mut found = 0usize;
        for token in u.tokens() {
            if let Some(v) = table.get(token) {
                add_scaled(&mut row, v, sif_weight(token, freq, cfg.a));
                found += 1;
            }
        }
        if found > 0 {
            any_in_vocab = true;
            let inv = 1.0 / found as f64;
            row.iter_mut().for_each(|x| *x *= inv);
        }
        m.push(u.id(), &row)?;
    }
    if !any_in_vocab {
        return Err(Error::Empty(
            "no utterance has an in-vocabulary token for SIF".into(),
        ));
    }
    if cfg.remove_common_component {
        m = remove_common_component(&m, cfg.power_iterations, cfg.power_tolerance);
    }
    Ok(m)
}

/// Dominant right singular direction of the row matrix, by power iteration
/// on `XᵀX` from the normalized all-ones vector. `None` for a zero matrix.
pub fn common_direction(
    matrix: &EmbeddingMatrix,
    iterations: usize,
    tolerance: f64,
) -> Option<Vec<f64>> {
    let dim = matrix.dim();
    if dim == 0 || matrix.is_empty() {
        return None;
    }
    let starts = std::iter::once(vec![1.0; dim]).chain((0..dim).map(|k| {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        e
    }));
    let mut u = None;
    for start in starts {
        let mut v = gram_apply(matrix, &start);
        if normalize(&mut v) {
            u = Some(v);
            break;
        }
    }
    let mut u = u?;
    for _ in 0..iterations {
        let mut next = gram_apply(matrix, &u);
        if !normalize(&mut next) {
            break;
        }
        let delta = next
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        u = next;
        if delta < tolerance {
            break;
        }
    }
    Some(u)
}

/// Subtracts each row's projection onto [`common_direction`].
pub fn remove_common_component(
    matrix: &EmbeddingMatrix,
    iterations: usize,
    tolerance: f64,
) -> EmbeddingMatrix {
    let mut out = matrix.clone();
    let Some(u) = common_direction(matrix, iterations, tolerance) else {
        return out;
    };
    for i in 0..out.len() {
        let row = out.row_mut(i);
        let proj = dot(row, &u);
        add_scaled(row, &u, -proj);
    }
    out
}

/// One JSON line of the precomputed-vector format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

pub fn read_precomputed<R: BufRead>(reader: R) -> Result<EmbeddingMatrix> {
    let mut m: Option<EmbeddingMatrix> = None;
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        let m = m.get_or_insert_with(|| EmbeddingMatrix::new(rec.vector.len()));
        if rec.vector.len() != m.dim() {
            return Err(Error::Dimension {
                expected: m.dim(),
                found: rec.vector.len(),
                line: Some(line_no),
            });
        }
        m.push(rec.id, &rec.vector)?;
    }
    m.ok_or_else(|| Error::Empty("precomputed vector file".into()))
}

pub fn load_precomputed(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_precomputed(BufReader::new(file))
}

/// Raw token counts over the sorted union vocabulary of `utterances`.
pub fn embed_bow(utterances: &[Utterance]) -> EmbeddingMatrix {
    let vocab: BTreeSet<&str> = utterances
        .iter()
        .flat_map(|u| u.tokens().iter().map(String::as_str))
        .collect();
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut m = EmbeddingMatrix::new(vocab.len());
    for u in utterances {
        let mut row = vec![0.0; vocab.len()];
        for t in u.tokens() {
            row[index[t.as_str()]] += 1.0;
        }
        m.push(u.id(), &row).expect("row has vocab dim");
    }
    m
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// `XᵀX v`
fn gram_apply(matrix: &EmbeddingMatrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; matrix.dim()];
    for row in matrix.rows() {
        let s = dot(row, v);
        add_scaled(&mut out, row, s);
    }
    out
}
