//! Outlier ranking within a class: distance from the class mean, simple
//! baselines, Borda aggregation and the top-k% cutoff.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embed::{
    count_frequencies, embed_average_all, embed_bow, embed_sif, EmbeddingMatrix, FrequencyTable,
    SifConfig, WordVectorTable,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::text::{LabeledCorpus, Utterance};

/// Default share of a ranked list flagged as outliers.
pub const DEFAULT_K_PERCENT: f64 = 10.0;

/// How a class is ranked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Method {
    Average,
    Sif,
    Precomputed,
    Bow,
    Random,
    Short,
    Long,
    Borda(Vec<Method>),
}

impl Method {
    /// Whether ranking needs a word-vector table.
    pub fn needs_word_vectors(&self) -> bool {
        match self {
            Method::Average | Method::Sif => true,
            Method::Borda(parts) => parts.iter().any(Method::needs_word_vectors),
            _ => false,
        }
    }

    pub fn needs_precomputed(&self) -> bool {
        match self {
            Method::Precomputed => true,
            Method::Borda(parts) => parts.iter().any(Method::needs_precomputed),
            _ => false,
        }
    }

    /// Parses a comma-separated method list such as `random,bow,borda:average+sif`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Average => "average",
            Method::Sif => "sif",
            Method::Precomputed => "precomputed",
            Method::Bow => "bow",
            Method::Random => "random",
            Method::Short => "short",
            Method::Long => "long",
            Method::Borda(parts) => {
                let names: Vec<String> = parts.iter().map(Method::to_string).collect();
                return write!(f, "borda:{}", names.join("+"));
            }
        };
        f.write_str(name)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("borda:") {
            let parts = rest
                .split('+')
                .map(|p| match p.parse()? {
                    Method::Borda(_) => Err(Error::Config("nested borda".into())),
                    m => Ok(m),
                })
                .collect::<Result<Vec<_>>>()?;
            if parts.is_empty() {
                return Err(Error::Config("borda needs at least one method".into()));
            }
            return Ok(Method::Borda(parts));
        }
        Ok(match s {
            "average" => Method::Average,
            "sif" => Method::Sif,
            "precomputed" => Method::Precomputed,
            "bow" => Method::Bow,
            "random" => Method::Random,
            "short" => Method::Short,
            "long" => Method::Long,
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub method: Method,
    pub k_percent: f64,
    pub seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            method: Method::Average,
            k_percent: DEFAULT_K_PERCENT,
            seed: 0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.k_percent) {
            return Err(Error::Config(format!(
                "k_percent must be in [0, 100], got {}",
                self.k_percent
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
    pub rank: usize,
}

/// One class ordered most-outlying first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub class_key: String,
    pub method: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts `(id, score)` pairs by score descending, then id ascending.
    pub fn from_scores(
        class_key: impl Into<String>,
        method: impl Into<String>,
        mut scored: Vec<(String, f64)>,
    ) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (id, score))| RankedEntry {
                id,
                score,
                rank: i + 1,
            })
            .collect();
        RankedList {
            class_key: class_key.into(),
            method: method.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

/// Arithmetic mean of the rows.
pub fn class_mean(matrix: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if matrix.is_empty() {
        return Err(Error::Empty("embedding matrix".into()));
    }
    let mut mean = vec![0.0; matrix.dim()];
    for row in matrix.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let n = matrix.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Ranks rows by Euclidean distance from the row mean, farthest first.
///
/// Rows are summed in id order, so the result does not depend on how the
/// matrix rows were ordered.
pub fn rank_by_distance(matrix: &EmbeddingMatrix, class_key: &str) -> Result<RankedList> {
    if matrix.is_empty() {
        return Err(Error::Empty(format!("embedding matrix for `{class_key}`")));
    }
    let mut order: Vec<usize> = (0..matrix.len()).collect();
    order.sort_by(|&a, &b| matrix.ids()[a].cmp(&matrix.ids()[b]));
    let sorted = matrix.select(order.iter().map(|&i| matrix.ids()[i].as_str()))?;
    let mean = class_mean(&sorted)?;
    let scored = sorted
        .ids()
        .iter()
        .zip(sorted.rows())
        .map(|(id, row)| (id.clone(), euclidean(row, &mean)))
        .collect();
    Ok(RankedList::from_scores(class_key, "distance", scored))
}

/// Random, shortest-first or longest-first orderings.
pub fn rank_baseline(
    utterances: &[Utterance],
    method: &Method,
    seed: u64,
    class_key: &str,
) -> Result<RankedList> {
    if utterances.is_empty() {
        return Err(Error::Empty(format!("class `{class_key}`")));
    }
    let scored: Vec<(String, f64)> = match method {
        Method::Random => {
            let mut ids: Vec<&str> = utterances.iter().map(Utterance::id).collect();
            ids.sort_unstable();
            ids.shuffle(&mut rng::stream(seed, &["random-baseline", class_key]));
            let n = ids.len();
            ids.into_iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), (n - i) as f64))
                .collect()
        }
        Method::Short => utterances
            .iter()
            .map(|u| (u.id().to_string(), 1.0 / (1.0 + u.tokens().len() as f64)))
            .collect(),
        Method::Long => utterances
            .iter()
            .map(|u| (u.id().to_string(), u.tokens().len() as f64))
            .collect(),
        other => {
            return Err(Error::Config(format!("`{other}` is not a baseline method")));
        }
    };
    Ok(RankedList::from_scores(
        class_key,
        method.to_string(),
        scored,
    ))
}

/// Borda count: position `i` (1-based) in a list of length `N` earns `N - i`
/// points; items are ordered by total points, ties by id.
pub fn borda_merge(lists: &[RankedList]) -> Result<RankedList> {
    let first = lists
        .first()
        .ok_or_else(|| Error::Empty("no ranked lists to merge".into()))?;
    let reference: HashSet<&str> = first.ids().collect();
    if reference.len() != first.len() {
        return Err(Error::IdSetMismatch(format!(
            "list `{}` repeats an id",
            first.method
        )));
    }
    let mut points: HashMap<&str, f64> = reference.iter().map(|&id| (id, 0.0)).collect();
    for list in lists {
        let ids: HashSet<&str> = list.ids().collect();
        if ids.len() != list.len() || ids != reference {
            return Err(Error::IdSetMismatch(format!(
                "`{}` vs `{}` in class `{}`",
                first.method, list.method, list.class_key
            )));
        }
        let n = list.len();
        for entry in &list.entries {
            *points.get_mut(entry.id.as_str()).expect("checked above") += (n - entry.rank) as f64;
        }
    }
    let method = format!(
        "borda:{}",
        lists
            .iter()
            .map(|l| l.method.as_str())
            .collect::<Vec<_>>()
            .join("+")
    );
    let scored = points
        .into_iter()
        .map(|(id, p)| (id.to_string(), p))
        .collect();
    Ok(RankedList::from_scores(&first.class_key, method, scored))
}

/// Number of flagged items for a list of `n`: `ceil(n * k / 100)`.
pub fn cutoff(n: usize, k_percent: f64) -> usize {
    let r = (n as f64 * k_percent / 100.0).ceil();
    (r.max(0.0) as usize).min(n)
}

/// Ids of the first `ceil(n * k / 100)` entries, most-outlying first.
pub fn flag_top_k(list: &RankedList, k_percent: f64) -> Vec<String> {
    list.entries
        .iter()
        .take(cutoff(list.len(), k_percent))
        .map(|e| e.id.clone())
        .collect()
}

/// Inputs for the embedding-based rankers.
#[derive(Debug, Clone, Default)]
pub struct Embedders {
    pub words: Option<WordVectorTable>,
    /// Token frequencies for SIF; counted over the ranked corpus when absent.
    pub frequencies: Option<FrequencyTable>,
    pub sif: SifConfig,
    pub precomputed: Option<EmbeddingMatrix>,
}

impl Embedders {
    pub fn with_words(words: WordVectorTable) -> Self {
        Embedders {
            words: Some(words),
            ..Default::default()
        }
    }

    fn words(&self) -> Result<&WordVectorTable> {
        self.words
            .as_ref()
            .ok_or_else(|| Error::Config("method needs a word-vector table".into()))
    }

    /// Sentence vectors for `utterances` under an embedding method.
    pub fn embed(
        &self,
        method: &Method,
        utterances: &[Utterance],
        freq: Option<&FrequencyTable>,
    ) -> Result<EmbeddingMatrix> {
        match method {
            Method::Average => Ok(embed_average_all(utterances, self.words()?)),
            Method::Sif => {
                let freq = freq
                    .or(self.frequencies.as_ref())
                    .ok_or_else(|| Error::Config("SIF needs a frequency table".into()))?;
                embed_sif(utterances, self.words()?, freq, &self.sif)
            }
            Method::Precomputed => self
                .precomputed
                .as_ref()
                .ok_or_else(|| Error::Config("method needs precomputed vectors".into()))?
                .select(utterances.iter().map(Utterance::id)),
            Method::Bow => Ok(embed_bow(utterances)),
            other => Err(Error::Config(format!("`{other}` has no embedding"))),
        }
    }
}

/// Ranks one class's utterances with `method`.
pub fn rank_class(
    utterances: &[Utterance],
    class_key: &str,
    method: &Method,
    embedders: &Embedders,
    freq: Option<&FrequencyTable>,
    seed: u64,
) -> Result<RankedList> {
    let mut sorted: Vec<Utterance> = utterances.to_vec();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    match method {
        Method::Random | Method::Short | Method::Long => {
            rank_baseline(&sorted, method, seed, class_key)
        }
        Method::Borda(parts) => {
            let lists = parts
                .iter()
                .map(|m| rank_class(&sorted, class_key, m, embedders, freq, seed))
                .collect::<Result<Vec<_>>>()?;
            borda_merge(&lists)
        }
        _ => {
            let matrix = embedders.embed(method, &sorted, freq)?;
            let mut list = rank_by_distance(&matrix, class_key)?;
            list.method = method.to_string();
            Ok(list)
        }
    }
}

/// Ranks every class independently.
pub fn detect_all_classes(
    corpus: &LabeledCorpus,
    embedders: &Embedders,
    cfg: &DetectionConfig,
) -> Result<BTreeMap<String, RankedList>> {
    cfg.validate()?;
    let counted;
    let freq = match &embedders.frequencies {
        Some(f) => Some(f),
        None if uses_sif(&cfg.method) => {
            counted = count_frequencies(corpus)?;
            Some(&counted)
        }
        None => None,
    };
    corpus
        .classes()
        .iter()
        .map(|(key, list)| {
            if list.is_empty() {
                return Err(Error::Empty("class has no utterances".into()).in_class(key));
            }
            rank_class(list, key, &cfg.method, embedders, freq, cfg.seed)
                .map(|l| (key.clone(), l))
                .map_err(|e| e.in_class(key))
        })
        .collect()
}

fn uses_sif(method: &Method) -> bool {
    match method {
        Method::Sif => true,
        Method::Borda(parts) => parts.iter().any(uses_sif),
        _ => false,
    }
}

/// One line of the ranked-list export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedRecord {
    pub class_key: String,
    pub rank: usize,
    pub id: String,
    pub score: f64,
    pub method: String,
}

pub fn write_ranked<W: Write>(mut out: W, list: &RankedList) -> std::io::Result<()> {
    for e in &list.entries {
        let rec = RankedRecord {
            class_key: list.class_key.clone(),
            rank: e.rank,
            id: e.id.clone(),
            score: e.score,
            method: list.method.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads ranked-list records back, grouped per class in rank order.
pub fn read_ranked<R: BufRead>(reader: R) -> Result<BTreeMap<String, RankedList>> {
    let mut out: BTreeMap<String, RankedList> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RankedRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let list = out
            .entry(rec.class_key.clone())
            .or_insert_with(|| RankedList {
                class_key: rec.class_key.clone(),
                method: rec.method.clone(),
                entries: Vec::new(),
            });
        list.entries.push(RankedEntry {
            id: rec.id,
            score: rec.score,
            rank: rec.rank,
        });
    }
    for list in out.values_mut() {
        list.entries.sort_by_key(|e| e.rank);
        if list
            .entries
            .iter()
            .enumerate()
            .any(|(i, e)| e.rank != i + 1)
        {
            return Err(Error::Config(format!(
                "ranks of class `{}` are not 1..n",
                list.class_key
            )));
        }
    }
    Ok(out)
}
