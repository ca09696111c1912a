//! Error-detection evaluation and corpus metrics.

mod bench;
mod diversity;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::detect::{cutoff, RankedList};
use crate::error::{Error, Result};
use crate::rng;
use crate::text::{LabeledCorpus, Utterance};

pub use bench::{run_benchmark, BenchRow, BenchmarkTable, TruthSource};
pub use diversity::{coverage, diversity, pair_distance, MetricConfig, DEFAULT_MAX_NGRAM};

/// Sampling step (in percent) of the recall curves stored in reports.
pub const DEFAULT_CURVE_STEP: u32 = 5;

/// Error ids per class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorGroundTruth {
    pub errors: BTreeMap<String, BTreeSet<String>>,
}

impl ErrorGroundTruth {
    pub fn class_errors(&self, class_key: &str) -> HashSet<String> {
        self.errors
            .get(class_key)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn total(&self) -> usize {
        self.errors.values().map(BTreeSet::len).sum()
    }

    /// Assigns error ids to their classes and checks they exist.
    pub fn from_ids<'a>(
        corpus: &LabeledCorpus,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut truth = ErrorGroundTruth::default();
        for id in ids {
            let u = corpus
                .get(id)
                .ok_or_else(|| Error::UnknownId(id.to_string()))?;
            truth
                .errors
                .entry(u.class_key().to_string())
                .or_default()
                .insert(id.to_string());
        }
        Ok(truth)
    }

    /// Reads `{"id": ...}` lines.
    pub fn read<R: BufRead>(reader: R, corpus: &LabeledCorpus) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            id: String,
        }
        let mut ids = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            ids.push(rec.id);
        }
        Self::from_ids(corpus, ids.iter().map(String::as_str))
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for id in self.errors.values().flatten() {
            writeln!(out, "{}", serde_json::json!({ "id": id }))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub p: f64,
    pub seed: u64,
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!(
                "p must be in (0, 1), got {}",
                self.p
            )));
        }
        Ok(())
    }

    /// Injected count for a class of `n`: `max(1, round(p * n))`.
    pub fn count_for(&self, n: usize) -> usize {
        ((self.p * n as f64).round() as usize).max(1)
    }
}

/// Copies `max(1, round(p·|X_i|))` utterances drawn from the other classes
/// into each class under fresh ids, and records the copies as errors.
pub fn inject_errors(
    corpus: &LabeledCorpus,
    cfg: &InjectionConfig,
) -> Result<(LabeledCorpus, ErrorGroundTruth)> {
    inject_with_sources(corpus, cfg).map(|(c, t, _)| (c, t))
}

/// [`inject_errors`] plus a map from each copy's id to its source id.
pub(crate) fn inject_with_sources(
    corpus: &LabeledCorpus,
    cfg: &InjectionConfig,
) -> Result<(LabeledCorpus, ErrorGroundTruth, HashMap<String, String>)> {
    cfg.validate()?;
    if corpus.num_classes() < 2 {
        return Err(Error::Config(
            "error injection needs at least two classes".into(),
        ));
    }
    let mut out = corpus.clone();
    let mut truth = ErrorGroundTruth::default();
    let mut sources = HashMap::new();
    for (key, list) in corpus.classes() {
        if list.is_empty() {
            return Err(Error::Empty("class has no utterances".into()).in_class(key));
        }
        let pool: Vec<&Utterance> = corpus
            .iter()
            .filter(|u| u.class_key() != key.as_str())
            .collect();
        let count = cfg.count_for(list.len()).min(pool.len());
        let mut rng = rng::stream(cfg.seed, &["inject", key]);
        let mut picks = index::sample(&mut rng, pool.len(), count).into_vec();
        picks.sort_unstable();
        let errors = truth.errors.entry(key.clone()).or_default();
        for (j, pick) in picks.into_iter().enumerate() {
            let source = pool[pick];
            let mut id = format!("inj:{key}:{j}:{}", source.id());
            while out.contains_id(&id) {
                id.push('\'');
            }
            out.push(source.relabeled(id.clone(), key.clone()))?;
            sources.insert(id.clone(), source.id().to_string());
            errors.insert(id);
        }
    }
    Ok((out, truth, sources))
}

fn check_errors(list: &RankedList, errors: &HashSet<String>) -> Result<()> {
    if errors.is_empty() {
        return Err(Error::Empty(format!(
            "error set for class `{}`",
            list.class_key
        )));
    }
    let ids: HashSet<&str> = list.ids().collect();
    if let Some(missing) = errors.iter().find(|e| !ids.contains(e.as_str())) {
        return Err(Error::UnknownId(missing.clone()));
    }
    Ok(())
}

/// `(1/|E|) Σ_e |errors at or above e| / e` over the 1-based error positions `e`.
pub fn average_precision(list: &RankedList, errors: &HashSet<String>) -> Result<f64> {
    check_errors(list, errors)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, entry) in list.entries.iter().enumerate() {
        if errors.contains(&entry.id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / errors.len() as f64)
}

/// Share of errors among the first `ceil(n·k/100)` entries.
pub fn recall_at_k(list: &RankedList, errors: &HashSet<String>, k_percent: f64) -> Result<f64> {
    check_errors(list, errors)?;
    let r = cutoff(list.len(), k_percent);
    let found = list.entries[..r]
        .iter()
        .filter(|e| errors.contains(&e.id))
        .count();
    Ok(found as f64 / errors.len() as f64)
}

/// Recall sampled at `k = 0, step, ..., 100`.
pub fn recall_curve(
    list: &RankedList,
    errors: &HashSet<String>,
    step_percent: u32,
) -> Result<Vec<(f64, f64)>> {
    if step_percent == 0 || 100 % step_percent != 0 {
        return Err(Error::Config(format!(
            "curve step {step_percent} does not divide 100"
        )));
    }
    (0..=100)
        .step_by(step_percent as usize)
        .map(|k| Ok((k as f64, recall_at_k(list, errors, k as f64)?)))
        .collect()
}

/// MAP and mean recall curve for one ranking method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub per_class_ap: BTreeMap<String, f64>,
    pub map: f64,
    /// Classes left out of the mean because they have no errors.
    pub excluded: Vec<String>,
    /// `(k_percent, mean recall over classes with errors)`.
    pub recall_curve: Vec<(f64, f64)>,
}

/// Mean over classes with errors of [`recall_at_k`].
pub fn mean_recall_at_k(
    lists: &BTreeMap<String, RankedList>,
    truth: &ErrorGroundTruth,
    k_percent: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (key, list) in lists {
        let errors = truth.class_errors(key);
        if errors.is_empty() {
            continue;
        }
        total += recall_at_k(list, &errors, k_percent)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no class has errors".into()));
    }
    Ok(total / n as f64)
}

/// Mean of per-class AP over classes with at least one error.
pub fn mean_average_precision(
    lists: &BTreeMap<String, RankedList>,
    truth: &ErrorGroundTruth,
) -> Result<EvalReport> {
    mean_average_precision_with_step(lists, truth, DEFAULT_CURVE_STEP)
}

/// [`mean_average_precision`] with a chosen recall-curve step.
pub fn mean_average_precision_with_step(
    lists: &BTreeMap<String, RankedList>,
    truth: &ErrorGroundTruth,
    curve_step: u32,
) -> Result<EvalReport> {
    for key in truth.errors.keys() {
        if !truth.errors[key].is_empty() && !lists.contains_key(key) {
            return Err(Error::Config(format!("no ranked list for class `{key}`")));
        }
    }
    let mut per_class_ap = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut curve_sum: Vec<(f64, f64)> = Vec::new();
    for (key, list) in lists {
        let errors = truth.class_errors(key);
        if errors.is_empty() {
            excluded.push(key.clone());
            continue;
        }
        let ap = average_precision(list, &errors).map_err(|e| e.in_class(key))?;
        per_class_ap.insert(key.clone(), ap);
        let curve = recall_curve(list, &errors, curve_step)?;
        if curve_sum.is_empty() {
            curve_sum = curve;
        } else {
            for (acc, (_, r)) in curve_sum.iter_mut().zip(curve) {
                acc.1 += r;
            }
        }
    }
    if per_class_ap.is_empty() {
        return Err(Error::Empty("no class has errors".into()));
    }
    let n = per_class_ap.len() as f64;
    let map = per_class_ap.values().sum::<f64>() / n;
    let recall_curve = curve_sum.into_iter().map(|(k, r)| (k, r / n)).collect();
    let method = lists
        .values()
        .next()
        .map(|l| l.method.clone())
        .unwrap_or_default();
    Ok(EvalReport {
        method,
        per_class_ap,
        map,
        excluded,
        recall_curve,
    })
}
