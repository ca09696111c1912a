//! Side-by-side comparison of ranking methods on one corpus.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    inject_with_sources, mean_average_precision_with_step, mean_recall_at_k, ErrorGroundTruth,
    InjectionConfig,
};
use crate::detect::{borda_merge, rank_class, DetectionConfig, Embedders, Method, RankedList};
use crate::embed::{count_frequencies, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::text::LabeledCorpus;

/// Where the error labels come from.
#[derive(Debug, Clone)]
pub enum TruthSource {
    /// Copy samples across classes and treat the copies as errors.
    Inject(InjectionConfig),
    Labeled(ErrorGroundTruth),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub map: f64,
    /// Mean recall at the configured cutoff.
    pub recall_at_k: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    /// `(k_percent, mean recall)` at every whole percent.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub k_percent: f64,
    pub classes: Vec<String>,
    pub rows: Vec<BenchRow>,
    pub errors: usize,
}

impl BenchmarkTable {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Tab-separated table: method, MAP, recall@k, then one AP column per class.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("method\tMAP\trecall@{}", fmt_k(self.k_percent));
        for c in &self.classes {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(
                out,
                "{}\t{:.6}\t{:.6}",
                row.method, row.map, row.recall_at_k
            );
            for c in &self.classes {
                match row.per_class_ap.get(c) {
                    Some(ap) => {
                        let _ = write!(out, "\t{ap:.6}");
                    }
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// `k\trecall` lines for one row.
    pub fn curve_tsv(row: &BenchRow) -> String {
        let mut out = String::from("k\trecall\n");
        for (k, r) in &row.curve {
            let _ = writeln!(out, "{}\t{r:.6}", fmt_k(*k));
        }
        out
    }
}

fn fmt_k(k: f64) -> String {
    if k.fract() == 0.0 {
        format!("{}", k as i64)
    } else {
        format!("{k}")
    }
}

/// Ranks every class with every method and scores the lists against the
/// error labels. Borda rows reuse the component rankings.
pub fn run_benchmark(
    corpus: &LabeledCorpus,
    methods: &[Method],
    truth: TruthSource,
    detection: &DetectionConfig,
    embedders: &Embedders,
) -> Result<BenchmarkTable> {
    detection.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods to benchmark".into()));
    }
    let mut embedders = embedders.clone();
    let (corpus, truth) = match truth {
        TruthSource::Inject(cfg) => {
            let (injected, truth, sources) = inject_with_sources(corpus, &cfg)?;
            if let Some(pre) = embedders.precomputed.take() {
                embedders.precomputed = Some(extend_for_clones(pre, &sources)?);
            }
            (injected, truth)
        }
        TruthSource::Labeled(truth) => (corpus.clone(), truth),
    };
    if embedders.frequencies.is_none() {
        embedders.frequencies = Some(count_frequencies(&corpus)?);
    }

    let mut cache: HashMap<(String, String), RankedList> = HashMap::new();
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let mut lists = BTreeMap::new();
        for (key, list) in corpus.classes() {
            let ranked = match method {
                Method::Borda(parts) => {
                    let part_lists = parts
                        .iter()
                        .map(|m| {
                            cached(&mut cache, m, key, || {
                                rank_class(list, key, m, &embedders, None, detection.seed)
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    borda_merge(&part_lists).map_err(|e| e.in_class(key))?
                }
                m => cached(&mut cache, m, key, || {
                    rank_class(list, key, m, &embedders, None, detection.seed)
                })?,
            };
            lists.insert(key.clone(), ranked);
        }
        let report = mean_average_precision_with_step(&lists, &truth, 1)?;
        rows.push(BenchRow {
            method: method.to_string(),
            map: report.map,
            recall_at_k: mean_recall_at_k(&lists, &truth, detection.k_percent)?,
            per_class_ap: report.per_class_ap,
            curve: report.recall_curve,
        });
    }
    Ok(BenchmarkTable {
        k_percent: detection.k_percent,
        classes: corpus.class_keys().map(String::from).collect(),
        rows,
        errors: truth.total(),
    })
}

fn cached(
    cache: &mut HashMap<(String, String), RankedList>,
    method: &Method,
    class_key: &str,
    compute: impl FnOnce() -> Result<RankedList>,
) -> Result<RankedList> {
    let key = (method.to_string(), class_key.to_string());
    if let Some(list) = cache.get(&key) {
        return Ok(list.clone());
    }
    let list = compute().map_err(|e| e.in_class(class_key))?;
    cache.insert(key, list.clone());
    Ok(list)
}

/// Injected copies carry fresh ids; give them their source's vector.
fn extend_for_clones(
    mut pre: EmbeddingMatrix,
    sources: &HashMap<String, String>,
) -> Result<EmbeddingMatrix> {
    let mut clones: Vec<_> = sources.iter().collect();
    clones.sort();
    for (clone, source) in clones {
        let row = pre
            .get(source)
            .ok_or_else(|| Error::UnknownId(source.clone()))?
            .to_vec();
        pre.push(clone.clone(), &row)?;
    }
    Ok(pre)
}
