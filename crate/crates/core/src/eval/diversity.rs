//! N-gram Jaccard distance between utterances and the corpus-level
//! diversity and coverage scores built on it.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{LabeledCorpus, Utterance};

pub const DEFAULT_MAX_NGRAM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Longest n-gram compared.
    pub max_ngram: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            max_ngram: DEFAULT_MAX_NGRAM,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_ngram == 0 {
            return Err(Error::Config("max n-gram length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Interned n-gram sets of one utterance, one sorted id list per length.
struct Profile {
    len: usize,
    levels: Vec<Vec<u32>>,
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
}

impl Interner {
    fn profile(&mut self, tokens: &[String], max_n: usize) -> Profile {
        let levels = (1..=max_n)
            .map(|n| {
                let set: BTreeSet<u32> = tokens
                    .windows(n)
                    .map(|w| {
                        let key = w.join(" ");
                        let next = self.ids.len() as u32;
                        *self.ids.entry(key).or_insert(next)
                    })
                    .collect();
                set.into_iter().collect()
            })
            .collect();
        Profile {
            len: tokens.len(),
            levels,
        }
    }
}

fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

fn profile_distance(a: &Profile, b: &Profile, max_n: usize) -> f64 {
    let levels = max_n.min(a.len.max(b.len)).max(1);
    let sum: f64 = (0..levels)
        .map(|n| jaccard(&a.levels[n], &b.levels[n]))
        .sum();
    1.0 - sum / levels as f64
}

/// `1 − (1/N′) Σ_{n=1..N′} J_n(a, b)` where `J_n` is the Jaccard index of
/// the two n-gram sets and `N′ = min(N, longer length)`, at least 1.
/// Two empty sets have Jaccard index 1.
pub fn pair_distance(a: &Utterance, b: &Utterance, cfg: &MetricConfig) -> f64 {
    let mut interner = Interner::default();
    let pa = interner.profile(a.tokens(), cfg.max_ngram);
    let pb = interner.profile(b.tokens(), cfg.max_ngram);
    profile_distance(&pa, &pb, cfg.max_ngram)
}

/// Mean over classes of the mean distance over all ordered pairs
/// (self-pairs included) within the class.
pub fn diversity(corpus: &LabeledCorpus, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    if corpus.num_classes() == 0 {
        return Err(Error::Empty("corpus has no classes".into()));
    }
    let mut total = 0.0;
    for (key, list) in corpus.classes() {
        if list.is_empty() {
            return Err(Error::Empty("class has no utterances".into()).in_class(key));
        }
        let mut interner = Interner::default();
        let profiles: Vec<Profile> = list
            .iter()
            .map(|u| interner.profile(u.tokens(), cfg.max_ngram))
            .collect();
        let mut sum = 0.0;
        for (i, a) in profiles.iter().enumerate() {
            for b in &profiles[i + 1..] {
                sum += profile_distance(a, b, cfg.max_ngram);
            }
        }
        let n = list.len() as f64;
        total += 2.0 * sum / (n * n);
    }
    Ok(total / corpus.num_classes() as f64)
}

/// Mean over classes of the mean, over test items, of the best similarity
/// `1 − D` to any training item of the same class.
pub fn coverage(train: &LabeledCorpus, test: &LabeledCorpus, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    let train_keys: Vec<&str> = train.class_keys().collect();
    let test_keys: Vec<&str> = test.class_keys().collect();
    if train_keys != test_keys {
        return Err(Error::Config(format!(
            "class sets differ: {train_keys:?} vs {test_keys:?}"
        )));
    }
    if train_keys.is_empty() {
        return Err(Error::Empty("corpus has no classes".into()));
    }
    let mut total = 0.0;
    for key in train_keys {
        let xs = train.class(key).unwrap_or_default();
        let ys = test.class(key).unwrap_or_default();
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::Empty("class has no utterances".into()).in_class(key));
        }
        let mut interner = Interner::default();
        let px: Vec<Profile> = xs
            .iter()
            .map(|u| interner.profile(u.tokens(), cfg.max_ngram))
            .collect();
        let mut sum = 0.0;
        for y in ys {
            let py = interner.profile(y.tokens(), cfg.max_ngram);
            let best = px
                .iter()
                .map(|p| 1.0 - profile_distance(p, &py, cfg.max_ngram))
                .fold(f64::NEG_INFINITY, f64::max);
            sum += best;
        }
        total += sum / ys.len() as f64;
    }
    Ok(total / train.num_classes() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(id: &str, text: &str, class: &str) -> Utterance {
        Utterance::new(id, text, class).unwrap()
    }

    fn cfg() -> MetricConfig {
        MetricConfig::default()
    }

    #[test]
    fn pair_distance_examples() {
        let a = u("1", "what is my balance", "c");
        assert_eq!(pair_distance(&a, &a.relabeled("2", "c"), &cfg()), 0.0);
        let d = pair_distance(&a, &u("3", "show me the money now", "c"), &cfg());
        assert_eq!(d, 1.0);
        let d = pair_distance(&u("4", "a b", "c"), &u("5", "b c", "c"), &cfg());
        assert!((d - 5.0 / 6.0).abs() < 1e-15);
        // single-token sentences compare unigrams only
        assert_eq!(
            pair_distance(&u("6", "hi", "c"), &u("7", "hi", "c"), &cfg()),
            0.0
        );
    }

    #[test]
    fn diversity_examples() {
        let singletons =
            LabeledCorpus::from_utterances([u("1", "a b c", "x"), u("2", "d e", "y")]).unwrap();
        assert_eq!(diversity(&singletons, &cfg()).unwrap(), 0.0);

        let disjoint =
            LabeledCorpus::from_utterances([u("1", "a b c", "x"), u("2", "d e f", "x")]).unwrap();
        assert_eq!(diversity(&disjoint, &cfg()).unwrap(), 0.5);

        let mut empty_class = LabeledCorpus::new();
        empty_class.ensure_class("x");
        assert!(diversity(&empty_class, &cfg()).is_err());
    }

    #[test]
    fn coverage_examples() {
        let x = LabeledCorpus::from_utterances([
            u("1", "a b c", "x"),
            u("2", "c d e", "x"),
            u("3", "f g", "y"),
        ])
        .unwrap();
        assert_eq!(coverage(&x, &x, &cfg()).unwrap(), 1.0);

        let y =
            LabeledCorpus::from_utterances([u("4", "p q r", "x"), u("5", "s t u", "y")]).unwrap();
        assert_eq!(coverage(&x, &y, &cfg()).unwrap(), 0.0);

        let other = LabeledCorpus::from_utterances([u("6", "a", "z")]).unwrap();
        assert!(coverage(&x, &other, &cfg()).is_err());
    }
}
