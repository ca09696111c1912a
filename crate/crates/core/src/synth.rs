//! Class-clustered toy corpora with matching word vectors.
//!
//! Each class owns a vocabulary whose vectors scatter around a class
//! centroid; a small set of function words sits near the origin and is
//! shared by all classes. Class words follow a Zipf-like frequency so SIF
//! weighting has something to work with.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embed::WordVectorTable;
use crate::error::{Error, Result};
use crate::rng;
use crate::text::{LabeledCorpus, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCorpusConfig {
    pub classes: usize,
    pub per_class: usize,
    pub class_vocab: usize,
    pub shared_vocab: usize,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is a shared function word.
    pub shared_rate: f64,
    /// Spread of class words around their centroid.
    pub word_spread: f64,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            classes: 10,
            per_class: 100,
            class_vocab: 40,
            shared_vocab: 12,
            dim: 16,
            min_len: 4,
            max_len: 12,
            shared_rate: 0.35,
            word_spread: 0.6,
            seed: 2019,
        }
    }
}

pub fn class_name(i: usize) -> String {
    format!("intent{i:02}")
}

fn class_word(class: usize, j: usize) -> String {
    format!("c{class}w{j}")
}

fn shared_word(j: usize) -> String {
    format!("fw{j}")
}

/// Builds the toy corpus and its word-vector table.
pub fn toy_corpus(cfg: &ToyCorpusConfig) -> Result<(LabeledCorpus, WordVectorTable)> {
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.class_vocab == 0 || cfg.shared_vocab == 0 {
        return Err(Error::Config("toy corpus sizes must be positive".into()));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(
            "toy corpus needs 0 < min_len <= max_len".into(),
        ));
    }
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut table = WordVectorTable::new(cfg.dim, "toy")?;

    let mut vrng = rng::stream(cfg.seed, &["toy-vectors"]);
    for j in 0..cfg.shared_vocab {
        let v = (0..cfg.dim).map(|_| 0.3 * unit.sample(&mut vrng)).collect();
        table.insert(shared_word(j), v)?;
    }
    for c in 0..cfg.classes {
        let centroid: Vec<f64> = (0..cfg.dim).map(|_| unit.sample(&mut vrng)).collect();
        for j in 0..cfg.class_vocab {
            let v = centroid
                .iter()
                .map(|x| x + cfg.word_spread * unit.sample(&mut vrng))
                .collect();
            table.insert(class_word(c, j), v)?;
        }
    }

    // Zipf-like cumulative weights over the class vocabulary.
    let weights: Vec<f64> = (1..=cfg.class_vocab).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();

    let mut corpus = LabeledCorpus::new();
    for c in 0..cfg.classes {
        let name = class_name(c);
        let mut srng = rng::stream(cfg.seed, &["toy-text", &name]);
        for i in 0..cfg.per_class {
            let len = srng.random_range(cfg.min_len..=cfg.max_len);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    if srng.random_bool(cfg.shared_rate) {
                        shared_word(srng.random_range(0..cfg.shared_vocab))
                    } else {
                        let mut x = srng.random::<f64>() * total;
                        let mut j = 0;
                        while j + 1 < weights.len() && x >= weights[j] {
                            x -= weights[j];
                            j += 1;
                        }
                        class_word(c, j)
                    }
                })
                .collect();
            corpus.push(Utterance::new(
                format!("{name}-{i:04}"),
                words.join(" "),
                &name,
            )?)?;
        }
    }
    Ok((corpus, table))
}
