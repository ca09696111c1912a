//! Deterministic stand-in for paraphrase writers.
//!
//! Every class has templates whose `{pool}` placeholders are filled from a
//! small core vocabulary and a larger fringe vocabulary. A paraphrase of a
//! seed keeps the seed's template and words at the adoption rate, and the
//! share of fringe words in the seed raises the chance of drawing fresh
//! fringe words. Seeds that are themselves outliers therefore pull later
//! paraphrases toward less common phrasing. A configurable share of the
//! output is noise: text for another class, or garbled words.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embed::WordVectorTable;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::text::{tokenize, LabeledCorpus, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabPool {
    pub core: Vec<String>,
    pub fringe: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplates {
    pub name: String,
    /// Whitespace-separated words; `{pool}` marks a slot filled from `pools`.
    pub templates: Vec<String>,
    pub pools: BTreeMap<String, VocabPool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub classes: Vec<ClassTemplates>,
    /// Probability of keeping the seed's template, and of reusing the
    /// seed's word for a slot.
    pub fringe_adoption: f64,
    /// Chance of a fresh fringe word for an unprimed slot.
    pub base_fringe_rate: f64,
    /// Extra fringe chance, scaled by the seed's share of fringe words.
    pub priming_boost: f64,
    /// Probability that a paraphrase is cross-class or garbled.
    pub noise_rate: f64,
    pub garble_vocab: Vec<String>,
    /// Dimension of the toy word vectors.
    pub dim: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::synthetic(10, 7)
    }
}

const SHARED_PATTERNS: [&str; 4] = [
    "can you {a} the {b} {lit} {c}",
    "i want to {a} my {b} {c}",
    "please {a} {b} for me {lit}",
    "what is the {b} {lit} {c}",
];

impl GeneratorConfig {
    /// Programmatic vocabulary: `num_classes` classes sharing four sentence
    /// patterns, each with three slot pools of 5 core and 12 fringe words.
    pub fn synthetic(num_classes: usize, seed: u64) -> Self {
        let classes = (0..num_classes)
            .map(|c| {
                let templates = SHARED_PATTERNS
                    .iter()
                    .enumerate()
                    .map(|(t, p)| p.replace("{lit}", &format!("c{c}lit{t}")))
                    .collect();
                let pools = ["a", "b", "c"]
                    .iter()
                    .map(|p| {
                        let pool = VocabPool {
                            core: (0..5).map(|j| format!("c{c}{p}{j}")).collect(),
                            fringe: (0..12).map(|j| format!("c{c}{p}f{j}")).collect(),
                        };
                        (p.to_string(), pool)
                    })
                    .collect();
                ClassTemplates {
                    name: format!("intent{c:02}"),
                    templates,
                    pools,
                }
            })
            .collect();
        GeneratorConfig {
            classes,
            fringe_adoption: 0.7,
            base_fringe_rate: 0.05,
            priming_boost: 0.3,
            noise_rate: 0.03,
            garble_vocab: (0..40).map(|j| format!("zz{j}")).collect(),
            dim: 24,
            seed,
        }
    }

    /// Same vocabulary, no fringe words ever drawn or adopted.
    pub fn without_fringe(mut self) -> Self {
        self.base_fringe_rate = 0.0;
        self.priming_boost = 0.0;
        self
    }
}

#[derive(Debug, Clone)]
enum Part {
    Word(String),
    Slot(String),
}

#[derive(Debug, Clone)]
struct Template {
    parts: Vec<Part>,
    literals: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct ClassModel {
    name: String,
    templates: Vec<Template>,
    pools: BTreeMap<String, VocabPool>,
    /// Word to (pool, is_fringe).
    slot_words: HashMap<String, (String, bool)>,
}

/// A validated [`GeneratorConfig`] ready to write paraphrases.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    classes: BTreeMap<String, ClassModel>,
}

/// One generated paraphrase.
#[derive(Debug, Clone, PartialEq)]
pub struct Paraphrase {
    pub text: String,
    pub noise: bool,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        for (name, rate) in [
            ("fringe_adoption", cfg.fringe_adoption),
            ("base_fringe_rate", cfg.base_fringe_rate),
            ("priming_boost", cfg.priming_boost),
            ("noise_rate", cfg.noise_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "{name} must be in [0, 1], got {rate}"
                )));
            }
        }
        if cfg.dim == 0 {
            return Err(Error::Config(
                "generator vector dim must be positive".into(),
            ));
        }
        if cfg.garble_vocab.is_empty() && cfg.noise_rate > 0.0 {
            return Err(Error::Config("noise needs a garble vocabulary".into()));
        }
        let mut classes = BTreeMap::new();
        for spec in &cfg.classes {
            let model = ClassModel::new(spec)?;
            if classes.insert(spec.name.clone(), model).is_some() {
                return Err(Error::Config(format!(
                    "class `{}` defined twice",
                    spec.name
                )));
            }
        }
        if classes.is_empty() {
            return Err(Error::Config("generator has no classes".into()));
        }
        Ok(Generator { cfg, classes })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    /// Core-only seeds, cycling through the templates.
    pub fn initial_seeds(&self, per_class: usize) -> Result<LabeledCorpus> {
        let mut corpus = LabeledCorpus::new();
        for (name, model) in &self.classes {
            let mut rng = rng::stream(self.cfg.seed, &["initial-seeds", name]);
            let mut seen = BTreeSet::new();
            let mut attempts = 0;
            while seen.len() < per_class {
                let template = &model.templates[(seen.len() + attempts) % model.templates.len()];
                let text = model.fill(template, &mut rng, |_, pool, rng| {
                    pool.core.choose(rng).expect("core pool non-empty").clone()
                });
                if seen.insert(text.clone()) {
                    let id = format!("seed:{name}:{}", seen.len() - 1);
                    corpus.push(Utterance::new(id, text, name)?)?;
                } else {
                    attempts += 1;
                    if attempts > 1000 {
                        return Err(Error::Config(format!(
                            "class `{name}` cannot produce {per_class} distinct seeds"
                        )));
                    }
                }
            }
        }
        Ok(corpus)
    }

    /// One paraphrase of `seed` for its class.
    pub fn paraphrase(&self, seed: &Utterance, rng: &mut StreamRng) -> Result<Paraphrase> {
        let model = self.classes.get(seed.class_key()).ok_or_else(|| {
            Error::Config(format!("generator has no class `{}`", seed.class_key()))
        })?;
        if rng.random_bool(self.cfg.noise_rate) {
            return Ok(Paraphrase {
                text: self.noise(model, rng),
                noise: true,
            });
        }
        let tokens = seed.tokens();
        let mut seed_words: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut slot_count = 0usize;
        let mut fringe_count = 0usize;
        for t in tokens {
            if let Some((pool, fringe)) = model.slot_words.get(t) {
                seed_words.entry(pool).or_default().push(t);
                slot_count += 1;
                fringe_count += usize::from(*fringe);
            }
        }
        let fringe_share = if slot_count == 0 {
            0.0
        } else {
            fringe_count as f64 / slot_count as f64
        };
        let fringe_rate =
            (self.cfg.base_fringe_rate + self.cfg.priming_boost * fringe_share).min(1.0);

        let template = if rng.random_bool(self.cfg.fringe_adoption) {
            model.closest_template(tokens)
        } else {
            model.templates.choose(rng).expect("templates non-empty")
        };
        let adoption = self.cfg.fringe_adoption;
        let text = model.fill(template, rng, |pool_name, pool, rng| {
            if let Some(words) = seed_words.get(pool_name) {
                if rng.random_bool(adoption) {
                    return words.choose(rng).expect("non-empty").to_string();
                }
            }
            let list = if !pool.fringe.is_empty() && rng.random_bool(fringe_rate) {
                &pool.fringe
            } else {
                &pool.core
            };
            list.choose(rng).expect("pool non-empty").clone()
        });
        Ok(Paraphrase { text, noise: false })
    }

    fn noise(&self, own: &ClassModel, rng: &mut StreamRng) -> String {
        let others: Vec<&ClassModel> = self
            .classes
            .values()
            .filter(|m| m.name != own.name)
            .collect();
        if !others.is_empty() && rng.random_bool(0.5) {
            let other = others.choose(rng).expect("non-empty");
            let template = other.templates.choose(rng).expect("templates non-empty");
            return other.fill(template, rng, |_, pool, rng| {
                pool.core.choose(rng).expect("core non-empty").clone()
            });
        }
        let len = rng.random_range(3..=7);
        (0..len)
            .map(|_| {
                self.cfg
                    .garble_vocab
                    .choose(rng)
                    .expect("garble vocab")
                    .as_str()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Toy vectors for every word the generator can emit. Words used by
    /// several classes sit near the origin; core and template words near
    /// their class centroid; fringe words farther out; garble words far
    /// from everything.
    pub fn word_vectors(&self) -> WordVectorTable {
        let dim = self.cfg.dim;
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let sample = |label: &str, scale: f64, center: Option<&[f64]>| -> Vec<f64> {
            let mut r = rng::stream(self.cfg.seed, &["word-vector", label]);
            (0..dim)
                .map(|i| center.map_or(0.0, |c| c[i]) + scale * unit.sample(&mut r))
                .collect()
        };

        let mut owners: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (name, m) in &self.classes {
            for w in m.vocabulary() {
                owners.entry(w).or_default().insert(name);
            }
        }
        let centroids: BTreeMap<&str, Vec<f64>> = self
            .classes
            .keys()
            .map(|name| {
                (
                    name.as_str(),
                    sample(&format!("centroid:{name}"), 1.0, None),
                )
            })
            .collect();

        let mut table = WordVectorTable::new(dim, "generator").expect("dim checked");
        for (word, classes) in &owners {
            let v = if classes.len() > 1 {
                sample(word, 0.3, None)
            } else {
                let class = classes.iter().next().expect("non-empty");
                let model = &self.classes[*class];
                let fringe = model.slot_words.get(*word).is_some_and(|(_, f)| *f);
                let scale = if fringe { 0.9 } else { 0.25 };
                sample(word, scale, Some(&centroids[class]))
            };
            table.insert(*word, v).expect("dim matches");
        }
        for word in &self.cfg.garble_vocab {
            if table.get(word).is_none() {
                table
                    .insert(word.clone(), sample(word, 1.5, None))
                    .expect("dim matches");
            }
        }
        table
    }
}

impl ClassModel {
    fn new(spec: &ClassTemplates) -> Result<Self> {
        if spec.templates.is_empty() {
            return Err(Error::Config(format!(
                "class `{}` has no templates",
                spec.name
            )));
        }
        let mut slot_words = HashMap::new();
        for (pool_name, pool) in &spec.pools {
            if pool.core.is_empty() {
                return Err(Error::Config(format!(
                    "pool `{pool_name}` of class `{}` has no core words",
                    spec.name
                )));
            }
            for (words, fringe) in [(&pool.core, false), (&pool.fringe, true)] {
                for w in words {
                    if tokenize(w) != [w.clone()] {
                        return Err(Error::Config(format!(
                            "pool word `{w}` must be a single lowercase token"
                        )));
                    }
                    slot_words.insert(w.clone(), (pool_name.clone(), fringe));
                }
            }
        }
        let templates = spec
            .templates
            .iter()
            .map(|t| {
                let mut parts = Vec::new();
                let mut literals = BTreeSet::new();
                for piece in t.split_whitespace() {
                    if let Some(name) = piece.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
                        if !spec.pools.contains_key(name) {
                            return Err(Error::Config(format!(
                                "template `{t}` uses unknown pool `{name}`"
                            )));
                        }
                        parts.push(Part::Slot(name.to_string()));
                    } else {
                        for tok in tokenize(piece) {
                            literals.insert(tok.clone());
                            parts.push(Part::Word(tok));
                        }
                    }
                }
                Ok(Template { parts, literals })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassModel {
            name: spec.name.clone(),
            templates,
            pools: spec.pools.clone(),
            slot_words,
        })
    }

    fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.templates
            .iter()
            .flat_map(|t| t.literals.iter().map(String::as_str))
            .chain(self.slot_words.keys().map(String::as_str))
    }

    /// Template sharing the most literal words with `tokens`; first wins ties.
    fn closest_template(&self, tokens: &[String]) -> &Template {
        let present: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
        let mut best = &self.templates[0];
        let mut best_score = 0;
        for t in &self.templates {
            let score = t
                .literals
                .iter()
                .filter(|w| present.contains(w.as_str()))
                .count();
            if score > best_score {
                best = t;
                best_score = score;
            }
        }
        best
    }

    fn fill<F>(&self, template: &Template, rng: &mut StreamRng, mut pick: F) -> String
    where
        F: FnMut(&str, &VocabPool, &mut StreamRng) -> String,
    {
        template
            .parts
            .iter()
            .map(|part| match part {
                Part::Word(w) => w.clone(),
                Part::Slot(name) => pick(name, &self.pools[name], rng),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
