use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Generator, PipelineConfig, RoundEvent, Session, Strategy};
use crate::detect::Embedders;
use crate::error::{Error, Result};
use crate::eval::{coverage, diversity, MetricConfig};
use crate::rng;
use crate::text::LabeledCorpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub generated: usize,
    pub duplicates: usize,
    pub collected: usize,
    pub flagged: usize,
    pub errors: usize,
    pub uniques: usize,
    /// Noise items that survived review as unflagged inliers.
    pub missed_noise: usize,
    pub fallbacks: usize,
    /// Validated samples of this round.
    pub samples: usize,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub rounds: Vec<RoundSummary>,
    pub samples: usize,
    pub diversity: f64,
    #[serde(skip)]
    pub final_corpus: LabeledCorpus,
    #[serde(skip)]
    pub train: LabeledCorpus,
    #[serde(skip)]
    pub test: LabeledCorpus,
    #[serde(skip)]
    pub log: Vec<RoundEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: PipelineConfig,
    pub train_ratio: f64,
    pub outcomes: Vec<StrategyOutcome>,
    /// `coverage[train][test]` between the strategies' splits.
    pub coverage: BTreeMap<Strategy, BTreeMap<Strategy, f64>>,
}

impl SimulationReport {
    pub fn outcome(&self, strategy: Strategy) -> Option<&StrategyOutcome> {
        self.outcomes.iter().find(|o| o.strategy == strategy)
    }

    /// Per-round diversity and sample counts, one row per strategy.
    pub fn rounds_tsv(&self) -> String {
        let rounds = self.config.rounds;
        let mut out = String::from("strategy");
        for metric in ["diversity", "samples"] {
            for r in 1..=rounds {
                let _ = write!(out, "\t{metric}_r{r}");
            }
            let _ = write!(out, "\t{metric}_all");
        }
        out.push('\n');
        for o in &self.outcomes {
            out.push_str(&o.strategy.to_string());
            for r in &o.rounds {
                let _ = write!(out, "\t{:.6}", r.diversity);
            }
            let _ = write!(out, "\t{:.6}", o.diversity);
            for r in &o.rounds {
                let _ = write!(out, "\t{}", r.samples);
            }
            let _ = write!(out, "\t{}", o.samples);
            out.push('\n');
        }
        out
    }

    /// Coverage with training strategies as rows and test strategies as columns.
    pub fn coverage_tsv(&self) -> String {
        let mut out = String::from("train\\test");
        for s in self.coverage.keys() {
            let _ = write!(out, "\t{s}");
        }
        out.push('\n');
        for (train, row) in &self.coverage {
            out.push_str(&train.to_string());
            for v in row.values() {
                let _ = write!(out, "\t{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Splits every class by ordering items on a per-id hash, so an item shared
/// by two corpora tends to land on the same side in both. Classes with at
/// least two items keep one on each side; smaller classes go to training.
pub fn split_dataset(
    corpus: &LabeledCorpus,
    train_ratio: f64,
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus)> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Config(format!(
            "train ratio must be in (0, 1), got {train_ratio}"
        )));
    }
    let mut train = LabeledCorpus::new();
    let mut test = LabeledCorpus::new();
    for (key, list) in corpus.classes() {
        train.ensure_class(key);
        test.ensure_class(key);
        let mut items = list.clone();
        if items.len() < 2 {
            log::warn!(
                "class `{key}` has {} item(s); all go to training",
                items.len()
            );
            for u in items {
                train.push(u)?;
            }
            continue;
        }
        items.sort_by_cached_key(|u| {
            (
                rng::stream(seed, &["split", key, u.id()]).next_u64(),
                u.id().to_string(),
            )
        });
        let n = items.len();
        let n_train = ((train_ratio * n as f64).round() as usize).clamp(1, n - 1);
        for (i, u) in items.into_iter().enumerate() {
            if i < n_train {
                train.push(u)?;
            } else {
                test.push(u)?;
            }
        }
    }
    Ok((train, test))
}

fn run_strategy(
    cfg: &PipelineConfig,
    strategy: Strategy,
    generator: &Generator,
    metric: &MetricConfig,
) -> Result<(Session, Vec<RoundSummary>)> {
    let cfg = PipelineConfig {
        strategy,
        ..cfg.clone()
    };
    let initial = generator.initial_seeds(cfg.seeds_per_class)?;
    let embedders = Embedders::with_words(generator.word_vectors());
    let mut session = Session::new(cfg.clone(), initial, embedders, Some(generator.clone()))?;
    let mut summaries = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        session.begin_round()?;
        let stats = session.generate()?;
        session.flag()?;
        session.oracle_review()?;
        session.close()?;
        let round = session.current().expect("round just closed");
        let validated = round.validated();
        let errors = round.error_ids().len();
        let flagged = round.flagged_count();
        let missed_noise = validated.iter().filter(|u| round.is_noise(u.id())).count();
        summaries.push(RoundSummary {
            round: round.round(),
            generated: stats.generated,
            duplicates: stats.duplicates,
            collected: round.collected().len(),
            flagged,
            errors,
            uniques: flagged - errors,
            missed_noise,
            fallbacks: round.fallbacks().values().sum(),
            samples: validated.len(),
            diversity: diversity(&validated, metric)?,
        });
    }
    Ok((session, summaries))
}

/// Runs each strategy independently from the same seeds and generator, then
/// splits every final dataset and cross-measures coverage.
pub fn run_simulation(
    cfg: &PipelineConfig,
    generator: &Generator,
    strategies: &[Strategy],
    train_ratio: f64,
    metric: &MetricConfig,
) -> Result<SimulationReport> {
    cfg.validate()?;
    if strategies.is_empty() {
        return Err(Error::Config("no strategies to simulate".into()));
    }
    let mut outcomes = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let (session, rounds) = run_strategy(cfg, strategy, generator, metric)?;
        let final_corpus = session.final_corpus();
        let (train, test) = split_dataset(&final_corpus, train_ratio, cfg.seed)?;
        log::info!(
            "{strategy}: {} samples over {} rounds",
            final_corpus.len(),
            rounds.len()
        );
        outcomes.push(StrategyOutcome {
            strategy,
            samples: final_corpus.len(),
            diversity: diversity(&final_corpus, metric)?,
            rounds,
            final_corpus,
            train,
            test,
            log: session.log().to_vec(),
        });
    }
    let mut table = BTreeMap::new();
    for a in &outcomes {
        let mut row = BTreeMap::new();
        for b in &outcomes {
            row.insert(b.strategy, coverage(&a.train, &b.test, metric)?);
        }
        table.insert(a.strategy, row);
    }
    Ok(SimulationReport {
        config: cfg.clone(),
        train_ratio,
        outcomes,
        coverage: table,
    })
}
