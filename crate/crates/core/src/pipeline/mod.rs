//! Multi-round paraphrase collection driven by outlier detection.
//!
//! A round collects paraphrases of the current seeds, ranks each class,
//! queues the top k% for review, and turns reviewed outliers into the next
//! round's seeds. Every change to a [`RoundState`] goes through
//! [`RoundState::apply`] with a [`RoundEvent`], so the event log of a run
//! replays to exactly the same state.

mod generator;
mod session;
mod simulate;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::detect::{
    class_mean, detect_all_classes, euclidean, flag_top_k, DetectionConfig, Embedders, Method,
    RankedEntry, RankedList,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::text::{CorpusRecord, LabeledCorpus, Utterance};

pub use generator::{ClassTemplates, Generator, GeneratorConfig, Paraphrase, VocabPool};
pub use session::Session;
pub use simulate::{
    run_simulation, split_dataset, RoundSummary, SimulationReport, StrategyOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Reuse the first round's seeds every round.
    Same,
    /// Draw next seeds at random from validated data.
    Random,
    /// Promote reviewed, disambiguated outliers to seeds.
    Unique,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Same, Strategy::Random, Strategy::Unique];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Same => "same",
            Strategy::Random => "random",
            Strategy::Unique => "unique",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Strategy::Same),
            "random" => Ok(Strategy::Random),
            "unique" => Ok(Strategy::Unique),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    pub paraphrases_per_seed: usize,
    pub workers_per_seed: usize,
    pub seeds_per_class: usize,
    pub detection: DetectionConfig,
    /// Embedding used to compare seed candidates with other classes.
    pub disambiguation_method: Method,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            strategy: Strategy::Unique,
            rounds: 3,
            paraphrases_per_seed: 5,
            workers_per_seed: 15,
            seeds_per_class: 3,
            detection: DetectionConfig {
                method: Method::Borda(vec![Method::Average, Method::Sif]),
                ..DetectionConfig::default()
            },
            disambiguation_method: Method::Average,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rounds", self.rounds),
            ("paraphrases_per_seed", self.paraphrases_per_seed),
            ("workers_per_seed", self.workers_per_seed),
            ("seeds_per_class", self.seeds_per_class),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if matches!(
            self.disambiguation_method,
            Method::Random | Method::Short | Method::Long | Method::Borda(_)
        ) {
            return Err(Error::Config(format!(
                "`{}` cannot be used for disambiguation",
                self.disambiguation_method
            )));
        }
        self.detection.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLabel {
    Error,
    Unique,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictSource {
    Human,
    SyntheticOracle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub label: VerdictLabel,
    pub source: VerdictSource,
}

/// Review status of a collected item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemStatus {
    Error,
    Unique,
    InlierUnreviewed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedOrigin {
    /// Supplied before the first round.
    Initial,
    /// Reviewed outlier that passed disambiguation.
    Unique,
    /// Drawn by the `random` strategy.
    Random,
    /// Drawn at random to fill a shortfall of unique seeds.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    pub utterance: Utterance,
    pub origin: SeedOrigin,
}

/// Wire form of a [`Seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub origin: SeedOrigin,
    pub utterance: CorpusRecord,
}

impl From<&Seed> for SeedRecord {
    fn from(s: &Seed) -> Self {
        SeedRecord {
            origin: s.origin,
            utterance: s.utterance.to_record(),
        }
    }
}

impl TryFrom<SeedRecord> for Seed {
    type Error = Error;

    fn try_from(r: SeedRecord) -> Result<Self> {
        Ok(Seed {
            utterance: r.utterance.into_utterance()?,
            origin: r.origin,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Collecting,
    Reviewing,
    Closed,
}

/// Ranked list and flagged prefix of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedClass {
    pub class_key: String,
    pub method: String,
    pub entries: Vec<RankedEntry>,
    pub flagged: Vec<String>,
}

/// One line of a round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum RoundEvent {
    RoundStarted {
        round: usize,
        seeds: Vec<SeedRecord>,
    },
    ParaphraseIngested {
        round: usize,
        seed_id: String,
        noise: bool,
        utterance: CorpusRecord,
    },
    Flagged {
        round: usize,
        classes: Vec<FlaggedClass>,
    },
    Verdict {
        round: usize,
        #[serde(flatten)]
        verdict: Verdict,
    },
    Disambiguation {
        round: usize,
        id: String,
        keep: bool,
    },
    SeedsSelected {
        round: usize,
        seeds: Vec<SeedRecord>,
        fallbacks: BTreeMap<String, usize>,
    },
    RoundClosed {
        round: usize,
    },
}

impl RoundEvent {
    pub fn round(&self) -> usize {
        match self {
            RoundEvent::RoundStarted { round, .. }
            | RoundEvent::ParaphraseIngested { round, .. }
            | RoundEvent::Flagged { round, .. }
            | RoundEvent::Verdict { round, .. }
            | RoundEvent::Disambiguation { round, .. }
            | RoundEvent::SeedsSelected { round, .. }
            | RoundEvent::RoundClosed { round } => *round,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

fn group_seeds(records: &[SeedRecord]) -> Result<BTreeMap<String, Vec<Seed>>> {
    let mut out: BTreeMap<String, Vec<Seed>> = BTreeMap::new();
    for r in records {
        let seed = Seed::try_from(r.clone())?;
        out.entry(seed.utterance.class_key().to_string())
            .or_default()
            .push(seed);
    }
    Ok(out)
}

fn seed_records(seeds: &BTreeMap<String, Vec<Seed>>) -> Vec<SeedRecord> {
    seeds.values().flatten().map(SeedRecord::from).collect()
}

/// State of one collection round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    round: usize,
    phase: Phase,
    seeds: BTreeMap<String, Vec<Seed>>,
    collected: LabeledCorpus,
    source_seed: BTreeMap<String, String>,
    noise: BTreeSet<String>,
    ranked: BTreeMap<String, RankedList>,
    flagged: BTreeMap<String, Vec<String>>,
    verdicts: BTreeMap<String, Verdict>,
    judgments: BTreeMap<String, bool>,
    next_seeds: BTreeMap<String, Vec<Seed>>,
    fallbacks: BTreeMap<String, usize>,
}

impl RoundState {
    /// Builds a round from its `RoundStarted` event.
    pub fn from_event(event: &RoundEvent) -> Result<Self> {
        let RoundEvent::RoundStarted { round, seeds } = event else {
            return Err(Error::State("a round must begin with round-started".into()));
        };
        let seeds = group_seeds(seeds)?;
        if seeds.is_empty() {
            return Err(Error::Empty("round has no seeds".into()));
        }
        let mut collected = LabeledCorpus::new();
        for key in seeds.keys() {
            collected.ensure_class(key);
        }
        Ok(RoundState {
            round: *round,
            phase: Phase::Collecting,
            seeds,
            collected,
            source_seed: BTreeMap::new(),
            noise: BTreeSet::new(),
            ranked: BTreeMap::new(),
            flagged: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            judgments: BTreeMap::new(),
            next_seeds: BTreeMap::new(),
            fallbacks: BTreeMap::new(),
        })
    }

    /// Applies one event. Events for other rounds are rejected.
    pub fn apply(&mut self, event: &RoundEvent) -> Result<()> {
        if event.round() != self.round {
            return Err(Error::State(format!(
                "event for round {} applied to round {}",
                event.round(),
                self.round
            )));
        }
        match event {
            RoundEvent::RoundStarted { .. } => {
                return Err(Error::State("round already started".into()));
            }
            RoundEvent::ParaphraseIngested {
                seed_id,
                noise,
                utterance,
                ..
            } => {
                self.expect_phase(Phase::Collecting)?;
                let seed = self
                    .find_seed(seed_id)
                    .ok_or_else(|| Error::UnknownId(seed_id.clone()))?;
                let class = seed.utterance.class_key().to_string();
                let mut record = utterance.clone();
                record.label = Some(class);
                let u = record.into_utterance()?;
                let id = u.id().to_string();
                self.collected.push(u)?;
                self.source_seed.insert(id.clone(), seed_id.clone());
                if *noise {
                    self.noise.insert(id);
                }
            }
            RoundEvent::Flagged { classes, .. } => {
                self.expect_phase(Phase::Collecting)?;
                for c in classes {
                    self.ranked.insert(
                        c.class_key.clone(),
                        RankedList {
                            class_key: c.class_key.clone(),
                            method: c.method.clone(),
                            entries: c.entries.clone(),
                        },
                    );
                    self.flagged.insert(c.class_key.clone(), c.flagged.clone());
                }
                self.phase = Phase::Reviewing;
            }
            RoundEvent::Verdict { verdict, .. } => {
                self.expect_phase(Phase::Reviewing)?;
                self.check_flagged(&verdict.id)?;
                self.verdicts.insert(verdict.id.clone(), verdict.clone());
            }
            RoundEvent::Disambiguation { id, keep, .. } => {
                self.expect_phase(Phase::Reviewing)?;
                self.check_flagged(id)?;
                self.judgments.insert(id.clone(), *keep);
            }
            RoundEvent::SeedsSelected {
                seeds, fallbacks, ..
            } => {
                self.expect_phase(Phase::Reviewing)?;
                self.expect_reviewed()?;
                self.next_seeds = group_seeds(seeds)?;
                self.fallbacks = fallbacks.clone();
            }
            RoundEvent::RoundClosed { .. } => {
                self.expect_phase(Phase::Reviewing)?;
                self.expect_reviewed()?;
                self.phase = Phase::Closed;
            }
        }
        Ok(())
    }

    fn expect_phase(&self, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return Err(Error::State(format!(
                "round {} is {:?}, expected {:?}",
                self.round, self.phase, phase
            )));
        }
        Ok(())
    }

    fn expect_reviewed(&self) -> Result<()> {
        let pending = self.pending();
        if pending > 0 {
            return Err(Error::State(format!(
                "{pending} flagged item(s) still need a verdict"
            )));
        }
        Ok(())
    }

    fn check_flagged(&self, id: &str) -> Result<()> {
        if self.is_flagged(id) {
            Ok(())
        } else if self.collected.contains_id(id) {
            Err(Error::State(format!(
                "`{id}` is not in the validation queue"
            )))
        } else {
            Err(Error::UnknownId(id.to_string()))
        }
    }

    fn find_seed(&self, seed_id: &str) -> Option<&Seed> {
        self.seeds
            .values()
            .flatten()
            .find(|s| s.utterance.id() == seed_id)
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn seeds(&self) -> &BTreeMap<String, Vec<Seed>> {
        &self.seeds
    }

    pub fn seed(&self, seed_id: &str) -> Option<&Seed> {
        self.find_seed(seed_id)
    }

    pub fn collected(&self) -> &LabeledCorpus {
        &self.collected
    }

    /// Seed id a collected item paraphrases.
    pub fn source_seed(&self, id: &str) -> Option<&str> {
        self.source_seed.get(id).map(String::as_str)
    }

    pub fn is_noise(&self, id: &str) -> bool {
        self.noise.contains(id)
    }

    pub fn ranked(&self) -> &BTreeMap<String, RankedList> {
        &self.ranked
    }

    pub fn flagged(&self) -> &BTreeMap<String, Vec<String>> {
        &self.flagged
    }

    pub fn is_flagged(&self, id: &str) -> bool {
        self.flagged.values().flatten().any(|f| f == id)
    }

    pub fn verdicts(&self) -> &BTreeMap<String, Verdict> {
        &self.verdicts
    }

    pub fn judgments(&self) -> &BTreeMap<String, bool> {
        &self.judgments
    }

    pub fn next_seeds(&self) -> &BTreeMap<String, Vec<Seed>> {
        &self.next_seeds
    }

    pub fn fallbacks(&self) -> &BTreeMap<String, usize> {
        &self.fallbacks
    }

    pub fn status(&self, id: &str) -> ItemStatus {
        match self.verdicts.get(id).map(|v| v.label) {
            Some(VerdictLabel::Error) => ItemStatus::Error,
            Some(VerdictLabel::Unique) => ItemStatus::Unique,
            None => ItemStatus::InlierUnreviewed,
        }
    }

    /// Flagged items without a verdict.
    pub fn pending(&self) -> usize {
        self.flagged
            .values()
            .flatten()
            .filter(|id| !self.verdicts.contains_key(*id))
            .count()
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.values().map(Vec::len).sum()
    }

    pub fn error_ids(&self) -> HashSet<String> {
        self.verdicts
            .values()
            .filter(|v| v.label == VerdictLabel::Error)
            .map(|v| v.id.clone())
            .collect()
    }

    /// Collected data minus error verdicts.
    pub fn validated(&self) -> LabeledCorpus {
        let mut out = self.collected.clone();
        out.remove_ids(&self.error_ids());
        out
    }

    /// Unique-labeled items per class, most outlying first.
    pub fn unique_candidates(&self) -> BTreeMap<String, Vec<&Utterance>> {
        self.flagged
            .iter()
            .map(|(key, ids)| {
                let list = ids
                    .iter()
                    .filter(|id| self.status(id) == ItemStatus::Unique)
                    .filter_map(|id| self.collected.get(id))
                    .collect();
                (key.clone(), list)
            })
            .collect()
    }
}

/// What a new round starts from.
pub enum RoundStart<'a> {
    Initial(&'a LabeledCorpus),
    After(&'a RoundState),
}

/// Opens a round: round 1 from the initial seeds, later rounds from the
/// previous round's selected seeds.
pub fn start_round(from: RoundStart<'_>, cfg: &PipelineConfig) -> Result<(RoundState, RoundEvent)> {
    cfg.validate()?;
    let (round, seeds) = match from {
        RoundStart::Initial(corpus) => {
            let mut seeds: BTreeMap<String, Vec<Seed>> = BTreeMap::new();
            for (key, list) in corpus.classes() {
                if list.is_empty() {
                    return Err(Error::Empty("no seeds".into()).in_class(key));
                }
                seeds.insert(
                    key.clone(),
                    list.iter()
                        .map(|u| Seed {
                            utterance: u.clone(),
                            origin: SeedOrigin::Initial,
                        })
                        .collect(),
                );
            }
            (1, seeds)
        }
        RoundStart::After(prev) => {
            if prev.phase != Phase::Closed {
                return Err(Error::State(format!("round {} is not closed", prev.round)));
            }
            if prev.round >= cfg.rounds {
                return Err(Error::State(format!(
                    "all {} configured rounds are done",
                    cfg.rounds
                )));
            }
            for key in prev.seeds.keys() {
                if prev.next_seeds.get(key).is_none_or(Vec::is_empty) {
                    return Err(Error::Empty("no next-round seeds".into()).in_class(key));
                }
            }
            (prev.round + 1, prev.next_seeds.clone())
        }
    };
    if seeds.is_empty() {
        return Err(Error::Empty("no seed classes".into()));
    }
    let event = RoundEvent::RoundStarted {
        round,
        seeds: seed_records(&seeds),
    };
    Ok((RoundState::from_event(&event)?, event))
}

/// Outcome of offering one paraphrase.
#[derive(Debug, Clone, PartialEq)]
pub enum Ingest {
    Added(RoundEvent),
    /// Same normalized text already collected for the class.
    Duplicate {
        existing: String,
    },
    /// Same id and text submitted again.
    AlreadyPresent,
}

/// Accepts one paraphrase of `seed_id`, dropping it if the class already
/// holds the same normalized text.
pub fn ingest_paraphrase(
    round: &mut RoundState,
    seed_id: &str,
    id: &str,
    text: &str,
    noise: bool,
) -> Result<Ingest> {
    round.expect_phase(Phase::Collecting)?;
    let seed = round
        .find_seed(seed_id)
        .ok_or_else(|| Error::UnknownId(format!("seed `{seed_id}`")))?;
    let class = seed.utterance.class_key().to_string();
    let candidate = Utterance::new(id, text, &class)?;
    if let Some(existing) = round.collected.get(id) {
        if existing.text() == text && round.source_seed(id) == Some(seed_id) {
            return Ok(Ingest::AlreadyPresent);
        }
        return Err(Error::DuplicateId(id.to_string()));
    }
    let normalized = candidate.normalized();
    if let Some(dup) = round
        .collected
        .class(&class)
        .unwrap_or_default()
        .iter()
        .find(|u| u.normalized() == normalized)
    {
        return Ok(Ingest::Duplicate {
            existing: dup.id().to_string(),
        });
    }
    let event = RoundEvent::ParaphraseIngested {
        round: round.round,
        seed_id: seed_id.to_string(),
        noise,
        utterance: CorpusRecord {
            id: id.to_string(),
            text: text.to_string(),
            label: None,
            slots: Vec::new(),
        },
    };
    round.apply(&event)?;
    Ok(Ingest::Added(event))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectStats {
    pub generated: usize,
    pub duplicates: usize,
    pub noise: usize,
}

/// Generates `workers_per_seed × paraphrases_per_seed` candidates for each
/// seed and ingests them with per-class de-duplication.
pub fn collect_paraphrases(
    round: &mut RoundState,
    generator: &Generator,
    cfg: &PipelineConfig,
) -> Result<(Vec<RoundEvent>, CollectStats)> {
    round.expect_phase(Phase::Collecting)?;
    let mut events = Vec::new();
    let mut stats = CollectStats::default();
    let plan: Vec<(String, usize, Utterance)> = round
        .seeds
        .iter()
        .flat_map(|(key, seeds)| {
            seeds
                .iter()
                .enumerate()
                .map(move |(i, s)| (key.clone(), i, s.utterance.clone()))
        })
        .collect();
    let round_label = round.round.to_string();
    let pipeline_seed = cfg.seed.to_string();
    for (class, si, seed) in plan {
        let mut r = rng::stream(
            generator.config().seed,
            &[
                "paraphrase",
                &pipeline_seed,
                &round_label,
                &class,
                seed.id(),
            ],
        );
        for w in 0..cfg.workers_per_seed {
            for p in 0..cfg.paraphrases_per_seed {
                let para = generator.paraphrase(&seed, &mut r)?;
                stats.generated += 1;
                let id = format!("r{}:{class}:s{si}:w{w:02}:p{p}", round.round);
                match ingest_paraphrase(round, seed.id(), &id, &para.text, para.noise)? {
                    Ingest::Added(ev) => {
                        stats.noise += usize::from(para.noise);
                        events.push(ev);
                    }
                    Ingest::Duplicate { .. } | Ingest::AlreadyPresent => stats.duplicates += 1,
                }
            }
        }
    }
    Ok((events, stats))
}

/// Ranks each class of the round's collected data and queues the top k%.
pub fn build_validation_queue(
    round: &mut RoundState,
    embedders: &Embedders,
    detection: &DetectionConfig,
) -> Result<RoundEvent> {
    round.expect_phase(Phase::Collecting)?;
    let lists = detect_all_classes(&round.collected, embedders, detection)?;
    let classes = lists
        .into_values()
        .map(|list| FlaggedClass {
            flagged: flag_top_k(&list, detection.k_percent),
            class_key: list.class_key,
            method: list.method,
            entries: list.entries,
        })
        .collect();
    let event = RoundEvent::Flagged {
        round: round.round,
        classes,
    };
    round.apply(&event)?;
    Ok(event)
}

/// Records verdicts on queued items. Repeating an identical verdict is a
/// no-op; nothing is applied if any verdict targets an unqueued id.
pub fn apply_verdicts(
    round: &mut RoundState,
    verdicts: impl IntoIterator<Item = Verdict>,
) -> Result<Vec<RoundEvent>> {
    round.expect_phase(Phase::Reviewing)?;
    let verdicts: Vec<Verdict> = verdicts.into_iter().collect();
    for v in &verdicts {
        round.check_flagged(&v.id)?;
    }
    let mut events = Vec::new();
    for v in verdicts {
        if round
            .verdicts
            .get(&v.id)
            .is_some_and(|old| old.label == v.label)
        {
            continue;
        }
        let event = RoundEvent::Verdict {
            round: round.round,
            verdict: v,
        };
        round.apply(&event)?;
        events.push(event);
    }
    Ok(events)
}

/// Verdicts from generator bookkeeping: flagged noise is an error,
/// any other flagged item is unique.
pub fn oracle_verdicts(round: &RoundState) -> Vec<Verdict> {
    round
        .flagged
        .values()
        .flatten()
        .map(|id| Verdict {
            id: id.clone(),
            label: if round.is_noise(id) {
                VerdictLabel::Error
            } else {
                VerdictLabel::Unique
            },
            source: VerdictSource::SyntheticOracle,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestOther {
    pub id: String,
    pub class_key: String,
    pub text: String,
    pub distance: f64,
}

/// Automated disambiguation of one seed candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disambiguation {
    pub id: String,
    pub class_key: String,
    pub own_distance: f64,
    pub nearest: NearestOther,
    /// True iff the candidate is strictly closer to its own class mean
    /// than to the nearest utterance of any other class.
    pub keep: bool,
}

/// Embeds a reference corpus once and judges seed candidates against it.
pub struct Disambiguator<'a> {
    reference: &'a LabeledCorpus,
    rows: BTreeMap<String, Vec<f64>>,
    means: BTreeMap<String, Vec<f64>>,
}

impl<'a> Disambiguator<'a> {
    pub fn new(
        reference: &'a LabeledCorpus,
        extra: &[Utterance],
        embedders: &Embedders,
        method: &Method,
    ) -> Result<Self> {
        if reference
            .classes()
            .values()
            .filter(|l| !l.is_empty())
            .count()
            < 2
        {
            return Err(Error::Config(
                "disambiguation needs at least two classes".into(),
            ));
        }
        let mut all: Vec<Utterance> = reference.iter().cloned().collect();
        all.extend(
            extra
                .iter()
                .filter(|u| !reference.contains_id(u.id()))
                .cloned(),
        );
        let freq;
        let freq_ref = if matches!(method, Method::Sif) && embedders.frequencies.is_none() {
            freq = crate::embed::count_frequencies(reference)?;
            Some(&freq)
        } else {
            None
        };
        let matrix = embedders.embed(method, &all, freq_ref)?;
        let rows: BTreeMap<String, Vec<f64>> = matrix
            .ids()
            .iter()
            .zip(matrix.rows())
            .map(|(id, r)| (id.clone(), r.to_vec()))
            .collect();
        let mut means = BTreeMap::new();
        for (key, list) in reference.classes() {
            if list.is_empty() {
                continue;
            }
            let mut ids: Vec<&str> = list.iter().map(Utterance::id).collect();
            ids.sort_unstable();
            let m = matrix.select(ids)?;
            means.insert(key.clone(), class_mean(&m)?);
        }
        Ok(Disambiguator {
            reference,
            rows,
            means,
        })
    }

    pub fn judge(&self, candidate: &Utterance) -> Result<Disambiguation> {
        let own = candidate.class_key();
        let row = self
            .rows
            .get(candidate.id())
            .ok_or_else(|| Error::UnknownId(candidate.id().to_string()))?;
        let mean = self
            .means
            .get(own)
            .ok_or_else(|| Error::Empty(format!("no reference data for class `{own}`")))?;
        let own_distance = euclidean(row, mean);
        let mut nearest: Option<NearestOther> = None;
        for (key, list) in self.reference.classes() {
            if key == own {
                continue;
            }
            for u in list {
                let d = euclidean(row, &self.rows[u.id()]);
                let better = match &nearest {
                    None => true,
                    Some(n) => d < n.distance || (d == n.distance && u.id() < n.id.as_str()),
                };
                if better {
                    nearest = Some(NearestOther {
                        id: u.id().to_string(),
                        class_key: key.clone(),
                        text: u.text().to_string(),
                        distance: d,
                    });
                }
            }
        }
        let nearest = nearest.ok_or_else(|| Error::Empty("no other-class utterance".into()))?;
        Ok(Disambiguation {
            id: candidate.id().to_string(),
            class_key: own.to_string(),
            own_distance,
            keep: own_distance < nearest.distance,
            nearest,
        })
    }
}

/// Judges a single candidate against `reference`.
pub fn disambiguate_seed(
    candidate: &Utterance,
    reference: &LabeledCorpus,
    embedders: &Embedders,
    method: &Method,
) -> Result<Disambiguation> {
    Disambiguator::new(
        reference,
        std::slice::from_ref(candidate),
        embedders,
        method,
    )?
    .judge(candidate)
}

/// Inputs for choosing next-round seeds.
pub struct SeedContext<'a> {
    pub strategy: Strategy,
    pub initial: &'a LabeledCorpus,
    /// Validated data used for disambiguation.
    pub reference: &'a LabeledCorpus,
    pub embedders: &'a Embedders,
    pub cfg: &'a PipelineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSelection {
    pub seeds: BTreeMap<String, Vec<Seed>>,
    /// Random fills per class under the `unique` strategy.
    pub fallbacks: BTreeMap<String, usize>,
}

/// Picks next-round seeds for every class of a fully reviewed round.
pub fn select_seeds(round: &RoundState, ctx: &SeedContext<'_>) -> Result<SeedSelection> {
    round.expect_reviewed()?;
    if round.phase == Phase::Collecting {
        return Err(Error::State("round has not been flagged yet".into()));
    }
    let n = ctx.cfg.seeds_per_class;
    let validated = round.validated();
    let mut seeds = BTreeMap::new();
    let mut fallbacks = BTreeMap::new();
    let round_label = round.round.to_string();

    let disambiguator = if ctx.strategy == Strategy::Unique {
        let candidates: Vec<Utterance> = round
            .unique_candidates()
            .into_values()
            .flatten()
            .cloned()
            .collect();
        if candidates.is_empty() {
            None
        } else {
            Some(Disambiguator::new(
                ctx.reference,
                &candidates,
                ctx.embedders,
                &ctx.cfg.disambiguation_method,
            )?)
        }
    } else {
        None
    };

    for key in round.seeds.keys() {
        let pool: Vec<&Utterance> = validated.class(key).unwrap_or_default().iter().collect();
        let mut r = rng::stream(ctx.cfg.seed, &["select-seeds", &round_label, key]);
        let chosen: Vec<Seed> = match ctx.strategy {
            Strategy::Same => ctx
                .initial
                .class(key)
                .unwrap_or_default()
                .iter()
                .map(|u| Seed {
                    utterance: u.clone(),
                    origin: SeedOrigin::Initial,
                })
                .collect(),
            Strategy::Random => pool
                .choose_multiple(&mut r, n.min(pool.len()))
                .map(|u| Seed {
                    utterance: (*u).clone(),
                    origin: SeedOrigin::Random,
                })
                .collect(),
            Strategy::Unique => {
                let mut picked = Vec::new();
                let candidates = round.unique_candidates();
                for u in candidates.get(key).into_iter().flatten() {
                    if picked.len() == n {
                        break;
                    }
                    let keep = match round.judgments.get(u.id()) {
                        Some(k) => *k,
                        None => {
                            disambiguator
                                .as_ref()
                                .expect("built when candidates exist")
                                .judge(u)?
                                .keep
                        }
                    };
                    if keep {
                        picked.push(Seed {
                            utterance: (*u).clone(),
                            origin: SeedOrigin::Unique,
                        });
                    }
                }
                let shortfall = n - picked.len();
                if shortfall > 0 {
                    let taken: HashSet<&str> = picked.iter().map(|s| s.utterance.id()).collect();
                    let mut rest: Vec<&Utterance> = pool
                        .iter()
                        .copied()
                        .filter(|u| !taken.contains(u.id()))
                        .collect();
                    rest.shuffle(&mut r);
                    let fill: Vec<Seed> = rest
                        .into_iter()
                        .take(shortfall)
                        .map(|u| Seed {
                            utterance: u.clone(),
                            origin: SeedOrigin::Fallback,
                        })
                        .collect();
                    log::warn!(
                        "round {}: class `{key}` has {} unique seed(s), filled {} at random",
                        round.round,
                        picked.len(),
                        fill.len()
                    );
                    fallbacks.insert(key.clone(), fill.len());
                    picked.extend(fill);
                }
                picked
            }
        };
        let chosen = if chosen.is_empty() {
            log::warn!(
                "round {}: class `{key}` has no usable seeds, keeping this round's seeds",
                round.round
            );
            *fallbacks.entry(key.clone()).or_default() += round.seeds[key].len();
            round.seeds[key]
                .iter()
                .map(|s| Seed {
                    utterance: s.utterance.clone(),
                    origin: SeedOrigin::Fallback,
                })
                .collect()
        } else {
            chosen
        };
        seeds.insert(key.clone(), chosen);
    }
    Ok(SeedSelection { seeds, fallbacks })
}

/// Closes a reviewed round, recording the next seeds when given.
pub fn close_round(
    round: &mut RoundState,
    selection: Option<SeedSelection>,
) -> Result<Vec<RoundEvent>> {
    round.expect_phase(Phase::Reviewing)?;
    round.expect_reviewed()?;
    let mut events = Vec::new();
    if let Some(sel) = selection {
        let ev = RoundEvent::SeedsSelected {
            round: round.round,
            seeds: seed_records(&sel.seeds),
            fallbacks: sel.fallbacks,
        };
        round.apply(&ev)?;
        events.push(ev);
    }
    let ev = RoundEvent::RoundClosed { round: round.round };
    round.apply(&ev)?;
    events.push(ev);
    Ok(events)
}
