use super::{
    apply_verdicts, build_validation_queue, close_round, collect_paraphrases, ingest_paraphrase,
    oracle_verdicts, select_seeds, start_round, CollectStats, Disambiguation, Disambiguator,
    Generator, Ingest, Phase, PipelineConfig, RoundEvent, RoundStart, RoundState, SeedContext,
    Verdict,
};
use crate::detect::Embedders;
use crate::error::{Error, Result};
use crate::text::{dedupe, LabeledCorpus};

/// A whole collection run: configuration, rounds so far, and the event log
/// that reproduces them.
#[derive(Debug, Clone)]
pub struct Session {
    cfg: PipelineConfig,
    initial: LabeledCorpus,
    embedders: Embedders,
    generator: Option<Generator>,
    rounds: Vec<RoundState>,
    log: Vec<RoundEvent>,
}

impl Session {
    pub fn new(
        cfg: PipelineConfig,
        initial: LabeledCorpus,
        embedders: Embedders,
        generator: Option<Generator>,
    ) -> Result<Self> {
        cfg.validate()?;
        if initial.is_empty() {
            return Err(Error::Empty("no initial seeds".into()));
        }
        Ok(Session {
            cfg,
            initial,
            embedders,
            generator,
            rounds: Vec::new(),
            log: Vec::new(),
        })
    }

    /// Rebuilds a session by applying a previously written log.
    pub fn replay(
        cfg: PipelineConfig,
        initial: LabeledCorpus,
        embedders: Embedders,
        generator: Option<Generator>,
        events: impl IntoIterator<Item = RoundEvent>,
    ) -> Result<Self> {
        let mut session = Session::new(cfg, initial, embedders, generator)?;
        for (i, event) in events.into_iter().enumerate() {
            session.apply(event).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(session)
    }

    /// Applies one logged event and appends it to the log.
    pub fn apply(&mut self, event: RoundEvent) -> Result<()> {
        match &event {
            RoundEvent::RoundStarted { round, .. } => {
                if let Some(last) = self.rounds.last() {
                    if last.phase() != Phase::Closed {
                        return Err(Error::State(format!(
                            "round {} is not closed",
                            last.round()
                        )));
                    }
                }
                let expected = self.rounds.len() + 1;
                if *round != expected || *round > self.cfg.rounds {
                    return Err(Error::State(format!(
                        "unexpected start of round {round}, next is {expected}"
                    )));
                }
                self.rounds.push(RoundState::from_event(&event)?);
            }
            _ => self.current_mut()?.apply(&event)?,
        }
        self.log.push(event);
        Ok(())
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn initial(&self) -> &LabeledCorpus {
        &self.initial
    }

    pub fn embedders(&self) -> &Embedders {
        &self.embedders
    }

    pub fn generator(&self) -> Option<&Generator> {
        self.generator.as_ref()
    }

    pub fn rounds(&self) -> &[RoundState] {
        &self.rounds
    }

    pub fn log(&self) -> &[RoundEvent] {
        &self.log
    }

    pub fn current(&self) -> Option<&RoundState> {
        self.rounds.last()
    }

    fn current_mut(&mut self) -> Result<&mut RoundState> {
        self.rounds
            .last_mut()
            .ok_or_else(|| Error::State("no round has been started".into()))
    }

    fn record(&mut self, events: impl IntoIterator<Item = RoundEvent>) -> usize {
        let before = self.log.len();
        self.log.extend(events);
        before
    }

    /// Events appended since position `from`.
    fn since(&self, from: usize) -> &[RoundEvent] {
        &self.log[from..]
    }

    /// True once every configured round is closed.
    pub fn finished(&self) -> bool {
        self.rounds.len() == self.cfg.rounds
            && self
                .rounds
                .last()
                .is_some_and(|r| r.phase() == Phase::Closed)
    }

    pub fn begin_round(&mut self) -> Result<&[RoundEvent]> {
        let (state, event) = match self.rounds.last() {
            None => start_round(RoundStart::Initial(&self.initial), &self.cfg)?,
            Some(prev) => start_round(RoundStart::After(prev), &self.cfg)?,
        };
        self.rounds.push(state);
        let from = self.record([event]);
        Ok(self.since(from))
    }

    /// Adds one externally written paraphrase. Without an id, one is made
    /// from the round, class, and collection count.
    pub fn ingest(&mut self, seed_id: &str, id: Option<&str>, text: &str) -> Result<Ingest> {
        let round = self.current_mut()?;
        let id = match id {
            Some(id) => id.to_string(),
            None => {
                let seed = round
                    .seed(seed_id)
                    .ok_or_else(|| Error::UnknownId(format!("seed `{seed_id}`")))?;
                format!(
                    "r{}:{}:h{:04}",
                    round.round(),
                    seed.utterance.class_key(),
                    round.collected().len()
                )
            }
        };
        let outcome = ingest_paraphrase(round, seed_id, &id, text, false)?;
        if let Ingest::Added(ev) = &outcome {
            self.record([ev.clone()]);
        }
        Ok(outcome)
    }

    /// Collects paraphrases for every seed from the synthetic generator.
    pub fn generate(&mut self) -> Result<CollectStats> {
        let generator = self
            .generator
            .clone()
            .ok_or_else(|| Error::Config("session has no paraphrase generator".into()))?;
        let cfg = self.cfg.clone();
        let (events, stats) = collect_paraphrases(self.current_mut()?, &generator, &cfg)?;
        self.record(events);
        Ok(stats)
    }

    /// Ranks the collected data and fills the validation queue.
    pub fn flag(&mut self) -> Result<&[RoundEvent]> {
        let detection = self.cfg.detection.clone();
        let embedders = self.embedders.clone();
        let event = build_validation_queue(self.current_mut()?, &embedders, &detection)?;
        let from = self.record([event]);
        Ok(self.since(from))
    }

    pub fn verdicts(&mut self, verdicts: Vec<Verdict>) -> Result<&[RoundEvent]> {
        let events = apply_verdicts(self.current_mut()?, verdicts)?;
        let from = self.record(events);
        Ok(self.since(from))
    }

    /// Labels the whole queue from generator bookkeeping.
    pub fn oracle_review(&mut self) -> Result<&[RoundEvent]> {
        let round = self.current_mut()?;
        let verdicts = oracle_verdicts(round);
        let events = apply_verdicts(round, verdicts)?;
        let from = self.record(events);
        Ok(self.since(from))
    }

    /// Automated disambiguation of a queued item against validated data.
    pub fn disambiguation(&self, id: &str) -> Result<Disambiguation> {
        let round = self
            .current()
            .ok_or_else(|| Error::State("no round has been started".into()))?;
        let candidate = round
            .collected()
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        if !round.is_flagged(id) {
            return Err(Error::State(format!(
                "`{id}` is not in the validation queue"
            )));
        }
        let reference = self.reference();
        Disambiguator::new(
            &reference,
            std::slice::from_ref(candidate),
            &self.embedders,
            &self.cfg.disambiguation_method,
        )?
        .judge(candidate)
    }

    /// Records a reviewer's keep/drop decision, overriding the automated one.
    pub fn judge(&mut self, id: &str, keep: bool) -> Result<&[RoundEvent]> {
        let round = self.current_mut()?;
        if round.judgments().get(id) == Some(&keep) {
            return Ok(&[]);
        }
        let event = RoundEvent::Disambiguation {
            round: round.round(),
            id: id.to_string(),
            keep,
        };
        round.apply(&event)?;
        let from = self.record([event]);
        Ok(self.since(from))
    }

    /// Closes the current round, choosing next seeds unless it is the last.
    pub fn close(&mut self) -> Result<&[RoundEvent]> {
        let round = self
            .current()
            .ok_or_else(|| Error::State("no round has been started".into()))?;
        let selection = if round.round() < self.cfg.rounds && round.phase() == Phase::Reviewing {
            let reference = self.reference();
            let ctx = SeedContext {
                strategy: self.cfg.strategy,
                initial: &self.initial,
                reference: &reference,
                embedders: &self.embedders,
                cfg: &self.cfg,
            };
            Some(select_seeds(round, &ctx)?)
        } else {
            None
        };
        let events = close_round(self.current_mut()?, selection)?;
        let from = self.record(events);
        Ok(self.since(from))
    }

    /// Validated data of every round so far, current round included.
    pub fn reference(&self) -> LabeledCorpus {
        let mut out = LabeledCorpus::new();
        for r in &self.rounds {
            for u in r.validated().iter() {
                out.ensure_class(u.class_key());
                // Ids carry the round number, so they never collide.
                let _ = out.push(u.clone());
            }
        }
        out
    }

    /// Union of validated data from closed rounds, de-duplicated per class.
    pub fn final_corpus(&self) -> LabeledCorpus {
        let mut out = LabeledCorpus::new();
        for r in self.rounds.iter().filter(|r| r.phase() == Phase::Closed) {
            for key in r.seeds().keys() {
                out.ensure_class(key);
            }
            for u in r.validated().iter() {
                let _ = out.push(u.clone());
            }
        }
        dedupe(&out).0
    }

    /// Runs every remaining step with generated paraphrases and oracle verdicts.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.finished() {
            match self.current().map(RoundState::phase) {
                None | Some(Phase::Closed) => {
                    self.begin_round()?;
                }
                Some(Phase::Collecting) => {
                    self.generate()?;
                    self.flag()?;
                }
                Some(Phase::Reviewing) => {
                    self.oracle_review()?;
                    self.close()?;
                }
            }
        }
        Ok(())
    }
}
