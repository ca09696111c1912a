//! Corpus data model: utterances, slot spans, class grouping and the
//! line-oriented corpus file format.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class key used for slot-annotated records that carry no slots.
pub const NO_SLOTS_KEY: &str = "none";

/// Lowercases `text` and splits it on every non-alphanumeric character.
///
/// Punctuation and apostrophes are separators, so `"What's"` becomes
/// `["what", "s"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// A labeled slot covering tokens `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotSpan {
    #[serde(rename = "name")]
    pub slot_name: String,
    #[serde(rename = "start")]
    pub start_token: usize,
    #[serde(rename = "end")]
    pub end_token: usize,
}

impl SlotSpan {
    pub fn new(slot_name: impl Into<String>, start_token: usize, end_token: usize) -> Self {
        SlotSpan {
            slot_name: slot_name.into(),
            start_token,
            end_token,
        }
    }
}

/// Sorted, de-duplicated slot names joined by `+`; `"none"` when empty.
pub fn class_key_from_slots(slots: &[SlotSpan]) -> String {
    let names: BTreeSet<&str> = slots.iter().map(|s| s.slot_name.as_str()).collect();
    if names.is_empty() {
        NO_SLOTS_KEY.to_string()
    } else {
        names.into_iter().collect::<Vec<_>>().join("+")
    }
}

/// One short text sample with its class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    id: String,
    text: String,
    class_key: String,
    tokens: Vec<String>,
    slots: Vec<SlotSpan>,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        class_key: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        if id.is_empty() {
            return Err(Error::Config("utterance id is empty".into()));
        }
        if text.trim().is_empty() {
            return Err(Error::Empty(format!("text of utterance `{id}`")));
        }
        let tokens = tokenize(&text);
        Ok(Utterance {
            id,
            text,
            class_key: class_key.into(),
            tokens,
            slots: Vec::new(),
        })
    }

    /// Attaches slot spans, validating bounds and overlap against the tokens.
    pub fn with_slots(mut self, mut slots: Vec<SlotSpan>) -> Result<Self> {
        slots.sort_by_key(|s| (s.start_token, s.end_token));
        let mut prev_end = 0;
        for (i, s) in slots.iter().enumerate() {
            if s.start_token >= s.end_token || s.end_token > self.tokens.len() {
                return Err(Error::Config(format!(
                    "slot `{}` span {}..{} out of bounds for {} tokens",
                    s.slot_name,
                    s.start_token,
                    s.end_token,
                    self.tokens.len()
                )));
            }
            if i > 0 && s.start_token < prev_end {
                return Err(Error::Config(format!(
                    "slot `{}` overlaps a previous span",
                    s.slot_name
                )));
            }
            prev_end = s.end_token;
        }
        self.slots = slots;
        Ok(self)
    }

    /// Copy of this utterance under a new id and class.
    pub fn relabeled(&self, id: impl Into<String>, class_key: impl Into<String>) -> Self {
        Utterance {
            id: id.into(),
            class_key: class_key.into(),
            ..self.clone()
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn class_key(&self) -> &str {
        &self.class_key
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn slots(&self) -> &[SlotSpan] {
        &self.slots
    }

    /// Tokens joined by single spaces; the key used for duplicate detection.
    pub fn normalized(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn to_record(&self) -> CorpusRecord {
        CorpusRecord {
            id: self.id.clone(),
            text: self.text.clone(),
            label: Some(self.class_key.clone()),
            slots: self.slots.clone(),
        }
    }
}

/// Wire form of one corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slots: Vec<SlotSpan>,
}

impl CorpusRecord {
    /// Builds the utterance. An explicit label wins over the slot signature.
    pub fn into_utterance(self) -> Result<Utterance> {
        let class_key = match self.label {
            Some(label) => label,
            None => class_key_from_slots(&self.slots),
        };
        Utterance::new(self.id, self.text, class_key)?.with_slots(self.slots)
    }
}

/// Utterances grouped by class key. Ids are unique across the corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledCorpus {
    classes: BTreeMap<String, Vec<Utterance>>,
    ids: HashSet<String>,
}

impl LabeledCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_utterances(utterances: impl IntoIterator<Item = Utterance>) -> Result<Self> {
        let mut corpus = LabeledCorpus::new();
        for u in utterances {
            corpus.push(u)?;
        }
        Ok(corpus)
    }

    /// Appends to the utterance's class, rejecting duplicate ids.
    pub fn push(&mut self, utterance: Utterance) -> Result<()> {
        if !self.ids.insert(utterance.id.clone()) {
            return Err(Error::DuplicateId(utterance.id));
        }
        self.classes
            .entry(utterance.class_key.clone())
            .or_default()
            .push(utterance);
        Ok(())
    }

    /// Registers a class with no utterances yet.
    pub fn ensure_class(&mut self, class_key: &str) {
        self.classes.entry(class_key.to_string()).or_default();
    }

    pub fn class_keys(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn classes(&self) -> &BTreeMap<String, Vec<Utterance>> {
        &self.classes
    }

    pub fn class(&self, key: &str) -> Option<&[Utterance]> {
        self.classes.get(key).map(Vec::as_slice)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    /// All utterances, classes in key order.
    pub fn iter(&self) -> impl Iterator<Item = &Utterance> {
        self.classes.values().flatten()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        if !self.ids.contains(id) {
            return None;
        }
        self.iter().find(|u| u.id == id)
    }

    /// Drops the given ids; returns how many were removed.
    pub fn remove_ids(&mut self, ids: &HashSet<String>) -> usize {
        let mut removed = 0;
        for list in self.classes.values_mut() {
            let before = list.len();
            list.retain(|u| !ids.contains(&u.id));
            removed += before - list.len();
        }
        self.ids.retain(|id| !ids.contains(id));
        removed
    }

    /// Keeps only `ids` (used for subsets such as train/test splits).
    pub fn subset(&self, keep: &HashSet<String>) -> LabeledCorpus {
        let mut out = LabeledCorpus::new();
        for (key, list) in &self.classes {
            out.ensure_class(key);
            for u in list.iter().filter(|u| keep.contains(&u.id)) {
                out.push(u.clone()).expect("ids unique in source");
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for u in self.iter() {
            serde_json::to_writer(&mut out, &u.to_record())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_lines(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_lines()).map_err(|e| Error::io(path, e))
    }
}

/// Parses corpus lines from a reader. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<LabeledCorpus> {
    let mut corpus = LabeledCorpus::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let utterance = record.into_utterance().map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        corpus.push(utterance)?;
    }
    Ok(corpus)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

/// Removes later utterances whose normalized text repeats an earlier one
/// in the same class.
pub fn dedupe(corpus: &LabeledCorpus) -> (LabeledCorpus, usize) {
    let mut out = LabeledCorpus::new();
    let mut removed = 0;
    for (key, list) in &corpus.classes {
        out.ensure_class(key);
        let mut seen = HashSet::new();
        for u in list {
            if seen.insert(u.normalized()) {
                out.push(u.clone()).expect("ids unique in source");
            } else {
                removed += 1;
            }
        }
    }
    (out, removed)
}
