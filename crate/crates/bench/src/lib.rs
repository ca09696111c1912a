//! Shared fixtures for the criterion benches.

use triage_core::synth::{toy_corpus, ToyCorpusConfig};
use triage_core::{Embedders, LabeledCorpus};

/// Class-clustered toy corpus with matching word vectors.
pub fn fixture(classes: usize, per_class: usize) -> (LabeledCorpus, Embedders) {
    let (corpus, words) = toy_corpus(&ToyCorpusConfig {
        classes,
        per_class,
        ..ToyCorpusConfig::default()
    })
    .expect("toy corpus");
    (corpus, Embedders::with_words(words))
}
