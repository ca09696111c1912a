//! Outlier-driven data quality for short-text corpora.
//!
//! Samples in each class are ranked by the distance of their sentence
//! vector from the class mean. The top of the list holds both annotation
//! errors and correct-but-unusual samples; [`eval`] measures how well a
//! ranking surfaces errors, and [`pipeline`] uses the unusual ones to seed
//! further rounds of paraphrase collection.

pub mod detect;
pub mod embed;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod text;

pub use detect::{
    borda_merge, class_mean, detect_all_classes, flag_top_k, rank_baseline, rank_by_distance,
    DetectionConfig, Embedders, Method, RankedEntry, RankedList,
};
pub use embed::{
    count_frequencies, embed_average, embed_bow, embed_sif, load_precomputed, load_word_vectors,
    remove_common_component, sif_weight, EmbeddingMatrix, FrequencyTable, SifConfig,
    WordVectorTable,
};
pub use error::{Error, Result};
pub use pipeline::{
    run_simulation, split_dataset, Generator, GeneratorConfig, PipelineConfig, RoundEvent,
    RoundState, Session, Strategy, Verdict, VerdictLabel, VerdictSource,
};
pub use text::{
    class_key_from_slots, dedupe, load_corpus, tokenize, LabeledCorpus, SlotSpan, Utterance,
};
