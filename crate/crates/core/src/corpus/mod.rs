//! Text ingestion, vocabularies, TF-IDF targets and per-objective batches.

mod batch;
mod dataset;
mod tfidf;
mod transform;
mod vocab;

pub use batch::{
    labeled_batch, sample_batch, split_batch, target_kind, DataSource, SourceKind, TargetKind,
    Targets, TransformedBatch,
};
pub use dataset::{
    load_labeled_dataset, load_text_corpus, parse_labeled_tsv, split_documents, Corpus,
    LabeledDataset, Split,
};
pub use tfidf::{compute_tfidf, TfidfTable};
pub use transform::{apply_transform, Action, Transformed, TransformParams, DEFAULT_SELECTION_RATE};
pub use vocab::{TokenId, Vocab, CLS, MASK, NUM_SPECIALS, PAD, UNK};
