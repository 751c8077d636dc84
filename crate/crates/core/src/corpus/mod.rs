//! Metadata records, training-text composition, dataset splits and the
//! synthetic tri-modal corpus used by property tests.

mod record;
mod split;
mod synthetic;

pub use record::{
    compose_text_input, read_records_jsonl, write_records_jsonl, ComposeMode, MetadataRecord,
    TextInput, Translations,
};
pub use split::split_dataset;
pub use synthetic::{gen_synthetic_trimodal, rows_as_sequences, SyntheticCorpus, View};
