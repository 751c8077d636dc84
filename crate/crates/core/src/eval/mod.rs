//! Evaluation over frozen embeddings: stores, exact retrieval with MRR, the
//! random baseline, paired cosine statistics, linear probes and PCA export.

mod embed;
mod parallel;
mod probe;
mod project;
mod retrieval;
mod store;

pub use embed::{embed_corpus, prepare_input, EmbedOutcome, Item, ItemFailure, RawItem};
pub use parallel::{par_map, worker_threads};
pub use probe::{
    accuracy, average_precision, eval_probe, f1_macro, fit_linear_probe, multilabel_scores, roc_auc, Labels,
    ProbeConfig, ProbeMetrics, ProbeModel, Task, PROBE_TOLERANCE,
};
pub use project::{pca_project, pca_project_matrix, Projection};
pub use retrieval::{mrr, mrr_detail, pair_cosine_stats, random_baseline_mrr, top_k, CosineStats, Hit, MrrDetail};
pub use store::{EmbeddingStore, Pairing};
