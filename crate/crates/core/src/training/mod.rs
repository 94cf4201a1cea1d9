//! Corpus ingestion, vocabulary, the synthetic hard-token corpus and the
//! training loop with validation-driven checkpoint selection.

mod config;
mod corpus;
mod optim;
mod run;
mod text;
mod trainer;

pub use config::{Profile, RunConfig, TrainConfig};
pub use corpus::{build_pairs, generate_synthetic_corpus, Corpus, Pair, PairConfig, SyntheticCorpusSpec};
pub use optim::{clip_grad_norm, Adam};
pub use run::{load_corpora, model_config_for, prepare_datasets, run_experiment, Datasets};
pub use text::{tokenize, Vocabulary, RESERVED_TOKENS};
pub use trainer::{
    evaluate, generate_responses, metric_log_csv, select_checkpoint, train, MetricConfig, MetricReport,
    StepStats, TrainOutcome, ValidationRecord, METRIC_LOG_HEADER,
};
