use std::path::Path;

use super::config::RunConfig;
use super::corpus::{build_pairs, generate_synthetic_corpus, Corpus, Pair, SyntheticCorpusSpec};
use super::text::Vocabulary;
use super::trainer::{train, MetricConfig, TrainOutcome, ValidationRecord};
use crate::error::{Error, Result};
use crate::seq2seq::{ModelConfig, Seq2Seq};

/// Vocabulary and encoded splits for one run.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub vocab: Vocabulary,
    pub train: Vec<Pair>,
    pub valid: Vec<Pair>,
}

/// The training and validation corpora named by `cfg`, or the synthetic
/// pair drawn from `cfg.synthetic` (validation uses the next seed).
pub fn load_corpora(cfg: &RunConfig) -> Result<(Corpus, Corpus)> {
    match (&cfg.train_corpus, &cfg.valid_corpus) {
        (Some(t), Some(v)) => Ok((Corpus::load(t)?, Corpus::load(v)?)),
        _ => {
            let train = generate_synthetic_corpus(&cfg.synthetic)?;
            let valid = generate_synthetic_corpus(&SyntheticCorpusSpec {
                num_dialogues: cfg.synthetic_valid_dialogues,
                seed: cfg.synthetic.seed.wrapping_add(1),
                ..cfg.synthetic.clone()
            })?;
            Ok((train, valid))
        }
    }
}

/// Builds the vocabulary from the training split (capped at the model's
/// vocabulary size) and encodes both splits.
pub fn prepare_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let (train_corpus, valid_corpus) = load_corpora(cfg)?;
    let turns: Vec<Vec<String>> = train_corpus.tokenized().into_iter().flatten().collect();
    let vocab = Vocabulary::build(&turns, cfg.model.vocab_size)?;
    let train = build_pairs(&train_corpus, &vocab, &cfg.train.pairs)?;
    let mut valid = build_pairs(&valid_corpus, &vocab, &cfg.train.pairs)?;
    if let Some(limit) = cfg.valid_limit {
        valid.truncate(limit);
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data("a split produced no message-response pairs".into()));
    }
    Ok(Datasets { vocab, train, valid })
}

/// Model config for `cfg` with the vocabulary size of the built vocabulary.
pub fn model_config_for(cfg: &RunConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    }
}

/// Prepares data, initialises a model from the run seed and trains it.
pub fn run_experiment(
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    on_validation: impl FnMut(&ValidationRecord),
) -> Result<(Datasets, TrainOutcome)> {
    let data = prepare_datasets(cfg)?;
    let mut model = Seq2Seq::new(model_config_for(cfg, &data.vocab), cfg.train.seed)?;
    let metrics = MetricConfig {
        dimen: cfg.dimen.clone(),
        wl2: cfg.wl2.clone(),
    };
    let outcome = train(
        &mut model,
        &data.vocab,
        &data.train,
        &data.valid,
        &cfg.train,
        &metrics,
        out_dir,
        on_validation,
    )?;
    Ok((data, outcome))
}
