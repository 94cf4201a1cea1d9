use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::corpus::{PairConfig, SyntheticCorpusSpec};
use crate::error::{Error, Result};
use crate::loss_weighting::{WeightingScheme, DEFAULT_GAMMA, DEFAULT_UNIFORM_W};
use crate::seq2seq::{AttentionVariant, ModelConfig};
use crate::text_metrics::{DimenConfig, Wl2Config};

/// Optimisation and validation settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scheme: WeightingScheme,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub batch_size: usize,
    /// May be fractional.
    pub epochs: f64,
    /// Epochs between validations; at most 1.
    pub validation_interval: f64,
    pub pairs: PairConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: WeightingScheme::Ce,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_norm: 5.0,
            dropout: 0.1,
            batch_size: 256,
            epochs: 10.0,
            validation_interval: 0.5,
            pairs: PairConfig::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.scheme.validate().map_err(|e| Error::Config(e.to_string()))?;
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("epochs", self.epochs),
            ("valid_interval", self.validation_interval),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2), ("dropout", self.dropout)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.validation_interval > 1.0 {
            return Err(Error::Config(format!(
                "valid_interval {} must not exceed one epoch",
                self.validation_interval
            )));
        }
        if self.batch_size == 0 || self.pairs.history_turns == 0 || self.pairs.message_truncation == 0 {
            return Err(Error::Config(
                "batch_size, history_turns and message_truncation must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Small model and synthetic corpus, sized for a single CPU core.
    Desk,
    /// Full-size model for user-supplied dialogue corpora.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk|paper)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        })
    }
}

/// Everything a `train` invocation needs: model shape, optimisation,
/// data sources and metric settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scheme_name: String,
    pub gamma: f64,
    pub uniform_w: f64,
    /// Corpus files; the synthetic corpus is used when absent.
    pub train_corpus: Option<PathBuf>,
    pub valid_corpus: Option<PathBuf>,
    pub synthetic: SyntheticCorpusSpec,
    pub synthetic_valid_dialogues: usize,
    /// Cap on validation pairs scored at each check.
    pub valid_limit: Option<usize>,
    pub dimen: DimenConfig,
    pub wl2: Wl2Config,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                model: ModelConfig::desk(AttentionVariant::PreConcat),
                train: TrainConfig {
                    // 0.001 leaves pre-attention models near-degenerate
                    // within the desk budget
                    learning_rate: 0.003,
                    batch_size: 32,
                    epochs: 30.0,
                    validation_interval: 1.0,
                    ..TrainConfig::default()
                },
                scheme_name: "ce".into(),
                gamma: DEFAULT_GAMMA,
                uniform_w: DEFAULT_UNIFORM_W,
                train_corpus: None,
                valid_corpus: None,
                // Two-turn dialogues, one filler word per slot: small enough
                // that the context mapping is learnable in about a minute.
                synthetic: SyntheticCorpusSpec {
                    vocab_size: 65,
                    num_dialogues: 3000,
                    filler_exponent: 0.5,
                    hard_tokens: 60,
                    max_turns: 2,
                    max_phrase: 1,
                    ..SyntheticCorpusSpec::default()
                },
                synthetic_valid_dialogues: 300,
                valid_limit: Some(300),
                dimen: DimenConfig::default(),
                wl2: Wl2Config::default(),
            },
            Profile::Paper => Self {
                model: ModelConfig::paper(AttentionVariant::PreHighway),
                train: TrainConfig::default(),
                scheme_name: "ce".into(),
                gamma: DEFAULT_GAMMA,
                uniform_w: DEFAULT_UNIFORM_W,
                train_corpus: None,
                valid_corpus: None,
                synthetic: SyntheticCorpusSpec::default(),
                synthetic_valid_dialogues: 100,
                valid_limit: None,
                dimen: DimenConfig::default(),
                wl2: Wl2Config::default(),
            },
        }
    }

    /// Parses `key = value` lines on top of a profile: `forced` when given,
    /// else the file's `profile` key, else desk.
    pub fn parse(text: &str, forced: Option<Profile>) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let from_file = match entries.iter().find(|(k, _)| k == "profile") {
            Some((_, v)) => Some(v.parse()?),
            None => None,
        };
        let mut cfg = Self::profile(forced.or(from_file).unwrap_or(Profile::Desk));
        for (k, v) in entries.iter().filter(|(k, _)| k != "profile") {
            cfg.set(k, v)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, forced: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, forced)
    }

    /// Applies one setting. Call [`RunConfig::finish`] afterwards.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',').map(|x| num(key, x.trim())).collect()
        }
        let t = &mut self.train;
        match key {
            "attention" => self.model.attention = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "encoder_layers" => self.model.encoder_layers = num(key, value)?,
            "decoder_layers" => self.model.decoder_layers = num(key, value)?,
            "hidden_size" => self.model.hidden_size = num(key, value)?,
            "embedding_size" => self.model.embedding_size = num(key, value)?,
            "vocab_size" => self.model.vocab_size = num(key, value)?,
            "tie_embeddings" => self.model.tie_embeddings = num(key, value)?,
            "scheme" => self.scheme_name = value.to_string(),
            "gamma" => self.gamma = num(key, value)?,
            "uniform_w" => self.uniform_w = num(key, value)?,
            "learning_rate" => t.learning_rate = num(key, value)?,
            "adam_beta1" => t.adam_beta1 = num(key, value)?,
            "adam_beta2" => t.adam_beta2 = num(key, value)?,
            "adam_epsilon" => t.adam_epsilon = num(key, value)?,
            "clip_norm" => t.clip_norm = num(key, value)?,
            "dropout" => t.dropout = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "valid_interval" => t.validation_interval = num(key, value)?,
            "message_truncation" => t.pairs.message_truncation = num(key, value)?,
            "response_truncation" => t.pairs.response_truncation = num(key, value)?,
            "history_turns" => t.pairs.history_turns = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "train_corpus" => self.train_corpus = Some(PathBuf::from(value)),
            "valid_corpus" => self.valid_corpus = Some(PathBuf::from(value)),
            "valid_limit" => {
                let n: usize = num(key, value)?;
                self.valid_limit = (n > 0).then_some(n);
            }
            "synthetic_dialogues" => self.synthetic.num_dialogues = num(key, value)?,
            "synthetic_valid_dialogues" => self.synthetic_valid_dialogues = num(key, value)?,
            "synthetic_hard_tokens" => self.synthetic.hard_tokens = num(key, value)?,
            "synthetic_words" => self.synthetic.vocab_size = num(key, value)?,
            "synthetic_filler_exponent" => self.synthetic.filler_exponent = num(key, value)?,
            "synthetic_hard_exponent" => self.synthetic.hard_exponent = num(key, value)?,
            "synthetic_seed" => self.synthetic.seed = num(key, value)?,
            "synthetic_min_turns" => self.synthetic.min_turns = num(key, value)?,
            "synthetic_max_turns" => self.synthetic.max_turns = num(key, value)?,
            "synthetic_min_slots" => self.synthetic.min_slots = num(key, value)?,
            "synthetic_max_slots" => self.synthetic.max_slots = num(key, value)?,
            "synthetic_max_phrase" => self.synthetic.max_phrase = num(key, value)?,
            "dimen_alpha" => self.dimen = DimenConfig::new(list(key, value)?).map_err(|e| Error::Config(e.to_string()))?,
            "wl2_beta" => self.wl2 = Wl2Config::new(list(key, value)?).map_err(|e| Error::Config(e.to_string()))?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Resolves the weighting scheme, copies shared settings into the model
    /// config and validates the result.
    pub fn finish(&mut self) -> Result<()> {
        self.train.scheme = WeightingScheme::from_name(&self.scheme_name, self.gamma, self.uniform_w)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.model.dropout = self.train.dropout;
        self.train.validate()?;
        self.model.validate()?;
        self.synthetic.validate()?;
        if self.train_corpus.is_some() != self.valid_corpus.is_some() {
            return Err(Error::Config("train_corpus and valid_corpus must be given together".into()));
        }
        Ok(())
    }
}
