use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Where attention enters the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionVariant {
    /// Attention over the RNN output; readout from `g'(c_t, s_t)`.
    Post,
    /// Post-attention whose attentional vector is also fed to the next
    /// step's RNN input.
    InputFeeding,
    /// Previous context merged into the RNN input by concat + projection.
    PreConcat,
    /// Previous context merged into the RNN input by a highway gate.
    PreHighway,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 4] = [
        AttentionVariant::Post,
        AttentionVariant::InputFeeding,
        AttentionVariant::PreConcat,
        AttentionVariant::PreHighway,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Post => "post",
            Self::InputFeeding => "if",
            Self::PreConcat => "pre",
            Self::PreHighway => "pre-highway",
        }
    }

    pub fn is_pre(self) -> bool {
        matches!(self, Self::PreConcat | Self::PreHighway)
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "post" => Ok(Self::Post),
            "if" | "input-feeding" => Ok(Self::InputFeeding),
            "pre" | "pre-concat" => Ok(Self::PreConcat),
            "pre-highway" | "highway" => Ok(Self::PreHighway),
            other => Err(Error::InvalidArgument(format!(
                "unknown attention variant `{other}` (expected post|if|pre|pre-highway)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub attention: AttentionVariant,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_size: usize,
    pub embedding_size: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    /// Share one embedding table between encoder and decoder.
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// 2-layer LSTMs, hidden 512, embeddings 200, 30k vocabulary.
    pub fn paper(attention: AttentionVariant) -> Self {
        Self {
            attention,
            encoder_layers: 2,
            decoder_layers: 2,
            hidden_size: 512,
            embedding_size: 200,
            vocab_size: 30_000,
            dropout: 0.1,
            tie_embeddings: false,
        }
    }

    /// Laptop-sized model for the synthetic corpus.
    pub fn desk(attention: AttentionVariant) -> Self {
        Self {
            attention,
            encoder_layers: 1,
            decoder_layers: 1,
            hidden_size: 64,
            embedding_size: 32,
            vocab_size: 200,
            dropout: 0.1,
            tie_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("hidden_size", self.hidden_size),
            ("embedding_size", self.embedding_size),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Input width of the first decoder LSTM layer.
    pub fn decoder_input_size(&self) -> usize {
        match self.attention {
            AttentionVariant::InputFeeding => self.embedding_size + self.hidden_size,
            _ => self.embedding_size,
        }
    }

    /// Number of scalar parameters, by component:
    ///
    /// * embeddings: `V*E`, twice unless tied
    /// * each LSTM layer with input width `n`: `(n + H) * 4H + 4H`
    /// * general attention: `H*H`
    /// * post / input-feeding readout `g'`: `2H*H + H`
    /// * pre-concat input projection: `(H + E)*E + E`
    /// * pre-highway: context projection `H*E` plus gate `2E*E + E`
    /// * output layer: `H*V + V`
    pub fn parameter_count(&self) -> usize {
        let (v, e, h) = (self.vocab_size, self.embedding_size, self.hidden_size);
        let lstm = |input: usize| (input + h) * 4 * h + 4 * h;
        let embeddings = if self.tie_embeddings { v * e } else { 2 * v * e };
        let encoder = lstm(e) + (self.encoder_layers - 1) * lstm(h);
        let decoder = lstm(self.decoder_input_size()) + (self.decoder_layers - 1) * lstm(h);
        let variant = match self.attention {
            AttentionVariant::Post | AttentionVariant::InputFeeding => 2 * h * h + h,
            AttentionVariant::PreConcat => (h + e) * e + e,
            AttentionVariant::PreHighway => h * e + 2 * e * e + e,
        };
        embeddings + encoder + decoder + h * h + variant + h * v + v
    }
}
