//! Text checkpoint container.
//!
//! ```text
//! replex-checkpoint v1
//! seed = 7
//! epoch = 0x3ff8000000000000
//! step = 120
//! valid_wl2 = 0x4014000000000000
//! attention = pre-highway
//! ...
//! vocab 205
//! <one token per line>
//! param enc.emb 205,32
//! <values as 16-digit big-endian hex of the IEEE-754 bits, 8 per line>
//! end
//! ```
//!
//! Real values are stored as raw bit patterns so that a save/load cycle is
//! exact.

use std::fmt::Write as _;
use std::path::Path;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &str = "replex-checkpoint v1";
const VALUES_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    /// Fractional epoch at which the checkpoint was taken.
    pub epoch: f64,
    pub step: u64,
    pub valid_wl2: f64,
    pub valid_l_dimen: f64,
    /// Surface form of every vocabulary id, in id order.
    pub vocab: Vec<String>,
    pub params: ParamStore,
}

fn hex(v: f64) -> String {
    format!("0x{:016x}", v.to_bits())
}

fn parse_hex(s: &str) -> Result<f64> {
    let digits = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(digits, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Checkpoint(format!("bad hex value `{s}`")))
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "epoch = {}", hex(self.epoch));
        let _ = writeln!(out, "step = {}", self.step);
        let _ = writeln!(out, "valid_wl2 = {}", hex(self.valid_wl2));
        let _ = writeln!(out, "valid_l_dimen = {}", hex(self.valid_l_dimen));
        let _ = writeln!(out, "attention = {}", c.attention);
        let _ = writeln!(out, "encoder_layers = {}", c.encoder_layers);
        let _ = writeln!(out, "decoder_layers = {}", c.decoder_layers);
        let _ = writeln!(out, "hidden_size = {}", c.hidden_size);
        let _ = writeln!(out, "embedding_size = {}", c.embedding_size);
        let _ = writeln!(out, "vocab_size = {}", c.vocab_size);
        let _ = writeln!(out, "dropout = {}", hex(c.dropout));
        let _ = writeln!(out, "tie_embeddings = {}", c.tie_embeddings);
        let _ = writeln!(out, "vocab {}", self.vocab.len());
        for tok in &self.vocab {
            let _ = writeln!(out, "{tok}");
        }
        for (name, t) in self.params.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "param {name} {}", dims.join(","));
            for chunk in t.data().chunks(VALUES_PER_LINE) {
                let line: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Checkpoint(format!("missing `{MAGIC}` header")));
        }
        let mut header = std::collections::HashMap::new();
        let vocab_len = loop {
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
            if let Some(n) = line.strip_prefix("vocab ") {
                break n
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad vocab count `{n}`")))?;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        };
        let field = |k: &str| -> Result<&str> {
            header
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("missing header field `{k}`")))
        };
        let int = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("field `{k}` is not an integer")))
        };
        let config = ModelConfig {
            attention: field("attention")?.parse()?,
            encoder_layers: int("encoder_layers")? as usize,
            decoder_layers: int("decoder_layers")? as usize,
            hidden_size: int("hidden_size")? as usize,
            embedding_size: int("embedding_size")? as usize,
            vocab_size: int("vocab_size")? as usize,
            dropout: parse_hex(field("dropout")?)?,
            tie_embeddings: field("tie_embeddings")?
                .parse()
                .map_err(|_| Error::Checkpoint("field `tie_embeddings` is not a boolean".into()))?,
        };
        config.validate()?;

        let mut vocab = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let tok = lines
                .next()
                .ok_or_else(|| Error::Checkpoint("truncated vocabulary".into()))?;
            vocab.push(tok.to_string());
        }

        let mut params = ParamStore::new();
        let mut line = lines.next();
        loop {
            let current = line.ok_or_else(|| Error::Checkpoint("missing `end` marker".into()))?;
            if current == "end" {
                break;
            }
            let rest = current
                .strip_prefix("param ")
                .ok_or_else(|| Error::Checkpoint(format!("expected a parameter, got `{current}`")))?;
            let (name, dims) = rest
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("malformed parameter line `{current}`")))?;
            let shape: Vec<usize> = dims
                .split(',')
                .map(|d| d.parse().map_err(|_| Error::Checkpoint(format!("bad dimension `{d}`"))))
                .collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            line = lines.next();
            while data.len() < n {
                let l = line.ok_or_else(|| Error::Checkpoint(format!("truncated parameter `{name}`")))?;
                for word in l.split_whitespace() {
                    data.push(parse_hex(word)?);
                }
                line = lines.next();
            }
            if data.len() != n {
                return Err(Error::Checkpoint(format!("parameter `{name}` has {} values, expected {n}", data.len())));
            }
            params.add(name, Tensor::new(shape, data)?);
        }

        Ok(Self {
            config,
            seed: int("seed")?,
            epoch: parse_hex(field("epoch")?)?,
            step: int("step")?,
            valid_wl2: parse_hex(field("valid_wl2")?)?,
            valid_l_dimen: parse_hex(field("valid_l_dimen")?)?,
            vocab,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
