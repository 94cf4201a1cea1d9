use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::text::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::seq2seq::SEP;

/// Message and response ids of one training example.
pub type Pair = (Vec<usize>, Vec<usize>);

/// Multi-turn dialogues, each with at least two turns.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    dialogues: Vec<Vec<String>>,
}

impl Corpus {
    pub fn new(dialogues: Vec<Vec<String>>) -> Result<Self> {
        if let Some(i) = dialogues.iter().position(|d| d.len() < 2) {
            return Err(Error::Data(format!("dialogue {i} has fewer than two turns")));
        }
        Ok(Self { dialogues })
    }

    /// One dialogue per blank-line-separated block, one turn per line.
    /// Blocks with a single turn are dropped.
    pub fn parse(text: &str) -> Self {
        let mut dialogues = Vec::new();
        let mut current: Vec<String> = Vec::new();
        for line in text.lines().chain(std::iter::once("")) {
            let line = line.trim();
            if line.is_empty() {
                if current.len() >= 2 {
                    dialogues.push(std::mem::take(&mut current));
                }
                current.clear();
            } else {
                current.push(line.to_string());
            }
        }
        Self { dialogues }
    }

    /// `message<TAB>response` lines, each read as a two-turn dialogue.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut dialogues = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (m, r) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("line {}: expected `message<TAB>response`", n + 1)))?;
            dialogues.push(vec![m.trim().to_string(), r.trim().to_string()]);
        }
        Ok(Self { dialogues })
    }

    /// Reads a corpus file; `.tsv` files are read as pair files.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let corpus = if path.extension().is_some_and(|e| e == "tsv") {
            Self::parse_tsv(&text)?
        } else {
            Self::parse(&text)
        };
        if corpus.is_empty() {
            return Err(Error::Data(format!("{}: no dialogues with two or more turns", path.display())));
        }
        Ok(corpus)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, d) in self.dialogues.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for turn in d {
                out.push_str(turn);
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn dialogues(&self) -> &[Vec<String>] {
        &self.dialogues
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    /// Tokenized turns, dialogue by dialogue.
    pub fn tokenized(&self) -> Vec<Vec<Vec<String>>> {
        self.dialogues
            .iter()
            .map(|d| d.iter().map(|t| tokenize(t)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairConfig {
    pub history_turns: usize,
    pub message_truncation: usize,
    pub response_truncation: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            history_turns: 3,
            message_truncation: 128,
            response_truncation: 32,
        }
    }
}

/// Every turn after the first becomes a response; its message is the up to
/// `history_turns` preceding turns joined by the separator id and cut from
/// the left. Pairs whose message would be empty are skipped.
pub fn build_pairs(corpus: &Corpus, vocab: &Vocabulary, cfg: &PairConfig) -> Result<Vec<Pair>> {
    if cfg.history_turns == 0 || cfg.message_truncation == 0 {
        return Err(Error::Config("history_turns and message_truncation must be positive".into()));
    }
    let mut pairs = Vec::new();
    for dialogue in corpus.tokenized() {
        let ids: Vec<Vec<usize>> = dialogue.iter().map(|t| vocab.encode(t)).collect();
        for t in 1..ids.len() {
            let mut message = Vec::new();
            for (k, turn) in ids[t.saturating_sub(cfg.history_turns)..t].iter().enumerate() {
                if k > 0 {
                    message.push(SEP);
                }
                message.extend_from_slice(turn);
            }
            if message.len() > cfg.message_truncation {
                message.drain(..message.len() - cfg.message_truncation);
            }
            if message.iter().all(|&id| id == SEP) {
                continue;
            }
            let mut response = ids[t].clone();
            response.truncate(cfg.response_truncation);
            pairs.push((message, response));
        }
    }
    Ok(pairs)
}

/// Parameters of the synthetic hard-token corpus.
///
/// Every turn is a sequence of slots. A slot is a short phrase of filler
/// words, drawn from a Zipf distribution over `vocab_size - hard_tokens`
/// fillers, followed by one hard token. The first turn of a dialogue draws
/// its hard tokens from a Zipf distribution with `hard_exponent` (uniform
/// at 0); each later turn has the same number of slots
/// and replaces every hard token of the previous turn by its image under a
/// fixed random permutation. Hard tokens are therefore rare and predictable
/// only from the preceding turn, while fillers are frequent and carry no
/// context. With `hard_tokens == 0` turns are plain Zipf filler sequences
/// of `slots * (max_phrase + 1)` words.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusSpec {
    /// Distinct surface words, fillers plus hard tokens.
    pub vocab_size: usize,
    pub num_dialogues: usize,
    pub filler_exponent: f64,
    pub hard_tokens: usize,
    pub hard_exponent: f64,
    pub min_turns: usize,
    pub max_turns: usize,
    pub min_slots: usize,
    pub max_slots: usize,
    /// Longest filler phrase before a hard token (at least one word).
    pub max_phrase: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            vocab_size: 195,
            num_dialogues: 1000,
            filler_exponent: 1.0,
            hard_tokens: 189,
            hard_exponent: 0.0,
            min_turns: 2,
            max_turns: 4,
            min_slots: 2,
            max_slots: 4,
            max_phrase: 2,
            seed: 1,
        }
    }
}

const FILLER_WORDS: [&str; 16] = [
    "yeah", "i", "think", "the", "so", "well", "you", "know", "it", "is", "a", "and", "just", "oh", "we", "that",
];
const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ne", "ru", "ta", "vo", "zi", "pe", "du", "sa", "ko", "li", "fu", "ge", "no", "ba", "ti", "ro", "je",
];

fn filler_word(i: usize) -> String {
    match FILLER_WORDS.get(i) {
        Some(w) => (*w).to_string(),
        None => format!("w{i}"),
    }
}

/// Pseudo-word for hard token `i`: two or more syllables, unique per id.
fn hard_word(i: usize) -> String {
    let n = SYLLABLES.len();
    let mut word = String::from(SYLLABLES[i % n]);
    let mut rest = i / n;
    loop {
        word.push_str(SYLLABLES[rest % n]);
        rest /= n;
        if rest == 0 {
            break;
        }
    }
    word
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.hard_tokens >= self.vocab_size {
            return fail("needs at least one filler word");
        }
        if self.min_turns < 2 || self.max_turns < self.min_turns {
            return fail("turn range must satisfy 2 <= min_turns <= max_turns");
        }
        if self.min_slots == 0 || self.max_slots < self.min_slots {
            return fail("slot range must satisfy 1 <= min_slots <= max_slots");
        }
        if self.max_phrase == 0 {
            return fail("max_phrase must be at least 1");
        }
        for (name, v) in [("filler_exponent", self.filler_exponent), ("hard_exponent", self.hard_exponent)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(&format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn fillers(&self) -> Vec<String> {
        (0..self.vocab_size - self.hard_tokens).map(filler_word).collect()
    }

    pub fn hard_words(&self) -> Vec<String> {
        (0..self.hard_tokens).map(hard_word).collect()
    }

    /// The permutation mapping a hard token to its successor turn's token.
    pub fn successor_map(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ self.hard_tokens as u64);
        let mut perm: Vec<usize> = (0..self.hard_tokens).collect();
        perm.shuffle(&mut rng);
        perm
    }
}

/// Deterministic in `spec`. The successor permutation depends only on the
/// number of hard tokens, so corpora drawn with different seeds share it.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fillers = spec.fillers();
    let hard = spec.hard_words();
    let successor = spec.successor_map();
    let zipf = |n: usize, s: f64| {
        let weights: Vec<f64> = (0..n.max(1)).map(|r| (r as f64 + 1.0).powf(-s)).collect();
        WeightedIndex::new(weights).expect("positive weights")
    };
    let filler_dist = zipf(fillers.len(), spec.filler_exponent);
    let hard_dist = zipf(spec.hard_tokens, spec.hard_exponent);

    let mut dialogues = Vec::with_capacity(spec.num_dialogues);
    for _ in 0..spec.num_dialogues {
        let turns = rng.gen_range(spec.min_turns..=spec.max_turns);
        let slots = rng.gen_range(spec.min_slots..=spec.max_slots);
        let mut keys: Vec<usize> = if spec.hard_tokens > 0 {
            (0..slots).map(|_| hard_dist.sample(&mut rng)).collect()
        } else {
            Vec::new()
        };
        let mut dialogue = Vec::with_capacity(turns);
        for t in 0..turns {
            if t > 0 {
                keys.iter_mut().for_each(|k| *k = successor[*k]);
            }
            let mut words: Vec<&str> = Vec::new();
            for s in 0..slots {
                let phrase = if spec.hard_tokens > 0 {
                    rng.gen_range(1..=spec.max_phrase)
                } else {
                    spec.max_phrase + 1
                };
                for _ in 0..phrase {
                    words.push(&fillers[filler_dist.sample(&mut rng)]);
                }
                if let Some(&k) = keys.get(s) {
                    words.push(&hard[k]);
                }
            }
            dialogue.push(words.join(" "));
        }
        dialogues.push(dialogue);
    }
    Corpus::new(dialogues)
}
