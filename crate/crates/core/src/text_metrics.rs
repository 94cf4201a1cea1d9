//! N-gram repetition and quality metrics.
//!
//! `distinct` measures the unique k-gram ratio of a single text, DIMEN
//! mixes several orders of it, and WL2 summarises a whole set of
//! utterances by a weighted L2 norm over a histogram of per-utterance
//! DIMEN scores. Low-DIMEN bins carry the largest weights, so WL2 grows
//! quickly with the number of highly repetitive utterances.
//!
//! All functions are generic over the token type; any `Eq + Hash` value
//! works (surface strings, vocabulary ids).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::Hash;

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Mixing weights for DIMEN: `alpha[k-1]` weighs `distinct(text, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DimenConfig {
    alpha: Vec<f64>,
}

impl DimenConfig {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidArgument("DIMEN needs at least one n-gram order".into()));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "DIMEN weights must be non-negative, got {alpha:?}"
            )));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "DIMEN weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Equal weights over orders `1..=n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("DIMEN order must be positive".into()));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    /// Highest n-gram order.
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
}

impl Default for DimenConfig {
    /// n = 4 with alpha = [0.25; 4].
    fn default() -> Self {
        Self {
            alpha: vec![0.25; 4],
        }
    }
}

/// Bin weights for WL2; the bin count is `beta.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Wl2Config {
    beta: Vec<f64>,
}

impl Wl2Config {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("WL2 needs at least one bin".into()));
        }
        if beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "WL2 weights must be non-negative, got {beta:?}"
            )));
        }
        Ok(Self { beta })
    }

    /// `m` bins with weights `(m-1)/m, (m-2)/m, ..., 0`.
    pub fn linear(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("WL2 bin count must be positive".into()));
        }
        Self::new((0..m).map(|i| (m - 1 - i) as f64 / m as f64).collect())
    }

    pub fn m(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Bin index for a score in `[0, 1]`; bins are left-closed and the
    /// last one also holds 1.0.
    fn bin_of(&self, score: f64) -> usize {
        let m = self.m();
        ((score * m as f64).floor() as usize).min(m - 1)
    }
}

impl Default for Wl2Config {
    /// m = 10 with beta = [0.9, 0.8, ..., 0.0].
    fn default() -> Self {
        Self {
            beta: (0..10).map(|i| (9 - i) as f64 / 10.0).collect(),
        }
    }
}

/// Counts of u-DIMEN scores per bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimenHistogram {
    pub counts: Vec<u64>,
}

impl DimenHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

impl fmt::Display for DimenHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

/// Contiguous k-grams of `seq`, in order, duplicates kept.
pub fn ngrams<T>(seq: &[T], k: usize) -> Result<Vec<&[T]>> {
    if k == 0 {
        return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
    }
    Ok(seq.windows(k).collect())
}

fn clamp_ratio(unique: usize, len: usize, k: usize) -> f64 {
    if len < k {
        return 1.0;
    }
    let denom = len.saturating_sub(k).max(1);
    (unique as f64 / denom as f64).min(1.0)
}

/// Unique k-gram ratio `|{k-grams}| / max(len - k, 1)`, clamped to 1.
///
/// Texts shorter than `k` score exactly 1.
pub fn distinct<T: Eq + Hash>(seq: &[T], k: usize) -> Result<f64> {
    let grams = ngrams(seq, k)?;
    let unique: HashSet<&[T]> = grams.into_iter().collect();
    Ok(clamp_ratio(unique.len(), seq.len(), k))
}

/// DIMEN of a single utterance.
pub fn u_dimen<T: Eq + Hash>(seq: &[T], cfg: &DimenConfig) -> f64 {
    cfg.alpha
        .iter()
        .enumerate()
        .map(|(i, a)| a * distinct(seq, i + 1).expect("order >= 1"))
        .sum()
}

/// DIMEN of a list of utterances, pooled.
///
/// Unique k-grams are collected over all utterances without letting a
/// k-gram cross an utterance boundary; the denominator uses the total
/// unigram count of the list. An order that no utterance is long enough
/// to contain scores 1, as it does for a single short text.
pub fn l_dimen<T: Eq + Hash, S: AsRef<[T]>>(utterances: &[S], cfg: &DimenConfig) -> f64 {
    let total: usize = utterances.iter().map(|u| u.as_ref().len()).sum();
    cfg.alpha
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let k = i + 1;
            let unique: HashSet<&[T]> = utterances
                .iter()
                .flat_map(|u| u.as_ref().windows(k))
                .collect();
            if unique.is_empty() {
                return *a;
            }
            a * clamp_ratio(unique.len(), total, k)
        })
        .sum()
}

/// Equal-width histogram of scores in `[0, 1]`.
pub fn histogram(scores: &[f64], cfg: &Wl2Config) -> Result<DimenHistogram> {
    let mut counts = vec![0u64; cfg.m()];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!(
                "histogram score {s} outside [0, 1]"
            )));
        }
        counts[cfg.bin_of(s)] += 1;
    }
    Ok(DimenHistogram { counts })
}

/// Weighted L2 norm `sqrt(sum beta_i * count_i^2)`.
pub fn wl2(hist: &DimenHistogram, cfg: &Wl2Config) -> Result<f64> {
    if hist.counts.len() != cfg.m() {
        return Err(Error::InvalidArgument(format!(
            "histogram has {} bins but WL2 config has {}",
            hist.counts.len(),
            cfg.m()
        )));
    }
    let acc: f64 = hist
        .counts
        .iter()
        .zip(&cfg.beta)
        .map(|(&c, b)| b * (c as f64) * (c as f64))
        .sum();
    Ok(acc.sqrt())
}

/// Histogram the u-DIMEN of every utterance and take its WL2.
pub fn wl2_of<T: Eq + Hash, S: AsRef<[T]>>(
    utterances: &[S],
    dimen: &DimenConfig,
    cfg: &Wl2Config,
) -> (f64, DimenHistogram) {
    let scores: Vec<f64> = utterances
        .iter()
        .map(|u| u_dimen(u.as_ref(), dimen).clamp(0.0, 1.0))
        .collect();
    let hist = histogram(&scores, cfg).expect("u-DIMEN lies in [0, 1]");
    let value = wl2(&hist, cfg).expect("histogram built from cfg");
    (value, hist)
}

const BLEU_ORDER: usize = 4;
const BLEU_EPSILON: f64 = 1e-9;

/// Sufficient statistics for corpus BLEU; these add across utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [u64; BLEU_ORDER],
    pub totals: [u64; BLEU_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn of<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        let mut stats = BleuStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=BLEU_ORDER {
            let mut ref_counts: HashMap<&[T], u64> = HashMap::new();
            for g in reference.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            let mut hyp_counts: HashMap<&[T], u64> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        }
        stats
    }

    pub fn merge(mut self, other: &BleuStats) -> Self {
        for n in 0..BLEU_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        self
    }

    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let log_precision: f64 = (0..BLEU_ORDER)
            .map(|n| {
                let total = self.totals[n].max(1) as f64;
                let matches = if self.matches[n] == 0 {
                    BLEU_EPSILON
                } else {
                    self.matches[n] as f64
                };
                (matches / total).ln()
            })
            .sum::<f64>()
            / BLEU_ORDER as f64;
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        brevity * log_precision.exp()
    }
}

/// Corpus BLEU-4 against one reference per hypothesis.
pub fn bleu4<T: Eq + Hash, S: AsRef<[T]>>(hypotheses: &[S], references: &[S]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "BLEU needs one reference per hypothesis ({} vs {})",
            hypotheses.len(),
            references.len()
        )));
    }
    let stats = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| BleuStats::of(h.as_ref(), r.as_ref()))
        .fold(BleuStats::default(), |acc, s| acc.merge(&s));
    Ok(stats.score())
}
