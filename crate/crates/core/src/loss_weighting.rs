//! Weighted token losses and their derivatives with respect to the
//! target-token probability.
//!
//! Token-level schemes weight each token's cross-entropy by a function of
//! its own probability `p`:
//!
//! * TFL: `(1 - p)^gamma`, always at most 1.
//! * TLDR: `cos(p * pi) + 1`, above 1 for `p < 0.5` and below 1 above it.
//!
//! Example-level schemes (FL, LDR) use one weight per response, computed
//! from the mean token probability, and scale the response's mean CE.
//! When used for training those weights are treated as constants.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Lower clamp applied to every probability before taking a log.
pub const PROB_EPSILON: f64 = 1e-12;

/// Probability of a target token, clamped to `[PROB_EPSILON, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TokenProbability(f64);

impl TokenProbability {
    pub fn new(p: f64) -> Self {
        if p.is_nan() {
            return Self(PROB_EPSILON);
        }
        Self(p.clamp(PROB_EPSILON, 1.0))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<f64> for TokenProbability {
    fn from(p: f64) -> Self {
        Self::new(p)
    }
}

/// Per-token probabilities of one target response.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceProbabilities {
    probs: Vec<TokenProbability>,
}

impl SequenceProbabilities {
    pub fn new(probs: impl IntoIterator<Item = f64>) -> Result<Self> {
        let probs: Vec<_> = probs.into_iter().map(TokenProbability::new).collect();
        if probs.is_empty() {
            return Err(Error::InvalidArgument("sequence has no target tokens".into()));
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenProbability> + '_ {
        self.probs.iter().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightingScheme {
    Ce,
    Fl { gamma: f64 },
    Ldr,
    Tfl { gamma: f64 },
    Tldr,
    Uniform { w: f64 },
}

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_UNIFORM_W: f64 = 2.0;

impl WeightingScheme {
    /// Builds a scheme from its short name, validating the parameter it uses.
    pub fn from_name(name: &str, gamma: f64, uniform_w: f64) -> Result<Self> {
        let scheme = match name.to_ascii_lowercase().as_str() {
            "ce" => Self::Ce,
            "fl" => Self::Fl { gamma },
            "ldr" => Self::Ldr,
            "tfl" => Self::Tfl { gamma },
            "tldr" => Self::Tldr,
            "uniform" => Self::Uniform { w: uniform_w },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown weighting scheme `{other}` (expected ce|fl|ldr|tfl|tldr|uniform)"
                )))
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Fl { gamma } | Self::Tfl { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => Err(
                Error::InvalidArgument(format!("focusing parameter must be >= 0, got {gamma}")),
            ),
            Self::Uniform { w } if !(w > 0.0 && w.is_finite()) => Err(Error::InvalidArgument(
                format!("uniform weight must be > 0, got {w}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ce => "ce",
            Self::Fl { .. } => "fl",
            Self::Ldr => "ldr",
            Self::Tfl { .. } => "tfl",
            Self::Tldr => "tldr",
            Self::Uniform { .. } => "uniform",
        }
    }

    /// True for schemes whose weight depends on each token separately.
    pub fn is_token_level(&self) -> bool {
        !matches!(self, Self::Fl { .. } | Self::Ldr)
    }

    /// Weighted loss of one token (token-level schemes; example-level
    /// schemes fall back to plain CE here).
    pub fn token_loss(&self, p: TokenProbability) -> f64 {
        match *self {
            Self::Tfl { gamma } => tfl_token(p, gamma),
            Self::Tldr => tldr_token(p),
            Self::Uniform { w } => uniform_token(p, w),
            Self::Ce | Self::Fl { .. } | Self::Ldr => ce(p),
        }
    }

    /// `d token_loss / dp`.
    pub fn token_grad(&self, p: TokenProbability) -> f64 {
        match *self {
            Self::Tfl { gamma } => grad_tfl(p, gamma),
            Self::Tldr => grad_tldr(p),
            Self::Uniform { w } => w * grad_ce(p),
            Self::Ce | Self::Fl { .. } | Self::Ldr => grad_ce(p),
        }
    }

    /// Constant per-response weight used by example-level schemes; 1 for
    /// token-level ones.
    pub fn example_weight(&self, sp: &SequenceProbabilities) -> f64 {
        match *self {
            Self::Fl { gamma } => (1.0 - sequence_easiness(sp)).powf(gamma),
            Self::Ldr => cosw(sequence_easiness(sp)),
            _ => 1.0,
        }
    }
}

impl fmt::Display for WeightingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fl { gamma } | Self::Tfl { gamma } => write!(f, "{}(gamma={gamma})", self.name()),
            Self::Uniform { w } => write!(f, "uniform(w={w})"),
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for WeightingScheme {
    type Err = Error;

    /// Parses a bare name with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s, DEFAULT_GAMMA, DEFAULT_UNIFORM_W)
    }
}

pub fn ce(p: TokenProbability) -> f64 {
    -p.get().ln()
}

/// Cosine weight `cos(p * pi) + 1`, mapping `[0, 1]` onto `[2, 0]`.
pub fn cosw(p: f64) -> f64 {
    (p * PI).cos() + 1.0
}

/// Mean token probability of a response. Low means hard.
pub fn sequence_easiness(sp: &SequenceProbabilities) -> f64 {
    sp.iter().map(TokenProbability::get).sum::<f64>() / sp.len() as f64
}

/// Mean CE over the response's tokens.
pub fn sequence_loss_mean(sp: &SequenceProbabilities) -> f64 {
    sp.iter().map(ce).sum::<f64>() / sp.len() as f64
}

pub fn fl_example(sp: &SequenceProbabilities, gamma: f64) -> f64 {
    (1.0 - sequence_easiness(sp)).powf(gamma) * sequence_loss_mean(sp)
}

pub fn ldr_example(sp: &SequenceProbabilities) -> f64 {
    cosw(sequence_easiness(sp)) * sequence_loss_mean(sp)
}

pub fn tfl_token(p: TokenProbability, gamma: f64) -> f64 {
    (1.0 - p.get()).powf(gamma) * ce(p)
}

pub fn tldr_token(p: TokenProbability) -> f64 {
    cosw(p.get()) * ce(p)
}

pub fn uniform_token(p: TokenProbability, w: f64) -> f64 {
    w * ce(p)
}

pub fn grad_ce(p: TokenProbability) -> f64 {
    -1.0 / p.get()
}

pub fn grad_tfl(p: TokenProbability, gamma: f64) -> f64 {
    let p = p.get();
    let q = 1.0 - p;
    // gamma * q^(gamma-1) * log p vanishes for gamma = 0 and as p -> 1.
    let focus = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln()
    };
    focus - q.powf(gamma) / p
}

/// Derivative of `(cos(p pi) + 1) * -log p`.
pub fn grad_tldr(p: TokenProbability) -> f64 {
    let p = p.get();
    PI * (p * PI).sin() * p.ln() - cosw(p) / p
}

/// Batch loss under `scheme`.
///
/// Token-level schemes average the weighted token losses over every token
/// in the batch; example-level schemes average per-response losses over
/// responses.
pub fn weighted_batch_loss(batch: &[SequenceProbabilities], scheme: &WeightingScheme) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    scheme.validate()?;
    Ok(match *scheme {
        WeightingScheme::Fl { gamma } => batch.iter().map(|sp| fl_example(sp, gamma)).sum::<f64>() / batch.len() as f64,
        WeightingScheme::Ldr => batch.iter().map(ldr_example).sum::<f64>() / batch.len() as f64,
        _ => {
            let tokens: usize = batch.iter().map(SequenceProbabilities::len).sum();
            batch
                .iter()
                .flat_map(SequenceProbabilities::iter)
                .map(|p| scheme.token_loss(p))
                .sum::<f64>()
                / tokens as f64
        }
    })
}

/// Header of the exported loss and gradient curves.
pub const GRAD_CURVE_HEADER: &str = "p,ce,tfl,tldr,grad_ce,grad_tfl,grad_tldr";
/// Number of grid points: `p = 0.005, 0.010, ..., 0.995`.
pub const GRAD_CURVE_POINTS: usize = 199;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCurveRow {
    pub p: f64,
    pub ce: f64,
    pub tfl: f64,
    pub tldr: f64,
    pub grad_ce: f64,
    pub grad_tfl: f64,
    pub grad_tldr: f64,
}

impl GradCurveRow {
    pub fn at(p: f64, gamma: f64) -> Self {
        let tp = TokenProbability::new(p);
        Self {
            p,
            ce: ce(tp),
            tfl: tfl_token(tp, gamma),
            tldr: tldr_token(tp),
            grad_ce: grad_ce(tp),
            grad_tfl: grad_tfl(tp, gamma),
            grad_tldr: grad_tldr(tp),
        }
    }
}

/// Losses and gradients on the `0.005` grid over `(0, 1)`.
pub fn grad_curve(gamma: f64) -> Vec<GradCurveRow> {
    (1..=GRAD_CURVE_POINTS)
        .map(|k| GradCurveRow::at(k as f64 / 200.0, gamma))
        .collect()
}

pub fn grad_curve_csv(gamma: f64) -> String {
    let mut out = String::from(GRAD_CURVE_HEADER);
    out.push('\n');
    for r in grad_curve(gamma) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.p, r.ce, r.tfl, r.tldr, r.grad_ce, r.grad_tfl, r.grad_tldr
        ));
    }
    out
}
