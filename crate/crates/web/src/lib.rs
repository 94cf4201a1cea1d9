//! WebAssembly bindings for the static demo page in `index.html`.

use replex::loss_weighting::{grad_curve_csv, GradCurveRow};
use replex::text_metrics::{l_dimen, u_dimen, wl2_of, DimenConfig, Wl2Config};
use wasm_bindgen::prelude::*;

fn check_gamma(gamma: f64) -> Result<(), String> {
    if gamma.is_finite() && gamma >= 0.0 {
        Ok(())
    } else {
        Err(format!("gamma must be a non-negative number, got {gamma}"))
    }
}

/// Loss and gradient curves over the probability grid, as CSV with a header.
#[wasm_bindgen]
pub fn loss_curves(gamma: f64) -> Result<String, String> {
    check_gamma(gamma)?;
    Ok(grad_curve_csv(gamma))
}

/// `[ce, tfl, tldr, grad_ce, grad_tfl, grad_tldr]` at one probability.
#[wasm_bindgen]
pub fn token_losses(p: f64, gamma: f64) -> Result<Vec<f64>, String> {
    check_gamma(gamma)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(format!("p must lie in (0, 1], got {p}"));
    }
    let r = GradCurveRow::at(p, gamma);
    Ok(vec![r.ce, r.tfl, r.tldr, r.grad_ce, r.grad_tfl, r.grad_tldr])
}

/// Repetition report for whitespace-tokenized utterances, one per line.
/// Blank lines are skipped. Each utterance's u-DIMEN follows the summary.
#[wasm_bindgen]
pub fn score_utterances(text: &str) -> Result<String, String> {
    let lines: Vec<Vec<&str>> = text
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err("enter at least one utterance".into());
    }
    let dimen = DimenConfig::default();
    let (wl2, hist) = wl2_of(&lines, &dimen, &Wl2Config::default());
    let mut out = format!("wl2={wl2:.4}\nl_dimen={:.4}\nhist={hist}\n", l_dimen(&lines, &dimen));
    for l in &lines {
        out.push_str(&format!("{:.3}  {}\n", u_dimen(l, &dimen), l.join(" ")));
    }
    Ok(out)
}
