use proptest::prelude::*;

use replex::loss_weighting::{
    ce, cosw, grad_ce, grad_tldr, tfl_token, tldr_token, weighted_batch_loss, SequenceProbabilities,
    TokenProbability, WeightingScheme,
};
use replex::text_metrics::{
    distinct, histogram, l_dimen, u_dimen, wl2, wl2_of, DimenConfig, DimenHistogram, Wl2Config,
};
use replex::training::{tokenize, Vocabulary};

fn tp(p: f64) -> TokenProbability {
    TokenProbability::new(p)
}

fn utterance() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 0..16)
}

proptest! {
    #[test]
    fn distinct_and_dimen_stay_in_unit_interval(seq in utterance(), k in 1usize..6) {
        let d = distinct(&seq, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        let u = u_dimen(&seq, &DimenConfig::default());
        prop_assert!((0.0..=1.0 + 1e-12).contains(&u));
    }

    #[test]
    fn list_metrics_ignore_order(
        list in prop::collection::vec(utterance(), 1..8),
        shift in 0usize..8,
    ) {
        let cfg = DimenConfig::default();
        let w = Wl2Config::default();
        let mut rotated = list.clone();
        rotated.rotate_left(shift % list.len());
        rotated.reverse();
        prop_assert_eq!(l_dimen(&list, &cfg), l_dimen(&rotated, &cfg));
        let (a, ha) = wl2_of(&list, &cfg, &w);
        let (b, hb) = wl2_of(&rotated, &cfg, &w);
        prop_assert_eq!(a, b);
        prop_assert_eq!(ha, hb);
    }

    #[test]
    fn single_utterance_list_is_its_own_dimen(seq in utterance()) {
        let cfg = DimenConfig::default();
        prop_assert_eq!(l_dimen(std::slice::from_ref(&seq), &cfg), u_dimen(&seq, &cfg));
    }

    #[test]
    fn histogram_counts_every_score(scores in prop::collection::vec(0.0f64..=1.0, 0..50)) {
        let h = histogram(&scores, &Wl2Config::default()).unwrap();
        prop_assert_eq!(h.total(), scores.len() as u64);
    }

    #[test]
    fn wl2_never_drops_when_a_count_grows(
        counts in prop::collection::vec(0u64..100, 10),
        bin in 0usize..10,
        extra in 1u64..20,
    ) {
        let cfg = Wl2Config::default();
        let before = wl2(&DimenHistogram { counts: counts.clone() }, &cfg).unwrap();
        let mut grown = counts;
        grown[bin] += extra;
        let after = wl2(&DimenHistogram { counts: grown }, &cfg).unwrap();
        prop_assert!(after >= before);
    }

    #[test]
    fn tldr_up_weights_hard_and_down_weights_easy(p in 0.001f64..0.999) {
        let (c, t) = (ce(tp(p)), tldr_token(tp(p)));
        if p < 0.5 {
            prop_assert!(t > c);
        } else if p > 0.5 {
            prop_assert!(t < c);
        }
        prop_assert!((0.0..=2.0).contains(&cosw(p)));
    }

    #[test]
    fn focal_weight_never_exceeds_one(p in 0.001f64..0.999, gamma in 0.0f64..5.0) {
        prop_assert!(tfl_token(tp(p), gamma) <= ce(tp(p)) * (1.0 + 1e-12));
    }

    #[test]
    fn uniform_scales_ce(
        batch in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 1..6), 1..5),
        w in 0.1f64..5.0,
    ) {
        let seqs: Vec<SequenceProbabilities> = batch
            .iter()
            .map(|s| SequenceProbabilities::new(s.iter().copied()).unwrap())
            .collect();
        let base = weighted_batch_loss(&seqs, &WeightingScheme::Ce).unwrap();
        let up = weighted_batch_loss(&seqs, &WeightingScheme::Uniform { w }).unwrap();
        prop_assert!((up - w * base).abs() <= 1e-12 * up.abs().max(1.0));
    }

    #[test]
    fn tokenize_is_idempotent_on_its_output(text in "[a-zA-Z ,.!?'\"]{0,40}") {
        let once = tokenize(&text);
        let again = tokenize(&once.join(" "));
        prop_assert_eq!(once, again);
    }

    #[test]
    fn vocabulary_rebuild_is_stable(
        words in prop::collection::vec(prop::collection::vec("[a-e]{1,3}", 0..8), 0..8),
        cap in 6usize..40,
    ) {
        let a = Vocabulary::build(&words, cap).unwrap();
        let b = Vocabulary::build(&words, cap).unwrap();
        prop_assert_eq!(a.tokens(), b.tokens());
        prop_assert!(a.len() <= cap);
    }
}

#[test]
fn repeated_token_diversity_shrinks_with_length() {
    let mut prev = f64::INFINITY;
    for len in 2..40 {
        let seq = vec![7u8; len];
        let d = distinct(&seq, 1).unwrap();
        assert_eq!(d, 1.0 / (len - 1).max(1) as f64);
        if len > 2 {
            assert!(d < prev, "len {len}");
        }
        prev = d;
    }
}

// The exact gradients cross near p = 0.708, so the suppression side is
// checked from 0.71 on.
#[test]
fn tldr_gradient_amplifies_hard_and_suppresses_easy_tokens() {
    for k in 1..=199 {
        let p = k as f64 / 200.0;
        let (t, c) = (grad_tldr(tp(p)).abs(), grad_ce(tp(p)).abs());
        if p <= 0.3 {
            assert!(t > c, "p={p}");
        }
        if p >= 0.71 {
            assert!(t < c, "p={p}");
        }
    }
}
