use std::collections::HashMap;

use replex::loss_weighting::WeightingScheme;
use replex::seq2seq::{AttentionVariant, ModelConfig, Seq2Seq};
use replex::training::{
    build_pairs, generate_synthetic_corpus, prepare_datasets, Corpus, PairConfig, Profile, RunConfig, Vocabulary,
};

#[test]
fn desk_corpus_frequencies() {
    let cfg = RunConfig::profile(Profile::Desk);
    let spec = &cfg.synthetic;
    let corpus = generate_synthetic_corpus(spec).unwrap();
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for turn in corpus.dialogues().iter().flatten() {
        for w in turn.split_whitespace() {
            *counts.entry(w.to_string()).or_default() += 1;
            total += 1;
        }
    }
    let share = |w: &str| counts.get(w).copied().unwrap_or(0) as f64 / total as f64;
    for w in spec.hard_words() {
        assert!(share(&w) < 0.01, "hard {w}: {}", share(&w));
    }
    for w in spec.fillers() {
        assert!(share(&w) > 0.05, "filler {w}: {}", share(&w));
    }
    assert_eq!(counts.len(), spec.vocab_size);
}

#[test]
fn hard_tokens_follow_the_previous_turn() {
    let cfg = RunConfig::profile(Profile::Desk);
    let spec = &cfg.synthetic;
    let corpus = generate_synthetic_corpus(spec).unwrap();
    let hard = spec.hard_words();
    let index: HashMap<&str, usize> = hard.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let next = spec.successor_map();
    for d in corpus.dialogues().iter().take(200) {
        let keys = |t: &str| -> Vec<usize> { t.split_whitespace().filter_map(|w| index.get(w).copied()).collect() };
        for pair in d.windows(2) {
            let expected: Vec<usize> = keys(&pair[0]).into_iter().map(|k| next[k]).collect();
            assert_eq!(keys(&pair[1]), expected);
        }
    }
}

#[test]
fn desk_datasets_fit_the_model_profile() {
    let cfg = RunConfig::profile(Profile::Desk);
    let data = prepare_datasets(&cfg).unwrap();
    assert_eq!(data.train.len(), 3000);
    assert_eq!(data.valid.len(), 300);
    assert!(data.vocab.len() <= cfg.model.vocab_size);
    assert_eq!(cfg.model.hidden_size, 64);
    assert_eq!(cfg.model.embedding_size, 32);
    assert_eq!(cfg.train.batch_size, 32);
    for (_, response) in &data.train {
        assert!(!response.contains(&replex::seq2seq::UNK));
    }
}

#[test]
fn pairs_from_a_written_corpus() {
    let text = "hi there\nhello you\nhow are things\nfine\n\nlonely\n\na\nb\n";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    std::fs::write(&path, text).unwrap();
    let corpus = Corpus::load(&path).unwrap();
    assert_eq!(corpus.len(), 2);
    let turns: Vec<Vec<String>> = corpus.tokenized().into_iter().flatten().collect();
    let vocab = Vocabulary::build(&turns, 100).unwrap();
    let pairs = build_pairs(&corpus, &vocab, &PairConfig::default()).unwrap();
    assert_eq!(pairs.len(), 4);
    let sep = vocab.id("<sep>");
    assert_eq!(pairs[2].0.iter().filter(|&&t| t == sep).count(), 2);

    let tsv = dir.path().join("p.tsv");
    std::fs::write(&tsv, "how are you\tfine thanks\nok\tbye\n").unwrap();
    assert_eq!(Corpus::load(&tsv).unwrap().len(), 2);
}

#[test]
fn schemes_share_the_forward_pass() {
    let cfg = RunConfig::profile(Profile::Desk);
    let data = prepare_datasets(&cfg).unwrap();
    let model = Seq2Seq::new(
        ModelConfig {
            vocab_size: data.vocab.len(),
            ..ModelConfig::desk(AttentionVariant::PreConcat)
        },
        1,
    )
    .unwrap();
    let batch = &data.train[..8];
    let ce = model.forward_loss(batch, &WeightingScheme::Ce, None).unwrap();
    let tldr = model.forward_loss(batch, &WeightingScheme::Tldr, None).unwrap();
    assert_eq!(ce.token_probs, tldr.token_probs);
    assert_ne!(ce.value, tldr.value);
}
