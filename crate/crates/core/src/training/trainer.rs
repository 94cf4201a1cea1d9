use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::corpus::Pair;
use super::optim::{clip_grad_norm, Adam};
use super::text::Vocabulary;
use crate::error::{Error, Result};
use crate::seq2seq::{Checkpoint, Seq2Seq};
use crate::text_metrics::{bleu4, l_dimen, u_dimen, wl2_of, DimenConfig, DimenHistogram, Wl2Config};

/// Header of the per-validation metric log.
pub const METRIC_LOG_HEADER: &str = "epoch,step,wl2,l_dimen,bleu4,mean_u_dimen";

/// Messages decoded together during evaluation.
const GENERATION_BATCH: usize = 64;
/// Batches whose messages are length-sorted together within an epoch.
const BUCKET_BATCHES: usize = 16;
const DROPOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricConfig {
    pub dimen: DimenConfig,
    pub wl2: Wl2Config,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub wl2: f64,
    pub l_dimen: f64,
    pub bleu4: f64,
    pub mean_u_dimen: f64,
    pub hist: DimenHistogram,
}

impl MetricReport {
    pub const KEYS: [&'static str; 5] = ["wl2", "l_dimen", "bleu4", "mean_u_dimen", "hist"];

    /// Scores generated responses against their references.
    pub fn score(hypotheses: &[Vec<usize>], references: &[Vec<usize>], cfg: &MetricConfig) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(Error::InvalidArgument("no responses to score".into()));
        }
        let (wl2, hist) = wl2_of(hypotheses, &cfg.dimen, &cfg.wl2);
        let mean_u_dimen =
            hypotheses.iter().map(|h| u_dimen(h, &cfg.dimen)).sum::<f64>() / hypotheses.len() as f64;
        Ok(Self {
            wl2,
            l_dimen: l_dimen(hypotheses, &cfg.dimen),
            bleu4: bleu4(hypotheses, references)?,
            mean_u_dimen,
            hist,
        })
    }

    pub fn entries(&self) -> [(&'static str, String); 5] {
        [
            ("wl2", self.wl2.to_string()),
            ("l_dimen", self.l_dimen.to_string()),
            ("bleu4", self.bleu4.to_string()),
            ("mean_u_dimen", self.mean_u_dimen.to_string()),
            ("hist", self.hist.to_string()),
        ]
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Greedy responses for every message, in input order.
pub fn generate_responses(model: &Seq2Seq, pairs: &[Pair], max_len: usize) -> Result<Vec<Vec<usize>>> {
    let chunks: Vec<Result<Vec<Vec<usize>>>> = pairs
        .par_chunks(GENERATION_BATCH)
        .map(|chunk| {
            let messages: Vec<&[usize]> = chunk.iter().map(|(m, _)| m.as_slice()).collect();
            model.generate_batch(&messages, max_len)
        })
        .collect();
    let mut out = Vec::with_capacity(pairs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn evaluate(model: &Seq2Seq, pairs: &[Pair], max_len: usize, cfg: &MetricConfig) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let hyps = generate_responses(model, pairs, max_len)?;
    let refs: Vec<Vec<usize>> = pairs.iter().map(|(_, r)| r.clone()).collect();
    MetricReport::score(&hyps, &refs, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    pub epoch: f64,
    pub step: u64,
    pub report: MetricReport,
}

impl ValidationRecord {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.step, r.wl2, r.l_dimen, r.bleu4, r.mean_u_dimen
        )
    }
}

pub fn metric_log_csv(log: &[ValidationRecord]) -> String {
    let mut out = String::from(METRIC_LOG_HEADER);
    out.push('\n');
    for rec in log {
        out.push_str(&rec.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_index: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<ValidationRecord>,
    pub steps: Vec<StepStats>,
}

impl TrainOutcome {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("training validates at least once")
    }
}

/// Index of the checkpoint with the lowest WL2 among those whose l-DIMEN is
/// at least half the final checkpoint's; the final checkpoint when none
/// qualifies. Earlier checkpoints win ties.
pub fn select_checkpoint(log: &[ValidationRecord]) -> Option<usize> {
    let last = log.len().checked_sub(1)?;
    let floor = 0.5 * log[last].report.l_dimen;
    let mut best: Option<usize> = None;
    for (i, rec) in log.iter().enumerate() {
        // written negated so that a NaN l-DIMEN is skipped too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(rec.report.l_dimen >= floor) || rec.report.wl2.is_nan() {
            continue;
        }
        if best.is_none_or(|b| rec.report.wl2 < log[b].report.wl2) {
            best = Some(i);
        }
    }
    Some(best.unwrap_or(last))
}

/// Global steps at which validation runs.
fn validation_steps(total_steps: u64, steps_per_epoch: u64, cfg: &TrainConfig) -> Vec<u64> {
    let mut steps = Vec::new();
    let mut k = 1u64;
    loop {
        let at = k as f64 * cfg.validation_interval;
        if at > cfg.epochs + 1e-9 {
            break;
        }
        let s = ((at * steps_per_epoch as f64).round() as u64).clamp(1, total_steps);
        if steps.last() != Some(&s) {
            steps.push(s);
        }
        k += 1;
    }
    if steps.last() != Some(&total_steps) {
        steps.push(total_steps);
    }
    steps
}

/// Shuffled batches for one epoch; messages of similar length are grouped
/// to limit padding.
fn epoch_batches(n: usize, batch: usize, pairs: &[Pair], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for bucket in order.chunks_mut(batch * BUCKET_BATCHES) {
        bucket.sort_by_key(|&i| pairs[i].0.len());
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Trains with Adam, validating and checkpointing on schedule.
///
/// When `out_dir` is given, each checkpoint is written as
/// `checkpoint-<step>.txt` and the metric log as `metrics.csv`, refreshed
/// after every validation.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut Seq2Seq,
    vocab: &Vocabulary,
    train_pairs: &[Pair],
    valid_pairs: &[Pair],
    cfg: &TrainConfig,
    metrics: &MetricConfig,
    out_dir: Option<&Path>,
    mut on_validation: impl FnMut(&ValidationRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if valid_pairs.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    if vocab.len() != model.config().vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    model.set_dropout(cfg.dropout)?;

    let n = train_pairs.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = ((cfg.epochs * steps_per_epoch as f64).ceil() as u64).max(1);
    let checks = validation_steps(total_steps, steps_per_epoch, cfg);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let mut adam = Adam::new(model.params(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);

    let mut steps = Vec::with_capacity(total_steps as usize);
    let mut log = Vec::with_capacity(checks.len());
    let mut checkpoints = Vec::with_capacity(checks.len());
    let mut batches = Vec::new().into_iter();
    let mut next_check = 0;
    let mut step = 0u64;
    while step < total_steps {
        let batch_idx = match batches.next() {
            Some(b) => b,
            None => {
                batches = epoch_batches(n, cfg.batch_size, train_pairs, &mut shuffle_rng).into_iter();
                continue;
            }
        };
        let batch: Vec<Pair> = batch_idx.iter().map(|&i| train_pairs[i].clone()).collect();
        let mut out = model.forward_loss(&batch, &cfg.scheme, Some(&mut dropout_rng))?;
        if !out.value.is_finite() {
            return Err(Error::TrainingAborted(format!(
                "non-finite loss {} at step {} (epoch {:.3})",
                out.value,
                step + 1,
                (step + 1) as f64 / steps_per_epoch as f64
            )));
        }
        out.tape.backward(out.loss)?;
        let params = model.params_mut();
        params.zero_grad();
        out.tape.accumulate_param_grads(params);
        let (grad_norm, clipped_norm) = clip_grad_norm(params, cfg.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::TrainingAborted(format!("non-finite gradient norm at step {}", step + 1)));
        }
        adam.update(params);
        step += 1;
        steps.push(StepStats {
            loss: out.value,
            grad_norm,
            clipped_norm,
        });

        if checks.get(next_check) == Some(&step) {
            next_check += 1;
            let report = evaluate(model, valid_pairs, cfg.pairs.response_truncation, metrics)?;
            let epoch = step as f64 / steps_per_epoch as f64;
            let mut params = model.params().clone();
            params.clear_grads();
            let ckpt = Checkpoint {
                config: model.config().clone(),
                seed: cfg.seed,
                epoch,
                step,
                valid_wl2: report.wl2,
                valid_l_dimen: report.l_dimen,
                vocab: vocab.tokens().to_vec(),
                params,
            };
            let record = ValidationRecord { epoch, step, report };
            if let Some(dir) = out_dir {
                ckpt.save(&dir.join(format!("checkpoint-{step}.txt")))?;
            }
            log.push(record);
            checkpoints.push(ckpt);
            if let Some(dir) = out_dir {
                let path = dir.join("metrics.csv");
                std::fs::write(&path, metric_log_csv(&log)).map_err(|e| Error::io(path, e))?;
            }
            on_validation(log.last().expect("just pushed"));
        }
    }

    let best_index = select_checkpoint(&log).expect("at least one validation");
    Ok(TrainOutcome {
        best: checkpoints[best_index].clone(),
        best_index,
        checkpoints,
        log,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss_weighting::WeightingScheme;
    use crate::seq2seq::{AttentionVariant, ModelConfig, NUM_RESERVED};

    fn record(wl2: f64, l: f64) -> ValidationRecord {
        ValidationRecord {
            epoch: 0.0,
            step: 0,
            report: MetricReport {
                wl2,
                l_dimen: l,
                bleu4: 0.0,
                mean_u_dimen: 0.0,
                hist: DimenHistogram { counts: vec![] },
            },
        }
    }

    #[test]
    fn checkpoint_guard() {
        assert_eq!(select_checkpoint(&[]), None);
        // the early low-diversity checkpoint is excluded by the guard
        let log = [record(1.0, 0.1), record(3.0, 0.5), record(2.0, 0.6)];
        assert_eq!(select_checkpoint(&log), Some(2));
        let log = [record(1.0, 0.4), record(3.0, 0.5), record(2.0, 0.6)];
        assert_eq!(select_checkpoint(&log), Some(0));
        let log = [record(2.0, 0.4), record(2.0, 0.5)];
        assert_eq!(select_checkpoint(&log), Some(0));
        let log = [record(1.0, 0.4), record(f64::NAN, f64::NAN)];
        assert_eq!(select_checkpoint(&log), Some(1));
    }

    #[test]
    fn validation_schedule() {
        let cfg = |epochs, interval| TrainConfig {
            epochs,
            validation_interval: interval,
            ..TrainConfig::default()
        };
        assert_eq!(validation_steps(10, 10, &cfg(1.0, 0.5)), vec![5, 10]);
        assert_eq!(validation_steps(25, 10, &cfg(2.5, 1.0)), vec![10, 20, 25]);
        assert_eq!(validation_steps(3, 10, &cfg(0.3, 0.5)), vec![3]);
        assert_eq!(validation_steps(7, 7, &cfg(1.0, 0.1)).len(), 7);
    }

    #[test]
    fn report_keys_and_echo() {
        let refs = vec![vec![5, 6, 7, 8, 9], vec![9, 8, 7, 6, 5, 4]];
        let r = MetricReport::score(&refs, &refs, &MetricConfig::default()).unwrap();
        assert_eq!(r.entries().map(|(k, _)| k), MetricReport::KEYS);
        assert!((r.bleu4 - 1.0).abs() < 1e-12);
        assert!(r.to_string().starts_with("wl2="));
        assert!(MetricReport::score(&[], &[], &MetricConfig::default()).is_err());
    }

    #[test]
    fn identical_single_token_responses() {
        let hyps = vec![vec![7]; 50];
        let refs = vec![vec![7, 8]; 50];
        let r = MetricReport::score(&hyps, &refs, &MetricConfig::default()).unwrap();
        assert_eq!(r.hist.counts[9], 50);
        // Unigram diversity sits at its floor; no longer n-grams exist, so
        // those orders score 1.
        assert!((r.l_dimen - (0.25 / 49.0 + 0.75)).abs() < 1e-12, "{}", r.l_dimen);
        let unigram = MetricConfig {
            dimen: DimenConfig::new(vec![1.0]).unwrap(),
            ..MetricConfig::default()
        };
        let r = MetricReport::score(&hyps, &refs, &unigram).unwrap();
        assert!((r.l_dimen - 1.0 / 49.0).abs() < 1e-12, "{}", r.l_dimen);
    }

    fn tiny_setup(pairs: usize) -> (Seq2Seq, Vocabulary, Vec<Pair>) {
        let tokens: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
        let vocab = Vocabulary::build(&[tokens], 100).unwrap();
        let v = vocab.len();
        let data: Vec<Pair> = (0..pairs)
            .map(|i| {
                let a = NUM_RESERVED + i % 8;
                let b = NUM_RESERVED + (i * 3 + 1) % 8;
                (vec![a, b], vec![b, a, b])
            })
            .collect();
        let cfg = ModelConfig {
            attention: AttentionVariant::PreHighway,
            encoder_layers: 1,
            decoder_layers: 1,
            hidden_size: 16,
            embedding_size: 8,
            vocab_size: v,
            dropout: 0.0,
            tie_embeddings: false,
        };
        (Seq2Seq::new(cfg, 3).unwrap(), vocab, data)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 1.0,
            validation_interval: 0.5,
            dropout: 0.0,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_two_validations_and_clipping() {
        let (mut model, vocab, data) = tiny_setup(16);
        let mut seen = 0;
        let out = train(&mut model, &vocab, &data, &data[..4], &TrainConfig { clip_norm: 0.01, ..tiny_cfg() }, &MetricConfig::default(), None, |_| seen += 1)
            .unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(seen, 2);
        assert_eq!(out.checkpoints.len(), 2);
        assert_eq!(out.steps.len(), 4);
        assert!(out.steps.iter().all(|s| s.clipped_norm <= 0.01 + 1e-9));
        assert!(out.steps.iter().any(|s| s.grad_norm > 0.01));
        assert_eq!(out.log[1].epoch, 1.0);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = |scheme| {
            let (mut model, vocab, data) = tiny_setup(16);
            let cfg = TrainConfig { scheme, dropout: 0.2, ..tiny_cfg() };
            train(&mut model, &vocab, &data, &data[..4], &cfg, &MetricConfig::default(), None, |_| ()).unwrap()
        };
        let a = run(WeightingScheme::Tldr);
        let b = run(WeightingScheme::Tldr);
        let bits = |o: &TrainOutcome| o.steps.iter().map(|s| s.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(metric_log_csv(&a.log), metric_log_csv(&b.log));
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn rejects_empty_splits_and_vocab_mismatch() {
        let (mut model, vocab, data) = tiny_setup(8);
        let m = MetricConfig::default();
        assert!(train(&mut model, &vocab, &[], &data, &tiny_cfg(), &m, None, |_| ()).is_err());
        assert!(train(&mut model, &vocab, &data, &[], &tiny_cfg(), &m, None, |_| ()).is_err());
        let small = Vocabulary::build(&[vec!["x".to_string()]], 10).unwrap();
        assert!(train(&mut model, &small, &data, &data, &tiny_cfg(), &m, None, |_| ()).is_err());
    }

    #[test]
    fn diverging_run_aborts() {
        let (mut model, vocab, data) = tiny_setup(8);
        let id = model.params().find("out.b").unwrap();
        model.params_mut().get_mut(id).data_mut()[NUM_RESERVED] = f64::NAN;
        let err = train(&mut model, &vocab, &data, &data, &tiny_cfg(), &MetricConfig::default(), None, |_| ()).unwrap_err();
        assert!(matches!(err, Error::TrainingAborted(_)), "{err}");
    }

    #[test]
    fn overfits_eight_pairs() {
        let (mut model, vocab, data) = tiny_setup(8);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 2000.0,
            validation_interval: 1.0,
            ..tiny_cfg()
        };
        // train in chunks so the loss can be checked before the budget ends
        let mut last = f64::INFINITY;
        for _ in 0..20 {
            let out = train(
                &mut model,
                &vocab,
                &data,
                &data,
                &TrainConfig { epochs: 100.0, validation_interval: 1.0, ..cfg.clone() },
                &MetricConfig::default(),
                None,
                |_| (),
            );
            last = out.unwrap().steps.last().unwrap().loss;
            if last < 0.05 {
                break;
            }
        }
        assert!(last < 0.05, "{last}");
        for (m, r) in &data {
            assert_eq!(&model.generate(m, 10).unwrap(), r);
        }
    }

    #[test]
    fn writes_checkpoints_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let (mut model, vocab, data) = tiny_setup(16);
        let out = train(&mut model, &vocab, &data, &data[..4], &tiny_cfg(), &MetricConfig::default(), Some(dir.path()), |_| ())
            .unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv, metric_log_csv(&out.log));
        assert_eq!(csv.lines().next(), Some(METRIC_LOG_HEADER));
        let saved = Checkpoint::load(&dir.path().join("checkpoint-4.txt")).unwrap();
        assert_eq!(&saved, out.last());
        let restored = Seq2Seq::from_params(saved.config.clone(), &saved.params).unwrap();
        let report = evaluate(&restored, &data[..4], 32, &MetricConfig::default()).unwrap();
        assert_eq!(report.wl2.to_bits(), saved.valid_wl2.to_bits());
    }
}
