use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AttentionVariant, ModelConfig};
use super::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::loss_weighting::{SequenceProbabilities, TokenProbability, WeightingScheme};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

const INIT_RANGE: f64 = 0.08;
const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone)]
struct LstmParams {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct ParamIds {
    enc_emb: ParamId,
    dec_emb: ParamId,
    encoder: Vec<LstmParams>,
    decoder: Vec<LstmParams>,
    attn: ParamId,
    /// `g'` readout (post / input-feeding) or input projection (pre-concat).
    merge: Option<(ParamId, ParamId)>,
    /// Context projection and gate (pre-highway).
    highway: Option<(ParamId, ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

/// LSTM encoder-decoder with one of four attention wirings.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

/// Parameters of one model loaded onto a tape.
#[derive(Debug, Clone)]
struct Bound {
    enc_emb: Var,
    dec_emb: Var,
    encoder: Vec<(Var, Var)>,
    decoder: Vec<(Var, Var)>,
    attn: Var,
    merge: Option<(Var, Var)>,
    highway: Option<(Var, Var, Var)>,
    out_w: Var,
    out_b: Var,
}

/// Encoder results for a batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[B, L, H]` top-layer outputs, one per source position.
    pub memory: Var,
    /// `B * L` flags, false at padding.
    pub mask: Vec<bool>,
    /// Final `(h, c)` per layer, each `[B, H]`.
    pub final_state: Vec<(Var, Var)>,
}

/// Decoder recurrent state between steps.
#[derive(Debug, Clone)]
pub struct DecoderStepState {
    /// `(h, c)` per decoder layer; the top `h` is the decoder output.
    pub rnn: Vec<(Var, Var)>,
    /// Context vector of the previous step (zero before the first step).
    pub prev_context: Var,
    /// Previous attentional vector; input-feeding only.
    pub prev_attentional: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Var,
    pub attention: Var,
    pub state: DecoderStepState,
}

/// Result of a teacher-forced forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    pub tape: Tape,
    pub loss: Var,
    pub value: f64,
    /// Target-token probabilities per response (EOS included).
    pub token_probs: Vec<Vec<f64>>,
}

/// Forward-pass randomness: dropout is only applied when present.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
    Tensor::new(shape, data).expect("sized from shape")
}

fn lstm_bias(hidden: usize) -> Tensor {
    let mut b = vec![0.0; 4 * hidden];
    b[hidden..2 * hidden].iter_mut().for_each(|v| *v = FORGET_BIAS);
    Tensor::new(vec![4 * hidden], b).expect("sized")
}

impl Seq2Seq {
    /// Weights uniform in (-0.08, 0.08), biases zero, forget-gate bias 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, e, h) = (config.vocab_size, config.embedding_size, config.hidden_size);
        let mut params = ParamStore::new();

        let enc_emb = params.add("enc.emb", uniform(&mut rng, vec![v, e]));
        let dec_emb = if config.tie_embeddings {
            enc_emb
        } else {
            params.add("dec.emb", uniform(&mut rng, vec![v, e]))
        };
        let mut lstm_stack = |prefix: &str, layers: usize, first_input: usize| -> Vec<LstmParams> {
            (0..layers)
                .map(|l| {
                    let input = if l == 0 { first_input } else { h };
                    LstmParams {
                        weight: params.add(format!("{prefix}.l{l}.w"), uniform(&mut rng, vec![input + h, 4 * h])),
                        bias: params.add(format!("{prefix}.l{l}.b"), lstm_bias(h)),
                    }
                })
                .collect()
        };
        let encoder = lstm_stack("enc", config.encoder_layers, e);
        let decoder = lstm_stack("dec", config.decoder_layers, config.decoder_input_size());
        let attn = params.add("attn.w", uniform(&mut rng, vec![h, h]));
        let (merge, highway) = match config.attention {
            AttentionVariant::Post | AttentionVariant::InputFeeding => (
                Some((
                    params.add("readout.w", uniform(&mut rng, vec![2 * h, h])),
                    params.add("readout.b", Tensor::zeros(vec![h])),
                )),
                None,
            ),
            AttentionVariant::PreConcat => (
                Some((
                    params.add("pre.w", uniform(&mut rng, vec![h + e, e])),
                    params.add("pre.b", Tensor::zeros(vec![e])),
                )),
                None,
            ),
            AttentionVariant::PreHighway => (
                None,
                Some((
                    params.add("highway.proj", uniform(&mut rng, vec![h, e])),
                    params.add("highway.gate.w", uniform(&mut rng, vec![2 * e, e])),
                    params.add("highway.gate.b", Tensor::zeros(vec![e])),
                )),
            ),
        };
        let out_w = params.add("out.w", uniform(&mut rng, vec![h, v]));
        let out_b = params.add("out.b", Tensor::zeros(vec![v]));
        let ids = ParamIds {
            enc_emb,
            dec_emb,
            encoder,
            decoder,
            attn,
            merge,
            highway,
            out_w,
            out_b,
        };
        Ok(Self { config, params, ids })
    }

    /// Rebuilds a model from a config and previously saved parameters.
    pub fn from_params(config: ModelConfig, saved: &ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if saved.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                saved.len()
            )));
        }
        for (name, tensor) in saved.iter() {
            let id = model
                .params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(tensor.data());
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the dropout rate used by later training passes.
    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let config = ModelConfig { dropout: rate, ..self.config.clone() };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn bind(&self, tape: &mut Tape) -> Bound {
        let p = &self.params;
        let ids = &self.ids;
        let enc_emb = tape.param(p, ids.enc_emb);
        let dec_emb = if self.config.tie_embeddings {
            enc_emb
        } else {
            tape.param(p, ids.dec_emb)
        };
        let mut layers = |stack: &[LstmParams]| -> Vec<(Var, Var)> {
            stack
                .iter()
                .map(|l| (tape.param(p, l.weight), tape.param(p, l.bias)))
                .collect()
        };
        let encoder = layers(&ids.encoder);
        let decoder = layers(&ids.decoder);
        Bound {
            enc_emb,
            dec_emb,
            encoder,
            decoder,
            attn: tape.param(p, ids.attn),
            merge: ids.merge.map(|(w, b)| (tape.param(p, w), tape.param(p, b))),
            highway: ids
                .highway
                .map(|(pr, w, b)| (tape.param(p, pr), tape.param(p, w), tape.param(p, b))),
            out_w: tape.param(p, ids.out_w),
            out_b: tape.param(p, ids.out_b),
        }
    }

    /// Binds parameters onto `tape` for a sequence of manual steps.
    pub fn session<'m>(&'m self, tape: &mut Tape) -> Session<'m> {
        Session {
            model: self,
            bound: self.bind(tape),
        }
    }

    /// Teacher-forced loss of a batch of `(message, response)` pairs; an
    /// end-of-sequence token is appended to every response.
    pub fn forward_loss(
        &self,
        pairs: &[(Vec<usize>, Vec<usize>)],
        scheme: &WeightingScheme,
        mut rng: DropoutRng<'_>,
    ) -> Result<ForwardOutput> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        scheme.validate()?;
        let mut tape = Tape::new();
        let session = self.session(&mut tape);
        let messages: Vec<&[usize]> = pairs.iter().map(|(m, _)| m.as_slice()).collect();
        let encoded = session.encode(&mut tape, &messages, rng.as_deref_mut())?;
        let mut state = session.initial_state(&mut tape, &encoded)?;

        let targets: Vec<Vec<usize>> = pairs
            .iter()
            .map(|(_, r)| r.iter().copied().chain(std::iter::once(EOS)).collect())
            .collect();
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        let batch = pairs.len();

        let mut step_losses = Vec::with_capacity(steps);
        let mut token_probs: Vec<Vec<f64>> = targets.iter().map(|t| Vec::with_capacity(t.len())).collect();
        let mut prev: Vec<usize> = vec![BOS; batch];
        for t in 0..steps {
            let out = session.decode_step(&mut tape, &state, &prev, &encoded, rng.as_deref_mut())?;
            let gold: Vec<usize> = targets.iter().map(|y| y.get(t).copied().unwrap_or(PAD)).collect();
            let (nll, p) = tape.log_softmax_nll(out.logits, &gold)?;
            for (b, y) in targets.iter().enumerate() {
                if t < y.len() {
                    token_probs[b].push(p[b]);
                }
            }
            step_losses.push((nll, p));
            state = out.state;
            prev = gold;
        }

        let seqs: Vec<SequenceProbabilities> = token_probs
            .iter()
            .map(|p| SequenceProbabilities::new(p.iter().copied()))
            .collect::<Result<_>>()?;
        let total_tokens: usize = targets.iter().map(Vec::len).sum();
        // coefficient on each token's weighted loss in the batch mean
        let coeff = |b: usize| -> f64 {
            if scheme.is_token_level() {
                1.0 / total_tokens as f64
            } else {
                scheme.example_weight(&seqs[b]) / (targets[b].len() * batch) as f64
            }
        };

        let mut loss: Option<Var> = None;
        for (t, (nll, _)) in step_losses.into_iter().enumerate() {
            let weighted = if scheme.is_token_level() {
                let s = *scheme;
                tape.map(nll, move |l| {
                    let p = TokenProbability::new((-l).exp());
                    (s.token_loss(p), -s.token_grad(p) * p.get())
                })
            } else {
                nll
            };
            let coeffs = (0..batch)
                .map(|b| if t < targets[b].len() { coeff(b) } else { 0.0 })
                .collect();
            let term = tape.weighted_sum(weighted, coeffs)?;
            loss = Some(match loss {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let loss = loss.expect("at least one decoding step");
        let value = tape.data(loss)[0];
        Ok(ForwardOutput {
            tape,
            loss,
            value,
            token_probs,
        })
    }

    /// Greedy decoding for a batch of messages. Each response stops at the
    /// end-of-sequence token (not included) or after `max_len` tokens.
    pub fn generate_batch(&self, messages: &[&[usize]], max_len: usize) -> Result<Vec<Vec<usize>>> {
        if messages.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let session = self.session(&mut tape);
        let encoded = session.encode(&mut tape, messages, None)?;
        let mut state = session.initial_state(&mut tape, &encoded)?;
        let batch = messages.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        let mut prev = vec![BOS; batch];
        for _ in 0..max_len {
            let step = session.decode_step(&mut tape, &state, &prev, &encoded, None)?;
            let v = self.config.vocab_size;
            let logits = tape.data(step.logits);
            for b in 0..batch {
                let row = &logits[b * v..(b + 1) * v];
                let best = argmax(row);
                prev[b] = best;
                if done[b] {
                    continue;
                }
                if best == EOS {
                    done[b] = true;
                } else {
                    out[b].push(best);
                }
            }
            state = step.state;
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }

    pub fn generate(&self, message: &[usize], max_len: usize) -> Result<Vec<usize>> {
        Ok(self.generate_batch(&[message], max_len)?.pop().unwrap_or_default())
    }
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A model's parameters bound to one tape.
pub struct Session<'m> {
    model: &'m Seq2Seq,
    bound: Bound,
}

impl Session<'_> {
    fn hidden(&self) -> usize {
        self.model.config.hidden_size
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        match rng {
            Some(r) => tape.dropout(x, self.model.config.dropout, true, r),
            None => Ok(x),
        }
    }

    fn lstm_cell(&self, tape: &mut Tape, layer: (Var, Var), x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hs = self.hidden();
        let xh = tape.concat(&[x, h])?;
        let gates = tape.matmul(xh, layer.0)?;
        let gates = tape.add_bias(gates, layer.1)?;
        let i = tape.slice_cols(gates, 0, hs)?;
        let f = tape.slice_cols(gates, hs, hs)?;
        let g = tape.slice_cols(gates, 2 * hs, hs)?;
        let o = tape.slice_cols(gates, 3 * hs, hs)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_new = tape.add(keep, write)?;
        let squashed = tape.tanh(c_new);
        let h_new = tape.mul(o, squashed)?;
        Ok((h_new, c_new))
    }

    /// Runs the encoder over right-padded messages. Padded steps leave the
    /// recurrent state unchanged, so the final state is the state at each
    /// message's last real token.
    pub fn encode(
        &self,
        tape: &mut Tape,
        messages: &[&[usize]],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded> {
        if messages.is_empty() {
            return Err(Error::InvalidArgument("no messages to encode".into()));
        }
        if messages.iter().any(|m| m.is_empty()) {
            return Err(Error::InvalidArgument("cannot encode an empty message".into()));
        }
        let batch = messages.len();
        let len = messages.iter().map(|m| m.len()).max().unwrap_or(0);
        let hs = self.hidden();

        let mut inputs = Vec::with_capacity(len);
        for t in 0..len {
            let ids: Vec<usize> = messages.iter().map(|m| m.get(t).copied().unwrap_or(PAD)).collect();
            let e = tape.embedding(self.bound.enc_emb, &ids)?;
            inputs.push(self.dropout(tape, e, rng.as_deref_mut())?);
        }
        let active: Vec<Vec<bool>> = (0..len)
            .map(|t| messages.iter().map(|m| t < m.len()).collect())
            .collect();

        let mut final_state = Vec::with_capacity(self.bound.encoder.len());
        for (li, &layer) in self.bound.encoder.iter().enumerate() {
            if li > 0 {
                for x in inputs.iter_mut() {
                    *x = self.dropout(tape, *x, rng.as_deref_mut())?;
                }
            }
            let mut h = tape.constant(Tensor::zeros(vec![batch, hs]));
            let mut c = tape.constant(Tensor::zeros(vec![batch, hs]));
            let mut outputs = Vec::with_capacity(len);
            for (t, &x) in inputs.iter().enumerate() {
                let (h_new, c_new) = self.lstm_cell(tape, layer, x, h, c)?;
                if active[t].iter().all(|&a| a) {
                    h = h_new;
                    c = c_new;
                } else {
                    h = tape.select_rows(h_new, h, &active[t])?;
                    c = tape.select_rows(c_new, c, &active[t])?;
                }
                outputs.push(h);
            }
            final_state.push((h, c));
            inputs = outputs;
        }
        let memory = tape.stack(&inputs)?;
        let mask = messages
            .iter()
            .flat_map(|m| (0..len).map(move |t| t < m.len()))
            .collect();
        Ok(Encoded {
            memory,
            mask,
            final_state,
        })
    }

    /// Decoder state before the first step: the encoder's final state
    /// (top layers aligned when depths differ), zero context and zero
    /// attentional vector.
    pub fn initial_state(&self, tape: &mut Tape, encoded: &Encoded) -> Result<DecoderStepState> {
        let batch = tape.shape(encoded.memory)[0];
        let hs = self.hidden();
        let dec_layers = self.bound.decoder.len();
        let enc_layers = encoded.final_state.len();
        let rnn = (0..dec_layers)
            .map(|l| {
                // align from the top: decoder layer l takes encoder layer l + (enc - dec)
                let src = (l + enc_layers).checked_sub(dec_layers);
                match src {
                    Some(s) if s < enc_layers => encoded.final_state[s],
                    _ => (
                        tape.constant(Tensor::zeros(vec![batch, hs])),
                        tape.constant(Tensor::zeros(vec![batch, hs])),
                    ),
                }
            })
            .collect();
        let prev_context = tape.constant(Tensor::zeros(vec![batch, hs]));
        let prev_attentional = (self.model.config.attention == AttentionVariant::InputFeeding)
            .then(|| tape.constant(Tensor::zeros(vec![batch, hs])));
        Ok(DecoderStepState {
            rnn,
            prev_context,
            prev_attentional,
        })
    }

    /// General attention: `score(s, h) = s^T W h`, softmax over source
    /// positions, context `sum_i a_i h_i`.
    pub fn attend(&self, tape: &mut Tape, query: Var, encoded: &Encoded) -> Result<(Var, Var)> {
        let q = tape.matmul(query, self.bound.attn)?;
        let scores = tape.attn_scores(q, encoded.memory)?;
        let a = tape.masked_softmax(scores, &encoded.mask)?;
        let c = tape.attn_context(a, encoded.memory)?;
        Ok((c, a))
    }

    /// `z * c' + (1 - z) * y` with `c' = P c` and `z = sigmoid(W [c'; y] + b)`.
    pub fn highway(&self, tape: &mut Tape, context: Var, input: Var) -> Result<Var> {
        let (proj, gate_w, gate_b) = self
            .bound
            .highway
            .ok_or_else(|| Error::InvalidArgument("highway needs the pre-highway variant".into()))?;
        let c = tape.matmul(context, proj)?;
        highway_gate(tape, c, input, gate_w, gate_b)
    }

    fn merge(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        let (w, bias) = self.bound.merge.expect("variant has a merge projection");
        let cat = tape.concat(&[a, b])?;
        let proj = tape.matmul(cat, w)?;
        let proj = tape.add_bias(proj, bias)?;
        Ok(tape.tanh(proj))
    }

    /// One decoder step for every row of the batch.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        state: &DecoderStepState,
        prev_tokens: &[usize],
        encoded: &Encoded,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StepOutput> {
        let variant = self.model.config.attention;
        if state.rnn.len() != self.bound.decoder.len() {
            return Err(Error::shape(
                "decode_step",
                format!("state has {} layers, decoder {}", state.rnn.len(), self.bound.decoder.len()),
            ));
        }
        if (variant == AttentionVariant::InputFeeding) != state.prev_attentional.is_some() {
            return Err(Error::InvalidArgument(format!(
                "decoder state does not match the {variant} variant"
            )));
        }
        let y = tape.embedding(self.bound.dec_emb, prev_tokens)?;
        let y = self.dropout(tape, y, rng.as_deref_mut())?;
        let input = match variant {
            AttentionVariant::Post => y,
            AttentionVariant::InputFeeding => {
                let prev = state.prev_attentional.expect("checked above");
                tape.concat(&[y, prev])?
            }
            AttentionVariant::PreConcat => self.merge(tape, state.prev_context, y)?,
            AttentionVariant::PreHighway => self.highway(tape, state.prev_context, y)?,
        };

        let mut rnn = Vec::with_capacity(state.rnn.len());
        let mut x = input;
        for (li, (&layer, &(h, c))) in self.bound.decoder.iter().zip(&state.rnn).enumerate() {
            if li > 0 {
                x = self.dropout(tape, x, rng.as_deref_mut())?;
            }
            let (h_new, c_new) = self.lstm_cell(tape, layer, x, h, c)?;
            rnn.push((h_new, c_new));
            x = h_new;
        }
        let s = x;
        let (context, attention) = self.attend(tape, s, encoded)?;
        let (readout, attentional) = match variant {
            AttentionVariant::Post | AttentionVariant::InputFeeding => {
                let st = self.merge(tape, context, s)?;
                (st, (variant == AttentionVariant::InputFeeding).then_some(st))
            }
            AttentionVariant::PreConcat | AttentionVariant::PreHighway => (s, None),
        };
        let readout = self.dropout(tape, readout, rng)?;
        let logits = tape.matmul(readout, self.bound.out_w)?;
        let logits = tape.add_bias(logits, self.bound.out_b)?;
        Ok(StepOutput {
            logits,
            attention,
            state: DecoderStepState {
                rnn,
                prev_context: context,
                prev_attentional: attentional,
            },
        })
    }
}

/// Highway combination of two same-width inputs.
pub fn highway_gate(tape: &mut Tape, c: Var, y: Var, gate_w: Var, gate_b: Var) -> Result<Var> {
    let cat = tape.concat(&[c, y])?;
    let z = tape.matmul(cat, gate_w)?;
    let z = tape.add_bias(z, gate_b)?;
    let z = tape.sigmoid(z);
    let carry = tape.mul(z, c)?;
    let one_minus = tape.one_minus(z);
    let pass = tape.mul(one_minus, y)?;
    tape.add(carry, pass)
}
