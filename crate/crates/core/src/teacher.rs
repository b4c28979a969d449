//! Caption autoencoder teacher: a two-layer attention encoder over the
//! reference captions plus a decoder identical to the student's.
//!
//! Per word the Word LSTM reads the embedding, attends over the objects from
//! its hidden state, and the largest attention weight `g_t` gates the
//! embedding fed to the Caption LSTM. Final encoder states of all captions
//! are max-pooled into the decoder's initial state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{CorpusRecord, Vocabulary, EOS};
use crate::error::{contract, Error, Result};
use crate::nn::{AttentionHead, Bound, LstmCell, ParamSet, ParamSpec};
use crate::student::{
    argmax, Context, Decoder, DecoderFamily, ModelDims, State, StateTrace, TapeRollout, TokenSource,
};

/// Word LSTM, Caption LSTM and the word attention head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionEncoder {
    pub word_lstm: LstmCell,
    pub caption_lstm: LstmCell,
    pub attention: AttentionHead,
}

/// Final states of both encoder layers for one caption.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub word_h: Var,
    pub word_c: Var,
    pub caption_h: Var,
    pub caption_c: Var,
    /// `g_t` per word.
    pub gates: Vec<Var>,
}

impl CaptionEncoder {
    pub fn new(dims: ModelDims) -> Self {
        Self {
            word_lstm: LstmCell::new("enc.word_lstm", dims.embed_dim, dims.hidden_dim),
            caption_lstm: LstmCell::new("enc.caption_lstm", dims.embed_dim, dims.hidden_dim),
            attention: AttentionHead::new("enc.att", dims.feature_dim, dims.hidden_dim),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.word_lstm.specs();
        s.extend(self.caption_lstm.specs());
        s.extend(self.attention.specs());
        s
    }

    /// Encodes one caption given its word ids and the projected objects.
    pub fn encode(
        &self,
        tape: &mut Tape,
        p: &Bound,
        dec: &Decoder,
        projected: &[Var],
        ids: &[usize],
    ) -> Result<EncoderOutput> {
        if ids.is_empty() {
            return contract("cannot encode an empty caption");
        }
        let hd = self.word_lstm.hidden_dim;
        let zero = tape.constant_vec(&vec![0.0; hd]);
        let (mut h1, mut c1, mut h2, mut c2) = (zero, zero, zero, zero);
        let mut gates = Vec::with_capacity(ids.len());
        for &id in ids {
            let x = dec.embedding.lookup(tape, p, id)?;
            (h1, c1) = self.word_lstm.step(tape, p, x, h1, c1)?;
            let alpha = self.attention.weights(tape, h1, projected)?;
            let g = tape.max_all(alpha);
            let we = tape.mul(g, x)?;
            (h2, c2) = self.caption_lstm.step(tape, p, we, h2, c2)?;
            gates.push(g);
        }
        Ok(EncoderOutput {
            word_h: h1,
            word_c: c1,
            caption_h: h2,
            caption_c: c2,
            gates,
        })
    }
}

/// Elementwise max over a non-empty list of equally shaped vectors.
pub fn max_pool(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let (&first, rest) = xs
        .split_first()
        .ok_or_else(|| Error::Contract("pooling over zero captions".into()))?;
    rest.iter().try_fold(first, |acc, &x| tape.max_elementwise(acc, x))
}

/// Encoder word ids for a caption; an empty caption is read as `[EOS]`.
pub fn encoder_input(words: &[usize]) -> Vec<usize> {
    if words.is_empty() {
        vec![EOS]
    } else {
        words.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Teacher {
    pub decoder: Decoder,
    pub encoder: CaptionEncoder,
    /// Pool cell states as well as hidden states into the initial state.
    pub with_cell: bool,
}

impl Teacher {
    pub fn new(family: DecoderFamily, dims: ModelDims, with_cell: bool) -> Self {
        Self {
            decoder: Decoder::new(family, dims),
            encoder: CaptionEncoder::new(dims),
            with_cell,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.decoder.specs();
        s.extend(self.encoder.specs());
        s
    }

    pub fn init_params(&self, seed: u64) -> ParamSet {
        ParamSet::init(&self.specs(), seed)
    }

    /// Context for both the decoder and the encoder attention.
    pub fn context(&self, tape: &mut Tape, p: &Bound, features: &[Vec<f64>]) -> Result<(Context, Vec<Var>)> {
        let ctx = self.decoder.context(tape, p, features)?;
        let projected = self.encoder.attention.project(tape, p, &ctx.objects)?;
        Ok((ctx, projected))
    }

    /// Max-pools encoder finals into the decoder's initial state. FC uses the
    /// Caption LSTM; Up-Down takes layer 1 from the Word LSTM and layer 2 from
    /// the Caption LSTM. Cell states are zero unless `with_cell` is set.
    pub fn pool(&self, tape: &mut Tape, outs: &[EncoderOutput]) -> Result<State> {
        if outs.is_empty() {
            return contract("pooling over zero captions");
        }
        let pick = |f: fn(&EncoderOutput) -> Var| outs.iter().map(f).collect::<Vec<_>>();
        let sources: Vec<(Vec<Var>, Vec<Var>)> = match self.decoder.family {
            DecoderFamily::Fc => vec![(pick(|o| o.caption_h), pick(|o| o.caption_c))],
            DecoderFamily::UpDown => vec![
                (pick(|o| o.word_h), pick(|o| o.word_c)),
                (pick(|o| o.caption_h), pick(|o| o.caption_c)),
            ],
        };
        let hd = self.decoder.dims.hidden_dim;
        let mut h = Vec::new();
        let mut c = Vec::new();
        for (hs, cs) in sources {
            h.push(max_pool(tape, &hs)?);
            c.push(if self.with_cell {
                max_pool(tape, &cs)?
            } else {
                tape.constant_vec(&vec![0.0; hd])
            });
        }
        Ok(State { h, c })
    }

    /// Encodes every caption (word ids, no BOS/EOS) and pools.
    pub fn initial_state(
        &self,
        tape: &mut Tape,
        p: &Bound,
        projected: &[Var],
        captions: &[Vec<usize>],
    ) -> Result<State> {
        let outs = captions
            .iter()
            .map(|c| self.encoder.encode(tape, p, &self.decoder, projected, &encoder_input(c)))
            .collect::<Result<Vec<_>>>()?;
        self.pool(tape, &outs)
    }

    /// Teacher-forced decoding of `words` followed by EOS.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &Context,
        init: State,
        words: &[usize],
    ) -> Result<TapeRollout> {
        let mut emissions = words.to_vec();
        emissions.push(EOS);
        self.decoder
            .rollout(tape, p, ctx, init, TokenSource::Forced(&emissions), emissions.len())
    }

    /// State traces `s_0..s_T` of the frozen teacher for each target caption,
    /// with the encoder reading `sources`.
    pub fn traces(
        &self,
        params: &ParamSet,
        features: &[Vec<f64>],
        sources: &[Vec<usize>],
        targets: &[Vec<usize>],
    ) -> Result<Vec<StateTrace>> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let (ctx, projected) = self.context(&mut tape, &p, features)?;
        let init = self.initial_state(&mut tape, &p, &projected, sources)?;
        targets
            .iter()
            .map(|t| {
                // s_0..s_T only; the EOS step adds no state
                if t.is_empty() {
                    return Ok(StateTrace {
                        states: vec![init.values(&tape)],
                    });
                }
                let r = self.decoder.rollout(
                    &mut tape,
                    &p,
                    &ctx,
                    init.clone(),
                    TokenSource::Forced(t),
                    t.len(),
                )?;
                Ok(r.trace(&tape))
            })
            .collect()
    }

    /// Trace of the teacher reading and reconstructing a single caption.
    pub fn self_trace(&self, params: &ParamSet, features: &[Vec<f64>], words: &[usize]) -> Result<StateTrace> {
        let src = vec![words.to_vec()];
        Ok(self.traces(params, features, &src, &src)?.swap_remove(0))
    }

    /// Teacher-forced token accuracy over the records, every reference
    /// reconstructed from the pooled encoding of all references.
    pub fn accuracy(&self, params: &ParamSet, vocab: &Vocabulary, records: &[CorpusRecord]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for r in records {
            let mut tape = Tape::new();
            let p = params.bind_frozen(&mut tape);
            let caps = encode_refs(vocab, r);
            let (ctx, projected) = self.context(&mut tape, &p, &r.features)?;
            let init = self.initial_state(&mut tape, &p, &projected, &caps)?;
            for c in &caps {
                let roll = self.forward(&mut tape, &p, &ctx, init.clone(), c)?;
                let (h, n) = count_hits(&tape, &roll);
                hit += h;
                total += n;
            }
        }
        Ok(hit as f64 / total.max(1) as f64)
    }
}

/// Word ids of every reference of a record.
pub fn encode_refs(vocab: &Vocabulary, r: &CorpusRecord) -> Vec<Vec<usize>> {
    r.captions.iter().map(|c| vocab.encode_words(c)).collect()
}

/// Argmax hits and emission count of a teacher-forced rollout.
pub fn count_hits(tape: &Tape, roll: &TapeRollout) -> (usize, usize) {
    let gold = roll.emissions();
    let hits = roll
        .logits
        .iter()
        .zip(&gold)
        .filter(|(&l, &g)| argmax(tape.value(l)) == g)
        .count();
    (hits, gold.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Stop after the first epoch whose accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            grad_clip: 5.0,
            seed: 1,
            target_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Teacher-forced token accuracy over the training records after the
    /// epoch's updates.
    pub accuracy: f64,
}

/// Cross-entropy of one scene: mean over references of the summed token
/// negative log-likelihood, all references encoded and pooled.
pub fn scene_loss(
    teacher: &Teacher,
    tape: &mut Tape,
    p: &Bound,
    features: &[Vec<f64>],
    caps: &[Vec<usize>],
) -> Result<(Var, usize, usize)> {
    let (ctx, projected) = teacher.context(tape, p, features)?;
    let init = teacher.initial_state(tape, p, &projected, caps)?;
    let mut terms = Vec::new();
    let (mut hit, mut total) = (0, 0);
    for c in caps {
        let roll = teacher.forward(tape, p, &ctx, init.clone(), c)?;
        let (h, n) = count_hits(tape, &roll);
        hit += h;
        total += n;
        let lp = tape.concat(&roll.log_probs)?;
        terms.push(tape.sum(lp));
    }
    let all = tape.concat(&terms)?;
    let mean = tape.mean(all);
    Ok((tape.scale(mean, -1.0), hit, total))
}

/// SGD over the records, one update per scene, shuffled each epoch.
pub fn pretrain_teacher(
    teacher: &Teacher,
    params: &mut ParamSet,
    vocab: &Vocabulary,
    records: &[CorpusRecord],
    cfg: &TeacherTrainConfig,
    mut on_epoch: impl FnMut(&TeacherEpoch),
) -> Result<Vec<TeacherEpoch>> {
    if records.is_empty() {
        return contract("no training records");
    }
    params.check_against(&teacher.specs())?;
    let encoded: Vec<Vec<Vec<usize>>> = records.iter().map(|r| encode_refs(vocab, r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape);
            let (loss, _, _) = scene_loss(teacher, &mut tape, &p, &records[i].features, &encoded[i])?;
            let l = tape.scalar(loss);
            if !l.is_finite() {
                return Err(Error::Diverged(format!(
                    "teacher loss {l} at epoch {epoch}, scene {}",
                    records[i].scene_id
                )));
            }
            loss_sum += l;
            tape.backward(loss)?;
            let mut g = p.gradients(&tape);
            if !g.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite teacher gradient at epoch {epoch}, scene {}",
                    records[i].scene_id
                )));
            }
            g.clip_norm(cfg.grad_clip);
            params.sgd_step(&g, cfg.lr);
        }
        let e = TeacherEpoch {
            epoch,
            mean_loss: loss_sum / records.len() as f64,
            accuracy: teacher.accuracy(params, vocab, records)?,
        };
        on_epoch(&e);
        let done = cfg.target_accuracy.is_some_and(|t| e.accuracy >= t);
        history.push(e);
        if done {
            break;
        }
    }
    Ok(history)
}
