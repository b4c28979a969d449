//! Caption decoders (FC and Up-Down), the state transformation network and
//! decoding: greedy, sampling and beam search.
//!
//! The same [`Decoder`] is used by the teacher and the student, so their
//! parameter names and shapes are identical and the student can be
//! initialized by copying the teacher's `emb.*` and `dec.*` tensors.
//!
//! Step convention: the state `s_0` is the initial state. Step `τ` consumes
//! `x_τ` (BOS for `τ = 0`, otherwise the previous word), produces `s_{τ+1}`
//! and the logits of emission `τ`. A caption with `T` words has the trace
//! `s_0..s_T` and `T + 1` emissions when it ends with EOS.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{BOS, EOS};
use crate::error::{contract, dim_err, Result};
use crate::nn::{AttentionHead, Bound, Embedding, Linear, LstmCell, ParamSet, ParamSpec};

/// Longest generated caption, in emitted tokens.
pub const DEFAULT_T_MAX: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderFamily {
    Fc,
    UpDown,
}

impl DecoderFamily {
    pub fn name(self) -> &'static str {
        match self {
            DecoderFamily::Fc => "fc",
            DecoderFamily::UpDown => "updown",
        }
    }

    pub fn n_layers(self) -> usize {
        match self {
            DecoderFamily::Fc => 1,
            DecoderFamily::UpDown => 2,
        }
    }
}

impl std::str::FromStr for DecoderFamily {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" => Ok(DecoderFamily::Fc),
            "updown" => Ok(DecoderFamily::UpDown),
            other => contract(format!("unknown decoder family {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
}

/// Recurrent state of every decoder layer, bottom first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl State {
    /// Zero state for `layers` layers of width `hidden`, as constants.
    pub fn zeros(tape: &mut Tape, layers: usize, hidden: usize) -> Self {
        let h = (0..layers).map(|_| tape.constant_vec(&vec![0.0; hidden])).collect();
        let c = (0..layers).map(|_| tape.constant_vec(&vec![0.0; hidden])).collect();
        Self { h, c }
    }

    /// Records plain values as constants.
    pub fn from_values(tape: &mut Tape, s: &StateValues) -> Self {
        Self {
            h: s.h.iter().map(|v| tape.constant_vec(v)).collect(),
            c: s.c.iter().map(|v| tape.constant_vec(v)).collect(),
        }
    }

    pub fn values(&self, tape: &Tape) -> StateValues {
        StateValues {
            h: self.h.iter().map(|&v| tape.value(v).to_vec()).collect(),
            c: self.c.iter().map(|&v| tape.value(v).to_vec()).collect(),
        }
    }
}

/// Plain-value copy of a [`State`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateValues {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

/// Decoder states `s_0..s_T` as plain values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateTrace {
    pub states: Vec<StateValues>,
}

impl StateTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Per-scene inputs recorded on a tape: `v̄` and, for Up-Down, the object
/// matrix and the projected objects used by the attention head.
#[derive(Debug, Clone)]
pub struct Context {
    pub mean: Var,
    pub objects: Vec<Var>,
    objects_t: Option<Var>,
    projected: Vec<Var>,
}

impl Context {
    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }
}

/// Caption decoder shared by teacher and student.
///
/// * FC: one LSTM, input `[emb(x); v̄]`.
/// * Up-Down: attention LSTM with input `[h2; v̄; emb(x)]`, dot-product
///   attention over the objects from `h1`, language LSTM with input
///   `[Σ α_j v_j; h1]`.
///
/// Logits come from a linear layer on the top layer's `h`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoder {
    pub family: DecoderFamily,
    pub dims: ModelDims,
    pub embedding: Embedding,
    lstm: Vec<LstmCell>,
    attention: Option<AttentionHead>,
    out: Linear,
}

impl Decoder {
    pub fn new(family: DecoderFamily, dims: ModelDims) -> Self {
        let ModelDims {
            vocab_size,
            embed_dim: e,
            hidden_dim: h,
            feature_dim: f,
        } = dims;
        let (lstm, attention) = match family {
            DecoderFamily::Fc => (vec![LstmCell::new("dec.lstm", e + f, h)], None),
            DecoderFamily::UpDown => (
                vec![
                    LstmCell::new("dec.att_lstm", h + f + e, h),
                    LstmCell::new("dec.lang_lstm", f + h, h),
                ],
                Some(AttentionHead::new("dec.att", f, h)),
            ),
        };
        Self {
            family,
            dims,
            embedding: Embedding::new("emb", vocab_size, e),
            lstm,
            attention,
            out: Linear::new("dec.out", h, vocab_size),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.lstm.len()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.embedding.specs();
        for l in &self.lstm {
            s.extend(l.specs());
        }
        if let Some(a) = &self.attention {
            s.extend(a.specs());
        }
        s.extend(self.out.specs());
        s
    }

    /// Records the scene features as constants.
    pub fn context(&self, tape: &mut Tape, p: &Bound, features: &[Vec<f64>]) -> Result<Context> {
        if features.is_empty() {
            return contract("scene without objects");
        }
        let f = self.dims.feature_dim;
        if let Some(bad) = features.iter().find(|v| v.len() != f) {
            return dim_err(
                "context",
                format!("feature of length {} for feature_dim {f}", bad.len()),
            );
        }
        let mean = tape.constant_vec(&crate::corpus::mean_feature(features));
        let objects: Vec<Var> = features.iter().map(|v| tape.constant_vec(v)).collect();
        let (objects_t, projected) = match &self.attention {
            Some(att) => {
                let k = features.len();
                let mut t = vec![0.0; f * k];
                for (j, v) in features.iter().enumerate() {
                    for (i, x) in v.iter().enumerate() {
                        t[i * k + j] = *x;
                    }
                }
                let m = tape.constant(&[f, k], t)?;
                (Some(m), att.project(tape, p, &objects)?)
            }
            None => (None, Vec::new()),
        };
        Ok(Context {
            mean,
            objects,
            objects_t,
            projected,
        })
    }

    /// One autoregressive step: logits over the vocabulary and the new state.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &Context,
        state: &State,
        token: usize,
    ) -> Result<(Var, State)> {
        if state.h.len() != self.n_layers() || state.c.len() != self.n_layers() {
            return dim_err(
                "decode_step",
                format!("{} layer state for a {} layer decoder", state.h.len(), self.n_layers()),
            );
        }
        let x = self.embedding.lookup(tape, p, token)?;
        let next = match self.family {
            DecoderFamily::Fc => {
                let input = tape.concat(&[x, ctx.mean])?;
                let (h, c) = self.lstm[0].step(tape, p, input, state.h[0], state.c[0])?;
                State {
                    h: vec![h],
                    c: vec![c],
                }
            }
            DecoderFamily::UpDown => {
                let in1 = tape.concat(&[state.h[1], ctx.mean, x])?;
                let (h1, c1) = self.lstm[0].step(tape, p, in1, state.h[0], state.c[0])?;
                let (_, attended) = self.attend(tape, ctx, h1)?;
                let in2 = tape.concat(&[attended, h1])?;
                let (h2, c2) = self.lstm[1].step(tape, p, in2, state.h[1], state.c[1])?;
                State {
                    h: vec![h1, h2],
                    c: vec![c1, c2],
                }
            }
        };
        let top = *next.h.last().expect("at least one layer");
        let logits = self.out.forward(tape, p, top)?;
        Ok((logits, next))
    }

    /// Up-Down attention from `h1`: the weights `α` and `Σ_j α_j v_j`.
    pub fn attend(&self, tape: &mut Tape, ctx: &Context, h1: Var) -> Result<(Var, Var)> {
        let (Some(att), Some(objects_t)) = (&self.attention, ctx.objects_t) else {
            return contract("attention needs an up-down decoder and context");
        };
        let alpha = att.weights(tape, h1, &ctx.projected)?;
        let attended = tape.matmul(objects_t, alpha)?;
        Ok((alpha, attended))
    }

    /// Runs the decoder from `init`, choosing tokens with `source`.
    pub fn rollout(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &Context,
        init: State,
        mut source: TokenSource<'_>,
        t_max: usize,
    ) -> Result<TapeRollout> {
        let limit = match &source {
            TokenSource::Forced(ids) => ids.len(),
            _ => t_max,
        };
        if limit == 0 {
            return contract("rollout needs at least one step");
        }
        let mut states = vec![init];
        let mut words = Vec::new();
        let mut log_probs = Vec::new();
        let mut logits_seq = Vec::new();
        let mut ended = false;
        let mut x = BOS;
        for tau in 0..limit {
            let (logits, next) = self.step(tape, p, ctx, states.last().expect("nonempty"), x)?;
            let lp = tape.log_softmax(logits)?;
            let tok = match &mut source {
                TokenSource::Greedy => argmax(tape.value(lp)),
                TokenSource::Sample(rng) => sample_index(tape.value(lp), rng),
                TokenSource::Forced(ids) => ids[tau],
            };
            if tok >= self.dims.vocab_size {
                return contract(format!("token id {tok} outside the vocabulary"));
            }
            log_probs.push(tape.pick(lp, tok)?);
            logits_seq.push(logits);
            if tok == EOS {
                ended = true;
                break;
            }
            words.push(tok);
            states.push(next);
            x = tok;
        }
        Ok(TapeRollout {
            words,
            ended,
            log_probs,
            logits: logits_seq,
            states,
        })
    }
}

/// How [`Decoder::rollout`] picks each emitted token.
pub enum TokenSource<'a> {
    Greedy,
    Sample(&'a mut ChaCha8Rng),
    /// The full emission sequence, EOS included if present.
    Forced(&'a [usize]),
}

/// A rollout recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeRollout {
    /// Emitted words, EOS excluded.
    pub words: Vec<usize>,
    pub ended: bool,
    /// `log p(ĉ_τ | ĉ_<τ)` for every emission, EOS included.
    pub log_probs: Vec<Var>,
    pub logits: Vec<Var>,
    /// `s_0..s_T`.
    pub states: Vec<State>,
}

impl TapeRollout {
    /// Emitted ids, with the trailing EOS when the rollout ended.
    pub fn emissions(&self) -> Vec<usize> {
        let mut e = self.words.clone();
        if self.ended {
            e.push(EOS);
        }
        e
    }

    pub fn trace(&self, tape: &Tape) -> StateTrace {
        StateTrace {
            states: self.states.iter().map(|s| s.values(tape)).collect(),
        }
    }

    pub fn to_result(&self, tape: &Tape, sampled: bool) -> RolloutResult {
        RolloutResult {
            words: self.words.clone(),
            ended: self.ended,
            log_probs: self.log_probs.iter().map(|&v| tape.scalar(v)).collect(),
            trace: self.trace(tape),
            sampled,
        }
    }
}

/// A decoded caption with its per-token log-probabilities and state trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub words: Vec<usize>,
    pub ended: bool,
    pub log_probs: Vec<f64>,
    pub trace: StateTrace,
    pub sampled: bool,
}

impl RolloutResult {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    pub fn emissions(&self) -> Vec<usize> {
        let mut e = self.words.clone();
        if self.ended {
            e.push(EOS);
        }
        e
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from log-probabilities.
pub fn sample_index(log_probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Two-layer tanh network `h̃_0 = W2 tanh(W1 v̄ + b1) + b2`, one per decoder
/// layer. With `with_cell` the second layer also emits the cell state,
/// otherwise `c_0 = 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateTransformNet {
    pub hidden_dim: usize,
    pub with_cell: bool,
    layers: Vec<(Linear, Linear)>,
}

impl StateTransformNet {
    pub fn new(feature_dim: usize, hidden_dim: usize, n_layers: usize, with_cell: bool) -> Self {
        let out = if with_cell { 2 * hidden_dim } else { hidden_dim };
        let layers = (0..n_layers)
            .map(|i| {
                (
                    Linear::new(&format!("state.l{i}.fc1"), feature_dim, hidden_dim),
                    Linear::new(&format!("state.l{i}.fc2"), hidden_dim, out),
                )
            })
            .collect();
        Self {
            hidden_dim,
            with_cell,
            layers,
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.layers
            .iter()
            .flat_map(|(a, b)| a.specs().into_iter().chain(b.specs()))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, mean: Var) -> Result<State> {
        let hd = self.hidden_dim;
        let mut h = Vec::new();
        let mut c = Vec::new();
        for (fc1, fc2) in &self.layers {
            let z = fc1.forward(tape, p, mean)?;
            let z = tape.tanh(z);
            let out = fc2.forward(tape, p, z)?;
            if self.with_cell {
                h.push(tape.slice(out, 0, hd)?);
                c.push(tape.slice(out, hd, hd)?);
            } else {
                h.push(out);
                c.push(tape.constant_vec(&vec![0.0; hd]));
            }
        }
        Ok(State { h, c })
    }
}

/// Deployed captioner: a decoder started from the state transformation
/// network's estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Student {
    pub decoder: Decoder,
    pub state_net: StateTransformNet,
}

impl Student {
    pub fn new(family: DecoderFamily, dims: ModelDims, with_cell: bool) -> Self {
        Self {
            decoder: Decoder::new(family, dims),
            state_net: StateTransformNet::new(
                dims.feature_dim,
                dims.hidden_dim,
                family.n_layers(),
                with_cell,
            ),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut s = self.decoder.specs();
        s.extend(self.state_net.specs());
        s
    }

    /// Decoder and embedding tensors copied from `teacher`, state network
    /// drawn from `seed`.
    pub fn init_from_teacher(&self, teacher: &ParamSet, seed: u64) -> Result<ParamSet> {
        let mut params = ParamSet::init(&self.state_net.specs(), seed);
        params.copy_prefix_from(teacher, "emb.");
        params.copy_prefix_from(teacher, "dec.");
        params.check_against(&self.specs())?;
        Ok(params)
    }

    /// Context and initial state for one scene.
    pub fn start(&self, tape: &mut Tape, p: &Bound, features: &[Vec<f64>]) -> Result<(Context, State)> {
        let ctx = self.decoder.context(tape, p, features)?;
        let init = self.state_net.forward(tape, p, ctx.mean)?;
        Ok((ctx, init))
    }

    pub fn greedy_decode(&self, params: &ParamSet, features: &[Vec<f64>], t_max: usize) -> Result<RolloutResult> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let (ctx, init) = self.start(&mut tape, &p, features)?;
        let r = self.decoder.rollout(&mut tape, &p, &ctx, init, TokenSource::Greedy, t_max)?;
        Ok(r.to_result(&tape, false))
    }

    pub fn sample_decode(
        &self,
        params: &ParamSet,
        features: &[Vec<f64>],
        t_max: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<RolloutResult> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let (ctx, init) = self.start(&mut tape, &p, features)?;
        let r = self
            .decoder
            .rollout(&mut tape, &p, &ctx, init, TokenSource::Sample(rng), t_max)?;
        Ok(r.to_result(&tape, true))
    }

    /// Teacher-forced replay of `emissions` (EOS included if present).
    pub fn score(&self, params: &ParamSet, features: &[Vec<f64>], emissions: &[usize]) -> Result<RolloutResult> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let (ctx, init) = self.start(&mut tape, &p, features)?;
        let r = self
            .decoder
            .rollout(&mut tape, &p, &ctx, init, TokenSource::Forced(emissions), emissions.len())?;
        Ok(r.to_result(&tape, false))
    }

    pub fn beam_search(
        &self,
        params: &ParamSet,
        features: &[Vec<f64>],
        t_max: usize,
        width: usize,
    ) -> Result<Hypothesis> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let (ctx, init) = self.start(&mut tape, &p, features)?;
        let mut ranked = beam_search(&self.decoder, &mut tape, &p, &ctx, init, t_max, width)?;
        Ok(ranked.swap_remove(0))
    }
}

/// Every emission sequence of at most `t_max` tokens over `vocab_size` ids:
/// `w_1..w_k EOS` for `k < t_max`, and `t_max` words without EOS.
pub fn enumerate_emissions(vocab_size: usize, t_max: usize) -> Vec<Vec<usize>> {
    let words: Vec<usize> = (0..vocab_size).filter(|&t| t != EOS).collect();
    let mut out = Vec::new();
    let mut level: Vec<Vec<usize>> = vec![Vec::new()];
    for depth in 0..=t_max {
        for prefix in &level {
            if depth < t_max {
                let mut e = prefix.clone();
                e.push(EOS);
                out.push(e);
            } else {
                out.push(prefix.clone());
            }
        }
        if depth < t_max {
            level = level
                .iter()
                .flat_map(|p| {
                    words.iter().map(move |&w| {
                        let mut q = p.clone();
                        q.push(w);
                        q
                    })
                })
                .collect();
        }
    }
    out
}

/// A finished (or truncated) beam hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<usize>,
    pub ended: bool,
    pub score: f64,
}

/// Length-unnormalized beam search.
///
/// At every step all live hypotheses are expanded by every token and the
/// best `width` candidates are kept (ties by parent rank, then token id).
/// Candidates ending in EOS leave the beam for the finished pool; live
/// hypotheses still open after `t_max` emissions join the pool truncated.
/// Search stops early once no live hypothesis can beat the pool's best,
/// since log-probabilities never increase a score.
///
/// Returns the pool sorted by score, best first; with `width = 1` the first
/// entry is the greedy caption.
pub fn beam_search(
    dec: &Decoder,
    tape: &mut Tape,
    p: &Bound,
    ctx: &Context,
    init: State,
    t_max: usize,
    width: usize,
) -> Result<Vec<Hypothesis>> {
    if width == 0 {
        return contract("beam width must be at least 1");
    }
    if t_max == 0 {
        return contract("t_max must be at least 1");
    }
    struct Live {
        words: Vec<usize>,
        score: f64,
        state: State,
    }
    let mut live = vec![Live {
        words: Vec::new(),
        score: 0.0,
        state: init,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    for _ in 0..t_max {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (r, hyp) in live.iter().enumerate() {
            let x = hyp.words.last().copied().unwrap_or(BOS);
            let (logits, next) = dec.step(tape, p, ctx, &hyp.state, x)?;
            let lp = crate::autodiff::log_softmax_slice(tape.value(logits));
            cands.extend(lp.iter().enumerate().map(|(tok, l)| (hyp.score + l, r, tok)));
            next_states.push(next);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        let mut fresh = Vec::new();
        for (score, r, tok) in cands {
            if tok == EOS {
                pool.push(Hypothesis {
                    words: live[r].words.clone(),
                    ended: true,
                    score,
                });
            } else {
                let mut words = live[r].words.clone();
                words.push(tok);
                fresh.push(Live {
                    words,
                    score,
                    state: next_states[r].clone(),
                });
            }
        }
        live = fresh;
        let best_pool = pool.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if live.iter().all(|h| h.score < best_pool) {
            live.clear();
        }
        if live.is_empty() {
            break;
        }
    }
    pool.extend(live.into_iter().map(|h| Hypothesis {
        words: h.words,
        ended: false,
        score: h.score,
    }));
    pool.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(pool)
}

#[cfg(test)]
mod tests;
