//! Losses and the two student training regimes.
//!
//! * Joint maximum likelihood: `L = L_ll + λ Σ_{t=0}^{T} L_{s,t}` with
//!   `L_{s,t} = ‖h̃_t − h_t‖²` against the frozen teacher's trace of the gold
//!   caption.
//! * Self-critical REINFORCE: advantage `r̃ = r(ĉ) − r(c⋆)` with the greedy
//!   caption `c⋆` as baseline. With hidden-state guidance each sampled token
//!   `τ` gets the coefficient `λ Σ_{t≥τ} γ^{t−τ} L_{s,t} − r̃` on its
//!   log-probability, plus the differentiable term `λ Σ_t L_{s,t}`. The
//!   teacher trace comes from the teacher reading and reconstructing `ĉ`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{CorpusRecord, Vocabulary, EOS};
use crate::error::{contract, dim_err, Error, Result};
use crate::metrics::{evaluate_captions, DocFreq, MetricSummary, RewardMetric, TokenSeq};
use crate::nn::{Bound, Gradients, ParamSet};
use crate::student::{State, StateTrace, Student, TapeRollout, TokenSource, DEFAULT_T_MAX};
use crate::teacher::{encode_refs, Teacher};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mle,
    MleHsg,
    Scst,
    ScstHsg,
}

impl Mode {
    pub fn is_reinforce(self) -> bool {
        matches!(self, Mode::Scst | Mode::ScstHsg)
    }

    pub fn uses_state_loss(self) -> bool {
        matches!(self, Mode::MleHsg | Mode::ScstHsg)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" => Ok(Mode::Mle),
            "mle_hsg" => Ok(Mode::MleHsg),
            "scst" => Ok(Mode::Scst),
            "scst_hsg" => Ok(Mode::ScstHsg),
            other => contract(format!("unknown training mode {other:?}")),
        }
    }
}

/// Student training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HsgConfig {
    /// Weight `λ` of the state loss.
    pub lambda: f64,
    pub reward_metric: RewardMetric,
    pub lr: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Plain maximum-likelihood epochs before REINFORCE starts.
    pub mle_warmup_epochs: usize,
    /// Discount `γ` on the state-loss suffix sums.
    pub discount: f64,
    pub t_max: usize,
    pub beam_width: usize,
    /// Include cell states in the state loss.
    pub match_cell_state: bool,
    pub state_net_epochs: usize,
    pub state_net_lr: f64,
}

impl Default for HsgConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            reward_metric: RewardMetric::Cider,
            lr: 0.1,
            grad_clip: 5.0,
            epochs: 10,
            seed: 1,
            mode: Mode::ScstHsg,
            mle_warmup_epochs: 5,
            discount: 1.0,
            t_max: DEFAULT_T_MAX,
            beam_width: 5,
            match_cell_state: false,
            state_net_epochs: 5,
            state_net_lr: 0.1,
        }
    }
}

impl HsgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return contract(format!("lambda must be a finite non-negative number, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.state_net_lr > 0.0) {
            return contract("learning rates must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return contract("grad_clip must be positive");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return contract("discount must lie in (0, 1]");
        }
        if self.t_max == 0 || self.beam_width == 0 {
            return contract("t_max and beam_width must be positive");
        }
        Ok(())
    }
}

/// `−Σ_t log softmax(logits_t)[gold_t]`.
pub fn loss_ll(tape: &mut Tape, logits: &[Var], gold: &[usize]) -> Result<Var> {
    if logits.len() != gold.len() || gold.is_empty() {
        return contract(format!(
            "{} logit vectors for {} gold tokens",
            logits.len(),
            gold.len()
        ));
    }
    let mut picks = Vec::with_capacity(gold.len());
    for (&l, &g) in logits.iter().zip(gold) {
        let lp = tape.log_softmax(l)?;
        picks.push(tape.pick(lp, g)?);
    }
    let all = tape.concat(&picks)?;
    let s = tape.sum(all);
    Ok(tape.scale(s, -1.0))
}

/// `L_{s,t}` for every `t`: squared distance between the student states and
/// the teacher's, summed over layers (and cell states when `with_cell`).
/// The teacher trace enters as constants.
pub fn state_loss_trace(
    tape: &mut Tape,
    student: &[State],
    teacher: &StateTrace,
    with_cell: bool,
) -> Result<Vec<Var>> {
    if student.len() != teacher.len() {
        return contract(format!(
            "student trace of length {} vs teacher trace of length {}",
            student.len(),
            teacher.len()
        ));
    }
    let mut out = Vec::with_capacity(student.len());
    for (s, t) in student.iter().zip(&teacher.states) {
        if s.h.len() != t.h.len() {
            return dim_err(
                "state_loss_trace",
                format!("{} student layers vs {} teacher layers", s.h.len(), t.h.len()),
            );
        }
        let mut terms = Vec::new();
        for (&hs, ht) in s.h.iter().zip(&t.h) {
            let c = tape.constant_vec(ht);
            terms.push(tape.squared_l2(hs, c)?);
        }
        if with_cell {
            for (&cs, ct) in s.c.iter().zip(&t.c) {
                let c = tape.constant_vec(ct);
                terms.push(tape.squared_l2(cs, c)?);
            }
        }
        let all = tape.concat(&terms)?;
        out.push(tape.sum(all));
    }
    Ok(out)
}

/// `ll + λ Σ_t L_{s,t}`.
pub fn joint_mle_loss(tape: &mut Tape, ll: Var, state_losses: &[Var], lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return contract("lambda must be non-negative");
    }
    if state_losses.is_empty() {
        return Ok(ll);
    }
    let all = tape.concat(state_losses)?;
    let s = tape.sum(all);
    let weighted = tape.scale(s, lambda);
    tape.add(ll, weighted)
}

/// Rewards and credit assignment of one REINFORCE rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub reward: f64,
    pub baseline: f64,
    pub advantage: f64,
    /// `L_{s,t}` for `t = 0..T`; empty without state guidance.
    pub state_losses: Vec<f64>,
    /// Coefficient on `log p(ĉ_τ | ĉ_<τ)` for every emission.
    pub coefficients: Vec<f64>,
}

/// `λ Σ_{t=τ}^{T} γ^{t−τ} L_t − r̃` for `τ = 0..n_emissions`. Emissions past
/// the trace (the final EOS) get `−r̃` plus whatever suffix remains.
pub fn token_coefficients(
    state_losses: &[f64],
    n_emissions: usize,
    lambda: f64,
    discount: f64,
    advantage: f64,
) -> Vec<f64> {
    let mut suffix = vec![0.0; n_emissions.max(state_losses.len()) + 1];
    for t in (0..state_losses.len()).rev() {
        suffix[t] = state_losses[t] + discount * suffix[t + 1];
    }
    (0..n_emissions).map(|tau| lambda * suffix[tau] - advantage).collect()
}

/// `Σ_τ coef_τ log p_τ (+ λ Σ_t L_t)` on the tape.
fn policy_surrogate(
    tape: &mut Tape,
    roll: &TapeRollout,
    coefficients: &[f64],
    state_terms: &[Var],
    lambda: f64,
) -> Result<Var> {
    let lp = tape.concat(&roll.log_probs)?;
    let coef = tape.constant_vec(coefficients);
    let score = tape.dot(coef, lp)?;
    if state_terms.is_empty() {
        return Ok(score);
    }
    let all = tape.concat(state_terms)?;
    let s = tape.sum(all);
    let weighted = tape.scale(s, lambda);
    tape.add(score, weighted)
}

/// State-guidance settings for [`hsg_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guidance<'a> {
    pub teacher_trace: &'a StateTrace,
    pub lambda: f64,
    pub discount: f64,
    pub with_cell: bool,
}

fn replay(
    student: &Student,
    tape: &mut Tape,
    p: &Bound,
    features: &[Vec<f64>],
    emissions: &[usize],
) -> Result<TapeRollout> {
    let (ctx, init) = student.start(tape, p, features)?;
    student
        .decoder
        .rollout(tape, p, &ctx, init, TokenSource::Forced(emissions), emissions.len())
}

fn policy_gradients(
    tape: &mut Tape,
    p: &Bound,
    roll: &TapeRollout,
    advantage: f64,
    guidance: Option<Guidance<'_>>,
) -> Result<(Gradients, Vec<f64>, Vec<f64>)> {
    let n = roll.log_probs.len();
    let (coefficients, state_terms, losses, lambda) = match guidance {
        None => (vec![-advantage; n], Vec::new(), Vec::new(), 0.0),
        Some(g) => {
            let terms = state_loss_trace(tape, &roll.states, g.teacher_trace, g.with_cell)?;
            let losses: Vec<f64> = terms.iter().map(|&v| tape.scalar(v)).collect();
            let coef = token_coefficients(&losses, n, g.lambda, g.discount, advantage);
            (coef, terms, losses, g.lambda)
        }
    };
    let root = policy_surrogate(tape, roll, &coefficients, &state_terms, lambda)?;
    tape.backward(root)?;
    Ok((p.gradients(tape), coefficients, losses))
}

/// Single-sample self-critical policy gradient `−r̃ ∇ Σ_τ log p(ĉ_τ|ĉ_<τ)`
/// for the emissions of `ĉ` (EOS included when present).
pub fn scst_gradients(
    student: &Student,
    params: &ParamSet,
    features: &[Vec<f64>],
    emissions: &[usize],
    advantage: f64,
) -> Result<Gradients> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let roll = replay(student, &mut tape, &p, features, emissions)?;
    Ok(policy_gradients(&mut tape, &p, &roll, advantage, None)?.0)
}

/// Single-sample hidden-state guided policy gradient for `ĉ`.
pub fn hsg_gradients(
    student: &Student,
    params: &ParamSet,
    features: &[Vec<f64>],
    emissions: &[usize],
    advantage: f64,
    guidance: Guidance<'_>,
) -> Result<(Gradients, Vec<f64>)> {
    if guidance.teacher_trace.states.first().map(|s| s.h.len()) != Some(student.decoder.n_layers()) {
        return contract("teacher trace does not match the student decoder");
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let roll = replay(student, &mut tape, &p, features, emissions)?;
    let (g, coef, _) = policy_gradients(&mut tape, &p, &roll, advantage, Some(guidance))?;
    Ok((g, coef))
}

/// Reward of a word-id caption against string references.
pub fn caption_reward(
    metric: RewardMetric,
    vocab: &Vocabulary,
    words: &[usize],
    refs: &[TokenSeq],
    df: &DocFreq,
) -> Result<f64> {
    let cand = vocab.decode(words);
    metric.score(&cand, refs, df)
}

/// Frozen teacher and its parameters.
#[derive(Debug, Clone, Copy)]
pub struct FrozenTeacher<'a> {
    pub teacher: &'a Teacher,
    pub params: &'a ParamSet,
}

impl FrozenTeacher<'_> {
    fn check(&self, student: &Student) -> Result<()> {
        if self.teacher.decoder.family != student.decoder.family
            || self.teacher.decoder.dims != student.decoder.dims
        {
            return contract("teacher and student decoders differ");
        }
        self.params.check_against(&self.teacher.specs())
    }
}

/// One sampled REINFORCE update's gradients and bookkeeping.
pub struct ReinforceStep {
    pub gradients: Gradients,
    pub trace: RewardTrace,
    pub sampled: Vec<usize>,
    pub greedy: Vec<usize>,
}

/// Samples `ĉ`, decodes `c⋆` greedily, scores both and returns the SCST or
/// HSG gradient (`guided`).
#[allow(clippy::too_many_arguments)]
pub fn reinforce_step(
    student: &Student,
    params: &ParamSet,
    teacher: FrozenTeacher<'_>,
    record: &CorpusRecord,
    vocab: &Vocabulary,
    df: &DocFreq,
    cfg: &HsgConfig,
    guided: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ReinforceStep> {
    let greedy = student.greedy_decode(params, &record.features, cfg.t_max)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let (ctx, init) = student.start(&mut tape, &p, &record.features)?;
    let roll = student
        .decoder
        .rollout(&mut tape, &p, &ctx, init, TokenSource::Sample(rng), cfg.t_max)?;
    let reward = caption_reward(cfg.reward_metric, vocab, &roll.words, &record.captions, df)?;
    let baseline = caption_reward(cfg.reward_metric, vocab, &greedy.words, &record.captions, df)?;
    let advantage = reward - baseline;
    let teacher_trace;
    let guidance = if guided {
        teacher_trace = teacher
            .teacher
            .self_trace(teacher.params, &record.features, &roll.words)?;
        Some(Guidance {
            teacher_trace: &teacher_trace,
            lambda: cfg.lambda,
            discount: cfg.discount,
            with_cell: cfg.match_cell_state,
        })
    } else {
        None
    };
    let (gradients, coefficients, state_losses) = policy_gradients(&mut tape, &p, &roll, advantage, guidance)?;
    Ok(ReinforceStep {
        gradients,
        trace: RewardTrace {
            reward,
            baseline,
            advantage,
            state_losses,
            coefficients,
        },
        sampled: roll.words,
        greedy: greedy.words,
    })
}

/// Teacher traces of every reference of a record, the encoder reading all of
/// them.
pub fn gold_traces(teacher: FrozenTeacher<'_>, vocab: &Vocabulary, record: &CorpusRecord) -> Result<Vec<StateTrace>> {
    let caps = encode_refs(vocab, record);
    teacher.teacher.traces(teacher.params, &record.features, &caps, &caps)
}

/// Joint MLE loss of one scene averaged over its references, plus the
/// teacher-forced hit and token counts. With `traces = None` the state loss
/// is skipped.
#[allow(clippy::too_many_arguments)]
pub fn mle_scene_loss(
    student: &Student,
    tape: &mut Tape,
    p: &Bound,
    features: &[Vec<f64>],
    caps: &[Vec<usize>],
    traces: Option<&[StateTrace]>,
    lambda: f64,
    with_cell: bool,
) -> Result<(Var, usize, usize)> {
    let (ctx, init) = student.start(tape, p, features)?;
    let mut terms = Vec::with_capacity(caps.len());
    let (mut hit, mut total) = (0, 0);
    for (i, c) in caps.iter().enumerate() {
        let mut em = c.clone();
        em.push(EOS);
        let roll = student
            .decoder
            .rollout(tape, p, &ctx, init.clone(), TokenSource::Forced(&em), em.len())?;
        let (h, n) = crate::teacher::count_hits(tape, &roll);
        hit += h;
        total += n;
        let ll = loss_ll(tape, &roll.logits, &em)?;
        let loss = match traces {
            Some(tr) => {
                let st = state_loss_trace(tape, &roll.states, &tr[i], with_cell)?;
                joint_mle_loss(tape, ll, &st, lambda)?
            }
            None => ll,
        };
        terms.push(loss);
    }
    let all = tape.concat(&terms)?;
    Ok((tape.mean(all), hit, total))
}

fn apply_update(params: &mut ParamSet, mut g: Gradients, cfg_clip: f64, lr: f64, what: &str) -> Result<f64> {
    if !g.is_finite() {
        return Err(Error::Diverged(format!("non-finite gradient during {what}")));
    }
    let norm = g.clip_norm(cfg_clip);
    params.sgd_step(&g, lr);
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNetEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Pooled teacher initial state (from all gold captions) for each record.
pub fn teacher_initial_states(
    teacher: FrozenTeacher<'_>,
    vocab: &Vocabulary,
    records: &[CorpusRecord],
) -> Result<Vec<crate::student::StateValues>> {
    records
        .iter()
        .map(|r| {
            let mut tape = Tape::new();
            let p = teacher.params.bind_frozen(&mut tape);
            let (_, projected) = teacher.teacher.context(&mut tape, &p, &r.features)?;
            let init = teacher
                .teacher
                .initial_state(&mut tape, &p, &projected, &encode_refs(vocab, r))?;
            Ok(init.values(&tape))
        })
        .collect()
}

/// Fits the state transformation network to the teacher's initial states:
/// minimizes `‖h_0 − net(v̄)‖²` (per layer, summed), updating `state.*` only.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_state_net(
    student: &Student,
    params: &mut ParamSet,
    teacher: FrozenTeacher<'_>,
    vocab: &Vocabulary,
    records: &[CorpusRecord],
    epochs: usize,
    lr: f64,
    clip: f64,
    seed: u64,
) -> Result<Vec<StateNetEpoch>> {
    teacher.check(student)?;
    let targets = teacher_initial_states(teacher, vocab, records)?;
    let with_cell = student.state_net.with_cell;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut hist = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape);
            let (_, init) = student.start(&mut tape, &p, &records[i].features)?;
            let tr = StateTrace {
                states: vec![targets[i].clone()],
            };
            let l = state_loss_trace(&mut tape, &[init], &tr, with_cell)?[0];
            let v = tape.scalar(l);
            if !v.is_finite() {
                return Err(Error::Diverged(format!("state loss {v} at epoch {epoch}")));
            }
            sum += v;
            tape.backward(l)?;
            let mut g = p.gradients(&tape);
            g.retain(|n| n.starts_with("state."));
            apply_update(params, g, clip, lr, "state network pretraining")?;
        }
        hist.push(StateNetEpoch {
            epoch,
            mean_loss: sum / records.len().max(1) as f64,
        });
    }
    Ok(hist)
}

/// One line of the metrics history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub mean_state_loss: f64,
}

/// Beam-search captions for every record, scored against its references.
pub fn evaluate_student(
    student: &Student,
    params: &ParamSet,
    vocab: &Vocabulary,
    records: &[CorpusRecord],
    df: &DocFreq,
    t_max: usize,
    beam_width: usize,
) -> Result<MetricSummary> {
    let pairs = records
        .iter()
        .map(|r| {
            let h = student.beam_search(params, &r.features, t_max, beam_width)?;
            Ok((vocab.decode(&h.words), r.captions.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_captions(&pairs, df)
}

/// Mean over records of `Σ_t L_{s,t}` between the student, teacher-forced on
/// the first reference, and the teacher's trace of that reference.
pub fn mean_state_loss(
    student: &Student,
    params: &ParamSet,
    teacher: FrozenTeacher<'_>,
    vocab: &Vocabulary,
    records: &[CorpusRecord],
    with_cell: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        let caps = encode_refs(vocab, r);
        let tr = teacher
            .teacher
            .traces(teacher.params, &r.features, &caps, &caps[..1])?;
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let (ctx, init) = student.start(&mut tape, &p, &r.features)?;
        let mut em = caps[0].clone();
        em.push(EOS);
        let roll = student
            .decoder
            .rollout(&mut tape, &p, &ctx, init, TokenSource::Forced(&em), em.len())?;
        let states = roll.states;
        let ls = state_loss_trace(&mut tape, &states, &tr[0], with_cell)?;
        total += ls.iter().map(|&v| tape.scalar(v)).sum::<f64>();
    }
    Ok(total / records.len().max(1) as f64)
}

/// Inputs of a student training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub vocab: &'a Vocabulary,
    pub train: &'a [CorpusRecord],
    pub df_train: &'a DocFreq,
    pub val: &'a [CorpusRecord],
    pub df_val: &'a DocFreq,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    /// Parameters of the epoch with the best validation CIDEr.
    pub best: ParamSet,
    pub best_epoch: usize,
    /// Parameters after the last epoch.
    pub last: ParamSet,
    pub history: Vec<EpochMetrics>,
}

/// Trains the student from `params` (already initialized from the teacher).
///
/// MLE epochs teacher-force every reference; in `mle_hsg` the state loss is
/// added with weight `λ`. REINFORCE modes first run `mle_warmup_epochs` of
/// plain MLE, then one sampled/greedy rollout pair per scene. After every
/// epoch the validation split is decoded with beam search.
pub fn train_student(
    student: &Student,
    params: ParamSet,
    teacher: FrozenTeacher<'_>,
    data: TrainData<'_>,
    cfg: &HsgConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<StudentRun> {
    cfg.validate()?;
    teacher.check(student)?;
    params.check_against(&student.specs())?;
    if data.train.is_empty() || data.val.is_empty() {
        return contract("training and validation splits must be non-empty");
    }
    let with_cell = cfg.match_cell_state;
    let need_gold_traces = cfg.mode == Mode::MleHsg;
    let encoded: Vec<Vec<Vec<usize>>> = data.train.iter().map(|r| encode_refs(data.vocab, r)).collect();
    let gold: Option<Vec<Vec<StateTrace>>> = if need_gold_traces {
        Some(
            data.train
                .iter()
                .map(|r| gold_traces(teacher, data.vocab, r))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let reinforce = cfg.mode.is_reinforce() && epoch > cfg.mle_warmup_epochs;
        for &i in &order {
            let rec = &data.train[i];
            let g = if reinforce {
                reinforce_step(
                    student,
                    &params,
                    teacher,
                    rec,
                    data.vocab,
                    data.df_train,
                    cfg,
                    cfg.mode == Mode::ScstHsg,
                    &mut rng,
                )?
                .gradients
            } else {
                let mut tape = Tape::new();
                let p = params.bind(&mut tape);
                let traces = gold.as_ref().map(|g| g[i].as_slice());
                let (loss, _, _) = mle_scene_loss(
                    student,
                    &mut tape,
                    &p,
                    &rec.features,
                    &encoded[i],
                    traces,
                    cfg.lambda,
                    with_cell,
                )?;
                let v = tape.scalar(loss);
                if !v.is_finite() {
                    return Err(Error::Diverged(format!(
                        "student loss {v} at epoch {epoch}, scene {}",
                        rec.scene_id
                    )));
                }
                tape.backward(loss)?;
                p.gradients(&tape)
            };
            apply_update(&mut params, g, cfg.grad_clip, cfg.lr, "student training")?;
        }
        if !params.is_finite() {
            return Err(Error::Diverged(format!("non-finite student parameters after epoch {epoch}")));
        }
        let m = evaluate_student(
            student,
            &params,
            data.vocab,
            data.val,
            data.df_val,
            cfg.t_max,
            cfg.beam_width,
        )?;
        let e = EpochMetrics {
            epoch,
            split: "val".into(),
            bleu4: m.bleu4,
            rouge_l: m.rouge_l,
            cider: m.cider,
            mean_state_loss: mean_state_loss(student, &params, teacher, data.vocab, data.val, with_cell)?,
        };
        on_epoch(&e);
        if e.cider > best.0 {
            best = (e.cider, epoch, params.clone());
        }
        history.push(e);
    }
    Ok(StudentRun {
        best: best.2,
        best_epoch: best.1,
        last: params,
        history,
    })
}

/// Writes the history as JSON lines.
pub fn write_history(path: &std::path::Path, history: &[EpochMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in history {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub mod oracle;
