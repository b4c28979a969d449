//! Exhaustive-enumeration checks of the policy-gradient estimators.
//!
//! On a vocabulary small enough to list every caption, the expectation of a
//! single-sample estimator is `Σ_ĉ p(ĉ) g(ĉ)`. It is compared with the
//! gradient of the enumerated objective `Σ_ĉ p(ĉ) (λ Σ_t L_{s,t}(ĉ) − r̃(ĉ))`
//! taken by reverse mode on one tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{hsg_gradients, scst_gradients, state_loss_trace, Guidance};
use crate::autodiff::Tape;
use crate::error::Result;
use crate::nn::{Gradients, ParamSet};
use crate::student::{enumerate_emissions, DecoderFamily, ModelDims, StateTrace, Student, TokenSource};
use crate::teacher::Teacher;

/// Everything fixed across the enumerated captions.
pub struct Enumeration<'a> {
    pub student: &'a Student,
    pub params: &'a ParamSet,
    pub features: &'a [Vec<f64>],
    pub t_max: usize,
    /// `r̃(ĉ)` as a function of the emitted words.
    pub advantage: &'a dyn Fn(&[usize]) -> f64,
}

/// Teacher trace used by the guided estimator, as a function of the words.
pub struct StateGuidance<'a> {
    pub trace_of: &'a dyn Fn(&[usize]) -> Result<StateTrace>,
    pub lambda: f64,
    pub discount: f64,
    pub with_cell: bool,
}

impl Enumeration<'_> {
    fn captions(&self) -> Vec<Vec<usize>> {
        enumerate_emissions(self.student.decoder.dims.vocab_size, self.t_max)
    }

    fn words(em: &[usize]) -> &[usize] {
        match em.last() {
            Some(&crate::corpus::EOS) => &em[..em.len() - 1],
            _ => em,
        }
    }

    /// Total probability of all enumerated captions (1 up to roundoff).
    pub fn total_mass(&self) -> Result<f64> {
        let mut m = 0.0;
        for em in self.captions() {
            m += self.student.score(self.params, self.features, &em)?.log_prob().exp();
        }
        Ok(m)
    }

    /// `Σ_ĉ p(ĉ) g(ĉ)` with `g` the self-critical estimator, or the guided one
    /// when `guidance` is given.
    pub fn expected_estimator(&self, guidance: Option<&StateGuidance<'_>>) -> Result<Gradients> {
        let mut acc = Gradients::new();
        for em in self.captions() {
            let p = self.student.score(self.params, self.features, &em)?.log_prob().exp();
            let words = Self::words(&em);
            let adv = (self.advantage)(words);
            let g = match guidance {
                None => scst_gradients(self.student, self.params, self.features, &em, adv)?,
                Some(sg) => {
                    let trace = (sg.trace_of)(words)?;
                    let guide = Guidance {
                        teacher_trace: &trace,
                        lambda: sg.lambda,
                        discount: sg.discount,
                        with_cell: sg.with_cell,
                    };
                    hsg_gradients(self.student, self.params, self.features, &em, adv, guide)?.0
                }
            };
            acc.add_scaled(&g, p);
        }
        Ok(acc)
    }

    /// Reverse-mode gradient of `Σ_ĉ p(ĉ) (λ Σ_t L_{s,t}(ĉ) − r̃(ĉ))`.
    pub fn analytic_gradient(&self, guidance: Option<&StateGuidance<'_>>) -> Result<Gradients> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let (ctx, init) = self.student.start(&mut tape, &p, self.features)?;
        let mut terms = Vec::new();
        for em in self.captions() {
            let roll = self.student.decoder.rollout(
                &mut tape,
                &p,
                &ctx,
                init.clone(),
                TokenSource::Forced(&em),
                em.len(),
            )?;
            let lp = tape.concat(&roll.log_probs)?;
            let lp = tape.sum(lp);
            let prob = tape.exp(lp);
            let adv = (self.advantage)(&roll.words);
            let mut obj = tape.scalar_const(-adv);
            if let Some(sg) = guidance {
                let trace = (sg.trace_of)(&roll.words)?;
                let ls = state_loss_trace(&mut tape, &roll.states, &trace, sg.with_cell)?;
                let ls = tape.concat(&ls)?;
                let s = tape.sum(ls);
                let s = tape.scale(s, sg.lambda);
                obj = tape.add(obj, s)?;
            }
            terms.push(tape.mul(prob, obj)?);
        }
        let all = tape.concat(&terms)?;
        let root = tape.sum(all);
        tape.backward(root)?;
        Ok(p.gradients(&tape))
    }

    /// Both sides of the comparison and their largest elementwise gap.
    pub fn compare(&self, guidance: Option<&StateGuidance<'_>>) -> Result<OracleReport> {
        let expected = self.expected_estimator(guidance)?;
        let analytic = self.analytic_gradient(guidance)?;
        Ok(OracleReport {
            n_captions: self.captions().len(),
            total_mass: self.total_mass()?,
            max_abs_diff: expected.max_abs_diff(&analytic),
            analytic_max_abs: analytic.max_abs(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub n_captions: usize,
    pub total_mass: f64,
    pub max_abs_diff: f64,
    pub analytic_max_abs: f64,
}

/// Deterministic pseudo-random reward in `[0, 2)` for every caption.
pub fn enumerable_reward(words: &[usize]) -> f64 {
    let mut h: u64 = 0x9e37_79b9;
    for &w in words {
        h = h.wrapping_mul(6364136223846793005).wrapping_add(w as u64 + 1);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0
}

/// A random vocab-4 teacher/student pair small enough to enumerate.
pub struct OracleFixture {
    pub student: Student,
    pub student_params: ParamSet,
    pub teacher: Teacher,
    pub teacher_params: ParamSet,
    pub features: Vec<Vec<f64>>,
    pub t_max: usize,
    pub baseline: f64,
    pub lambda: f64,
}

impl OracleFixture {
    /// The student starts from the teacher decoder and is then perturbed so
    /// the two state traces differ.
    pub fn new(family: DecoderFamily, seed: u64) -> Self {
        let dims = ModelDims {
            vocab_size: 4,
            embed_dim: 3,
            hidden_dim: 4,
            feature_dim: 5,
        };
        let teacher = Teacher::new(family, dims, false);
        let mut teacher_params = teacher.init_params(seed);
        let names: Vec<String> = teacher_params.names().cloned().collect();
        for n in &names {
            let t = teacher_params.get_mut(n).expect("listed");
            t.data_mut().iter_mut().for_each(|x| *x *= 2.0);
        }
        let student = Student::new(family, dims, false);
        let mut student_params = student
            .init_from_teacher(&teacher_params, seed + 100)
            .expect("same decoder");
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let names: Vec<String> = student_params.names().cloned().collect();
        for n in &names {
            let t = student_params.get_mut(n).expect("listed");
            t.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
        }
        let features = (0..3)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Self {
            student,
            student_params,
            teacher,
            teacher_params,
            features,
            t_max: 3,
            baseline: 0.6,
            lambda: 1.0,
        }
    }

    /// Self-critical, guided with the teacher encoding the sampled caption,
    /// and guided with the teacher encoding a fixed caption.
    pub fn check(&self) -> Result<EstimatorCheck> {
        let adv = |w: &[usize]| enumerable_reward(w) - self.baseline;
        let e = Enumeration {
            student: &self.student,
            params: &self.student_params,
            features: &self.features,
            t_max: self.t_max,
            advantage: &adv,
        };
        let self_encoded = |w: &[usize]| self.teacher.self_trace(&self.teacher_params, &self.features, w);
        let fixed = vec![vec![3, 0, 1]];
        let causal = |w: &[usize]| -> Result<StateTrace> {
            Ok(self
                .teacher
                .traces(&self.teacher_params, &self.features, &fixed, &[w.to_vec()])?
                .swap_remove(0))
        };
        let guided = |trace_of: &dyn Fn(&[usize]) -> Result<StateTrace>| -> Result<OracleReport> {
            e.compare(Some(&StateGuidance {
                trace_of,
                lambda: self.lambda,
                discount: 1.0,
                with_cell: false,
            }))
        };
        Ok(EstimatorCheck {
            family: self.student.decoder.family,
            scst: e.compare(None)?,
            hsg: guided(&self_encoded)?,
            hsg_fixed_encoder: guided(&causal)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorCheck {
    pub family: DecoderFamily,
    pub scst: OracleReport,
    /// Teacher trace from the teacher reading `ĉ` itself.
    pub hsg: OracleReport,
    /// Teacher trace from the teacher reading a fixed caption and decoding
    /// `ĉ`, so `h̃_t` depends on `ĉ_<t` only.
    pub hsg_fixed_encoder: OracleReport,
}
