//! Finite-difference gradient suite over every tape op and composite loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::corpus::EOS;
use crate::error::Result;
use crate::nn::{Bound, ParamSet};
use crate::student::{DecoderFamily, ModelDims, State, StateTrace, StateValues, Student, TokenSource};
use crate::training::{joint_mle_loss, loss_ll, state_loss_trace, token_coefficients};

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-5;

pub type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

/// A named scalar function of leaf tensors with the input shapes.
pub struct RegisteredOp {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub f: OpFn,
}

fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..tape.numel(x)).map(|_| rng.random_range(0.5..1.5)).collect();
    let w = tape
        .constant(tape.shape(x).to_vec().as_slice(), w)
        .expect("shape taken from x");
    let y = tape.mul(x, w).expect("same shape");
    tape.sum(y)
}

fn op(name: &'static str, shapes: &[&[usize]], f: OpFn) -> RegisteredOp {
    RegisteredOp {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        f,
    }
}

fn as_states(v: &[Var], layers: usize) -> Vec<State> {
    v.chunks(layers)
        .map(|c| State {
            h: c.to_vec(),
            c: Vec::new(),
        })
        .collect()
}

fn fixed_trace(len: usize, layers: usize, dim: usize) -> StateTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    StateTrace {
        states: (0..len)
            .map(|_| StateValues {
                h: (0..layers).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                c: vec![vec![0.0; dim]; layers],
            })
            .collect(),
    }
}

/// Every primitive op (output reduced to a scalar with random positive
/// weights) plus the losses built on top of them.
pub fn registered_ops() -> Vec<RegisteredOp> {
    vec![
        op("matmul", &[&[3, 4], &[4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            Ok(weighted_sum(t, y, 1))
        }),
        op("matvec", &[&[3, 4], &[4]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            Ok(weighted_sum(t, y, 2))
        }),
        op("add", &[&[5], &[5]], |t, v| {
            let y = t.add(v[0], v[1])?;
            Ok(weighted_sum(t, y, 3))
        }),
        op("sub", &[&[5], &[5]], |t, v| {
            let y = t.sub(v[0], v[1])?;
            Ok(weighted_sum(t, y, 4))
        }),
        op("mul", &[&[5], &[5]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            Ok(weighted_sum(t, y, 5))
        }),
        op("mul_scalar_broadcast", &[&[1], &[5]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            Ok(weighted_sum(t, y, 6))
        }),
        op("add_scalar_broadcast", &[&[5], &[1]], |t, v| {
            let y = t.add(v[0], v[1])?;
            Ok(weighted_sum(t, y, 7))
        }),
        op("sub_scalar_broadcast", &[&[1], &[5]], |t, v| {
            let y = t.sub(v[0], v[1])?;
            Ok(weighted_sum(t, y, 8))
        }),
        op("scale", &[&[4]], |t, v| {
            let y = t.scale(v[0], -2.5);
            Ok(weighted_sum(t, y, 9))
        }),
        op("shift", &[&[4]], |t, v| {
            let y = t.shift(v[0], 0.3);
            Ok(weighted_sum(t, y, 10))
        }),
        op("tanh", &[&[6]], |t, v| {
            let y = t.tanh(v[0]);
            Ok(weighted_sum(t, y, 11))
        }),
        op("sigmoid", &[&[6]], |t, v| {
            let y = t.sigmoid(v[0]);
            Ok(weighted_sum(t, y, 12))
        }),
        op("exp", &[&[6]], |t, v| {
            let y = t.exp(v[0]);
            Ok(weighted_sum(t, y, 13))
        }),
        op("concat", &[&[2], &[3], &[1]], |t, v| {
            let y = t.concat(v)?;
            Ok(weighted_sum(t, y, 14))
        }),
        op("slice", &[&[7]], |t, v| {
            let y = t.slice(v[0], 2, 3)?;
            Ok(weighted_sum(t, y, 15))
        }),
        op("sum", &[&[2, 3]], |t, v| {
            let y = t.sum(v[0]);
            Ok(t.scale(y, 1.7))
        }),
        op("mean", &[&[2, 3]], |t, v| {
            let y = t.mean(v[0]);
            Ok(t.scale(y, 1.7))
        }),
        op("max_elementwise", &[&[6], &[6]], |t, v| {
            let y = t.max_elementwise(v[0], v[1])?;
            Ok(weighted_sum(t, y, 16))
        }),
        op("max_all", &[&[6]], |t, v| {
            let y = t.max_all(v[0]);
            Ok(t.scale(y, 2.0))
        }),
        op("softmax", &[&[5]], |t, v| {
            let y = t.softmax(v[0])?;
            Ok(weighted_sum(t, y, 17))
        }),
        op("softmax_rows", &[&[2, 3]], |t, v| {
            let y = t.softmax(v[0])?;
            Ok(weighted_sum(t, y, 18))
        }),
        op("log_softmax", &[&[5]], |t, v| {
            let y = t.log_softmax(v[0])?;
            Ok(weighted_sum(t, y, 19))
        }),
        op("squared_l2", &[&[5], &[5]], |t, v| t.squared_l2(v[0], v[1])),
        op("dot", &[&[5], &[5]], |t, v| t.dot(v[0], v[1])),
        op("row", &[&[4, 3]], |t, v| {
            let y = t.row(v[0], 2)?;
            Ok(weighted_sum(t, y, 20))
        }),
        op("pick", &[&[4]], |t, v| {
            let y = t.pick(v[0], 1)?;
            Ok(t.scale(y, 3.0))
        }),
        op("loss_ll", &[&[6], &[6], &[6]], |t, v| loss_ll(t, v, &[4, 0, 2])),
        op("state_loss_trace", &[&[4], &[4], &[4], &[4], &[4], &[4]], |t, v| {
            let s = as_states(v, 2);
            let ls = state_loss_trace(t, &s, &fixed_trace(3, 2, 4), false)?;
            let all = t.concat(&ls)?;
            Ok(weighted_sum(t, all, 21))
        }),
        op("joint_mle_loss", &[&[6], &[6], &[4], &[4], &[4]], |t, v| {
            let ll = loss_ll(t, &v[..2], &[1, 3])?;
            let s = as_states(&v[2..], 1);
            let ls = state_loss_trace(t, &s, &fixed_trace(3, 1, 4), false)?;
            joint_mle_loss(t, ll, &ls, 0.7)
        }),
    ]
}

/// Result of checking one function on one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub max_tensor_rel_error: f64,
    pub passed: bool,
}

fn entry(name: &str, seed: u64, max_rel_error: f64, max_tensor_rel_error: f64, passed: bool) -> GradCheckEntry {
    GradCheckEntry {
        name: name.to_string(),
        seed,
        max_rel_error,
        max_tensor_rel_error,
        passed,
    }
}

/// The state-guidance pathway `λ Σ_t L_{s,t}` and the full guided
/// surrogate `Σ_τ coef_τ log p_τ + λ Σ_t L_{s,t}` (coefficients frozen at
/// their values for the unperturbed parameters), as functions of every
/// student parameter, on a tiny model.
fn hsg_pathway_check(family: DecoderFamily, seed: u64, full: bool) -> Result<(f64, f64)> {
    let dims = ModelDims {
        vocab_size: 6,
        embed_dim: 3,
        hidden_dim: 4,
        feature_dim: 5,
    };
    let student = Student::new(family, dims, false);
    let params = ParamSet::init(&student.specs(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let features: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let emissions = [4, 3, 5, EOS];
    let trace = fixed_trace(4, family.n_layers(), 4);
    let lambda = 0.8;
    let coefficients = {
        let r = student.score(&params, &features, &emissions)?;
        let losses: Vec<f64> = r
            .trace
            .states
            .iter()
            .zip(&trace.states)
            .map(|(a, b)| {
                a.h.iter()
                    .zip(&b.h)
                    .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
                    .sum()
            })
            .collect();
        token_coefficients(&losses, emissions.len(), lambda, 1.0, 0.25)
    };
    // structurally zero: shifts every attention score equally
    let vary = |n: &str| !n.ends_with("att.proj.b");
    let names: Vec<String> = params.names().filter(|n| vary(n)).cloned().collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| params.get(n).expect("listed").clone()).collect();
    let r = grad_check(
        |tape, vars| {
            let mut pairs: Vec<(String, Var)> = names.iter().cloned().zip(vars.iter().copied()).collect();
            for (n, v) in params.iter().filter(|(n, _)| !vary(n)) {
                pairs.push((n.clone(), tape.constant(v.shape(), v.data().to_vec())?));
            }
            let p = Bound::from_pairs(pairs);
            let (ctx, init) = student.start(tape, &p, &features)?;
            let roll = student.decoder.rollout(
                tape,
                &p,
                &ctx,
                init,
                TokenSource::Forced(&emissions),
                emissions.len(),
            )?;
            let ls = state_loss_trace(tape, &roll.states, &trace, false)?;
            let all = tape.concat(&ls)?;
            let s = tape.sum(all);
            let guided = tape.scale(s, lambda);
            if !full {
                return Ok(guided);
            }
            let lp = tape.concat(&roll.log_probs)?;
            let c = tape.constant_vec(&coefficients);
            let score = tape.dot(c, lp)?;
            tape.add(score, guided)
        },
        &inputs,
        GRAD_EPS,
    )?;
    Ok((r.max_rel_error, r.max_tensor_rel_error))
}

/// Runs every registered op and the guided-gradient pathway over `seeds`
/// seeds. Ops and direct losses must pass elementwise; the parameter-level
/// pathway checks are judged normwise per parameter tensor (see
/// [`crate::autodiff::GradCheckReport`]).
pub fn gradient_suite(seeds: u64) -> Result<Vec<GradCheckEntry>> {
    let mut out = Vec::new();
    for o in registered_ops() {
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 1);
            let inputs: Vec<Tensor> = o
                .shapes
                .iter()
                .map(|s| {
                    let n = s.iter().product();
                    Tensor::new(s.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                })
                .collect::<Result<_>>()?;
            let r = grad_check(o.f, &inputs, GRAD_EPS)?;
            out.push(entry(o.name, seed, r.max_rel_error, r.max_tensor_rel_error, r.max_rel_error <= GRAD_TOLERANCE));
        }
    }
    for family in [DecoderFamily::Fc, DecoderFamily::UpDown] {
        for (full, what) in [(false, "state_guidance_pathway"), (true, "hsg_surrogate")] {
            let name = format!("{what}_{}", family.name());
            for seed in 0..seeds {
                let (rel, tensor) = hsg_pathway_check(family, seed, full)?;
                out.push(entry(&name, seed, rel, tensor, tensor <= GRAD_TOLERANCE));
            }
        }
    }
    Ok(out)
}
