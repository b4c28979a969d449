use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, softmax_slice, Tape, Tensor};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn zero_params(specs: &[ParamSpec]) -> ParamSet {
    let mut p = ParamSet::new();
    for s in specs {
        p.insert(s.name.clone(), Tensor::zeros(&s.shape));
    }
    p
}

#[test]
fn lstm_with_zero_weights_outputs_zero() {
    let cell = LstmCell::new("l", 5, 3);
    let params = zero_params(&cell.specs());
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let x = t.constant_vec(&[1.0, -2.0, 3.0, 0.5, 0.1]);
    let h = t.constant_vec(&[0.0; 3]);
    let c = t.constant_vec(&[0.0; 3]);
    let (h2, c2) = cell.step(&mut t, &b, x, h, c).unwrap();
    assert_eq!(t.value(h2), &[0.0; 3]);
    assert_eq!(t.value(c2), &[0.0; 3]);
}

#[test]
fn saturated_forget_gate_keeps_cell() {
    let cell = LstmCell::new("l", 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ParamSet::init(&cell.specs(), 1);
    {
        let bias = params.get_mut(cell.bias_name()).unwrap();
        for v in &mut bias.data_mut()[3..6] {
            *v = 50.0;
        }
    }
    let x = rand_vec(&mut rng, 4, 1.0);
    let h = rand_vec(&mut rng, 3, 1.0);
    let c = rand_vec(&mut rng, 3, 1.0);
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let (xv, hv, cv) = (t.constant_vec(&x), t.constant_vec(&h), t.constant_vec(&c));
    let (_, c2) = cell.step(&mut t, &b, xv, hv, cv).unwrap();

    // Independent recomputation of i and g from the raw weights.
    let w_ih = params.get("l.w_ih").unwrap().data();
    let w_hh = params.get("l.w_hh").unwrap().data();
    let bias = params.get("l.b").unwrap().data();
    let pre = |row: usize| -> f64 {
        let mut s = bias[row];
        for j in 0..4 {
            s += w_ih[row * 4 + j] * x[j];
        }
        for j in 0..3 {
            s += w_hh[row * 3 + j] * h[j];
        }
        s
    };
    for k in 0..3 {
        let i = 1.0 / (1.0 + (-pre(k)).exp());
        let g = pre(6 + k).tanh();
        assert!((t.value(c2)[k] - (c[k] + i * g)).abs() <= 1e-10);
    }
}

#[test]
fn lstm_step_gradient_check() {
    let cell = LstmCell::new("l", 4, 3);
    for seed in 0..10 {
        let params = ParamSet::init(&cell.specs(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        inputs.push(Tensor::vector(rand_vec(&mut rng, 4, 1.0)));
        inputs.push(Tensor::vector(rand_vec(&mut rng, 3, 1.0)));
        inputs.push(Tensor::vector(rand_vec(&mut rng, 3, 1.0)));
        let names: Vec<String> = params.names().cloned().collect();
        let cell = cell.clone();
        let r = grad_check(
            move |t, v| {
                let bound = bind_existing(&names, &v[..names.len()]);
                let k = names.len();
                let (h, c) = cell.step(t, &bound, v[k], v[k + 1], v[k + 2])?;
                let hc = t.concat(&[h, c])?;
                let w = t.constant_vec(&[0.7, -1.1, 0.9, 1.3, 0.4, -0.8]);
                let y = t.mul(hc, w)?;
                Ok(t.sum(y))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-5, "seed {seed}: {r:?}");
    }
}

fn bind_existing(names: &[String], vars: &[crate::autodiff::Var]) -> Bound {
    Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()))
}

#[test]
fn attend_single_object_gets_all_weight() {
    let head = AttentionHead::new("att", 4, 3);
    let params = ParamSet::init(&head.specs(), 3);
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let h = t.constant_vec(&[0.3, -0.2, 0.9]);
    let v = t.constant_vec(&[1.0, 2.0, 3.0, 4.0]);
    let a = head.attend(&mut t, &b, h, &[v]).unwrap();
    assert_eq!(t.value(a), &[1.0]);
}

#[test]
fn attend_identical_objects_split_evenly() {
    let head = AttentionHead::new("att", 4, 3);
    let params = ParamSet::init(&head.specs(), 3);
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let h = t.constant_vec(&[0.3, -0.2, 0.9]);
    let v1 = t.constant_vec(&[1.0, 2.0, 3.0, 4.0]);
    let v2 = t.constant_vec(&[1.0, 2.0, 3.0, 4.0]);
    let a = head.attend(&mut t, &b, h, &[v1, v2]).unwrap();
    assert_eq!(t.value(a), &[0.5, 0.5]);
}

#[test]
fn attend_rejects_no_objects() {
    let head = AttentionHead::new("att", 4, 3);
    let params = ParamSet::init(&head.specs(), 3);
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let h = t.constant_vec(&[0.3, -0.2, 0.9]);
    assert!(head.attend(&mut t, &b, h, &[]).is_err());
}

#[test]
fn attend_matches_dot_then_softmax_oracle() {
    let head = AttentionHead::new("att", 4, 3);
    let params = ParamSet::init(&head.specs(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = rand_vec(&mut rng, 3, 1.0);
    let objs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 4, 1.0)).collect();

    let w = params.get("att.proj.w").unwrap().data();
    let bias = params.get("att.proj.b").unwrap().data();
    let scores: Vec<f64> = objs
        .iter()
        .map(|v| {
            (0..3)
                .map(|r| {
                    let fv = bias[r] + (0..4).map(|c| w[r * 4 + c] * v[c]).sum::<f64>();
                    h[r] * fv
                })
                .sum()
        })
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let oracle: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();

    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let hv = t.constant_vec(&h);
    let vs: Vec<_> = objs.iter().map(|o| t.constant_vec(o)).collect();
    let a = head.attend(&mut t, &b, hv, &vs).unwrap();
    for (x, y) in t.value(a).iter().zip(&oracle) {
        assert!((x - y).abs() <= 1e-14);
    }

    // The projection bias shifts every score by the same <h, b>, so its
    // gradient is identically zero; it is held constant in the check.
    let mut inputs = vec![Tensor::vector(h.clone())];
    inputs.extend(objs.iter().map(|o| Tensor::vector(o.clone())));
    inputs.push(params.get("att.proj.w").unwrap().clone());
    let bias = params.get("att.proj.b").unwrap().clone();
    let r = grad_check(
        |t, v| {
            let b = t.constant(bias.shape(), bias.data().to_vec())?;
            let bound = bind_existing(&["att.proj.b".into(), "att.proj.w".into()], &[b, v[4]]);
            let a = head.attend(t, &bound, v[0], &v[1..4])?;
            let w = t.constant_vec(&[1.5, -0.5, 0.8]);
            let y = t.mul(a, w)?;
            Ok(t.sum(y))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-5, "{r:?}");

    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let hv = t.constant_vec(&h);
    let vs: Vec<_> = objs.iter().map(|o| t.constant_vec(o)).collect();
    let a = head.attend(&mut t, &b, hv, &vs).unwrap();
    let w = t.constant_vec(&[1.5, -0.5, 0.8]);
    let y = t.mul(a, w).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    let gb = t.grad(b.get("att.proj.b").unwrap()).unwrap();
    assert!(gb.iter().all(|g| g.abs() <= 1e-15), "{gb:?}");
}

#[test]
fn init_is_deterministic_per_seed() {
    let specs = LstmCell::new("l", 6, 4).specs();
    let a = ParamSet::init(&specs, 42);
    let b = ParamSet::init(&specs, 42);
    let c = ParamSet::init(&specs, 43);
    assert_eq!(a.digest(), b.digest());
    for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
        let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb);
    }
    assert_ne!(a, c);
}

#[test]
fn init_range_respects_fan_in() {
    let specs = vec![ParamSpec::new("w", &[50, 100], 100)];
    let p = ParamSet::init(&specs, 0);
    assert!(p.get("w").unwrap().data().iter().all(|&v| v > -0.1 && v < 0.1));
}

#[test]
fn embedding_lookup_and_bounds() {
    let emb = Embedding::new("emb", 5, 3);
    let params = ParamSet::init(&emb.specs(), 0);
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let r = emb.lookup(&mut t, &b, 2).unwrap();
    assert_eq!(t.value(r), &params.get("emb.w").unwrap().data()[6..9]);
    assert!(emb.lookup(&mut t, &b, 5).is_err());
}

#[test]
fn linear_is_exactly_affine() {
    let lin = Linear::new("fc", 3, 2);
    let params = ParamSet::init(&lin.specs(), 1);
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let x = t.constant_vec(&[1.0, -1.0, 2.0]);
    let y = lin.forward(&mut t, &b, x).unwrap();
    let w = params.get("fc.w").unwrap().data();
    let bias = params.get("fc.b").unwrap().data();
    for r in 0..2 {
        let e = bias[r] + w[r * 3] - w[r * 3 + 1] + 2.0 * w[r * 3 + 2];
        assert_eq!(t.value(y)[r], e);
    }
    let bad = t.constant_vec(&[1.0]);
    assert!(lin.forward(&mut t, &b, bad).is_err());
}

proptest! {
    #[test]
    fn lstm_cell_state_growth_is_bounded(seed in 0u64..500, scale in 0.1f64..5.0) {
        let cell = LstmCell::new("l", 3, 4);
        let mut params = ParamSet::init(&cell.specs(), seed);
        for name in ["l.w_ih", "l.w_hh", "l.b"] {
            params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v *= scale * 10.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_vec(&mut rng, 3, scale);
        let h = rand_vec(&mut rng, 4, 1.0);
        let c = rand_vec(&mut rng, 4, 3.0);
        let mut t = Tape::new();
        let b = params.bind(&mut t);
        let (xv, hv, cv) = (t.constant_vec(&x), t.constant_vec(&h), t.constant_vec(&c));
        let (_, c2) = cell.step(&mut t, &b, xv, hv, cv).unwrap();
        for (new, old) in t.value(c2).iter().zip(&c) {
            prop_assert!(new.abs() <= old.abs() + 1.0 + 1e-12);
        }
    }

    #[test]
    fn attention_is_shift_invariant(scores in prop::collection::vec(-5.0f64..5.0, 1..8), shift in -100.0f64..100.0) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let a = softmax_slice(&scores);
        let b = softmax_slice(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}
