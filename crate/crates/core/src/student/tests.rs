use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, log_softmax_slice, Tensor};
use crate::nn::Bound;

fn dims(vocab: usize) -> ModelDims {
    ModelDims {
        vocab_size: vocab,
        embed_dim: 3,
        hidden_dim: 4,
        feature_dim: 5,
    }
}

fn features(k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Tiny model with parameters scaled up so the softmax is far from uniform.
fn tiny(family: DecoderFamily, vocab: usize, seed: u64) -> (Student, ParamSet) {
    let s = Student::new(family, dims(vocab), false);
    let mut p = ParamSet::init(&s.specs(), seed);
    let names: Vec<String> = p.names().cloned().collect();
    for n in names {
        p.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|x| *x *= 3.0);
    }
    (s, p)
}

const FAMILIES: [DecoderFamily; 2] = [DecoderFamily::Fc, DecoderFamily::UpDown];

#[test]
fn zero_state_net_gives_zero_state() {
    let s = Student::new(DecoderFamily::UpDown, dims(6), false);
    let mut p = ParamSet::init(&s.specs(), 1);
    let names: Vec<String> = p.names().filter(|n| n.starts_with("state.")).cloned().collect();
    for n in names {
        p.get_mut(&n).unwrap().data_mut().fill(0.0);
    }
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let (_, init) = s.start(&mut tape, &b, &features(3, 2)).unwrap();
    for v in init.h.iter().chain(&init.c) {
        assert!(tape.value(*v).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn state_net_is_deterministic_and_checks_dims() {
    let s = Student::new(DecoderFamily::Fc, dims(6), false);
    let p = ParamSet::init(&s.specs(), 3);
    let run = || {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let (_, init) = s.start(&mut tape, &b, &features(4, 9)).unwrap();
        init.values(&tape)
    };
    assert_eq!(run(), run());
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let wrong = tape.constant_vec(&[0.0; 4]);
    assert!(matches!(
        s.state_net.forward(&mut tape, &b, wrong),
        Err(crate::Error::Dimension { .. })
    ));
}

#[test]
fn state_net_gradient_check() {
    for seed in 0..10 {
        let net = StateTransformNet::new(5, 4, 2, seed % 2 == 1);
        let p = ParamSet::init(&net.specs(), seed);
        let names: Vec<String> = p.names().cloned().collect();
        let inputs: Vec<Tensor> = names.iter().map(|n| p.get(n).unwrap().clone()).collect();
        let mean = crate::corpus::mean_feature(&features(3, seed));
        let target: Vec<f64> = (0..4).map(|i| 0.1 * i as f64 - 0.2).collect();
        let rep = grad_check(
            |tape, vars| {
                let b = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
                let m = tape.constant_vec(&mean);
                let st = net.forward(tape, &b, m)?;
                let t = tape.constant_vec(&target);
                let mut terms = Vec::new();
                for &h in st.h.iter().chain(&st.c) {
                    terms.push(tape.squared_l2(h, t)?);
                }
                let all = tape.concat(&terms)?;
                Ok(tape.sum(all))
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error <= 1e-5, "seed {seed}: {rep:?}");
    }
}

#[test]
fn decode_step_gives_a_distribution() {
    for fam in FAMILIES {
        let (s, p) = tiny(fam, 7, 5);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let (ctx, init) = s.start(&mut tape, &b, &features(3, 1)).unwrap();
        let (logits, next) = s.decoder.step(&mut tape, &b, &ctx, &init, BOS).unwrap();
        assert_eq!(tape.numel(logits), 7);
        assert_eq!(next.h.len(), fam.n_layers());
        let probs = tape.softmax(logits).unwrap();
        let total: f64 = tape.value(probs).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(s.decoder.step(&mut tape, &b, &ctx, &init, 7).is_err());
    }
}

#[test]
fn single_object_attention_reads_the_object() {
    let (s, p) = tiny(DecoderFamily::UpDown, 6, 2);
    let feats = features(1, 8);
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let (ctx, _) = s.start(&mut tape, &b, &feats).unwrap();
    let h1 = tape.constant_vec(&[0.3, -1.0, 2.0, 0.5]);
    let (alpha, attended) = s.decoder.attend(&mut tape, &ctx, h1).unwrap();
    assert_eq!(tape.value(alpha), &[1.0]);
    assert_eq!(tape.value(attended), feats[0].as_slice());
}

#[test]
fn forced_log_prob_matches_stepwise_sum() {
    for fam in FAMILIES {
        for seed in 0..5 {
            let (s, p) = tiny(fam, 6, seed);
            let feats = features(3, seed + 10);
            let emissions = [4, 0, 5, 3, EOS];
            let scored = s.score(&p, &feats, &emissions).unwrap();

            let mut tape = Tape::new();
            let b = p.bind_frozen(&mut tape);
            let (ctx, mut state) = s.start(&mut tape, &b, &feats).unwrap();
            let mut x = BOS;
            let mut total = 0.0;
            for &tok in &emissions {
                let (logits, next) = s.decoder.step(&mut tape, &b, &ctx, &state, x).unwrap();
                total += log_softmax_slice(tape.value(logits))[tok];
                state = next;
                x = tok;
            }
            assert!((scored.log_prob() - total).abs() <= 1e-12);
            assert_eq!(scored.trace.len(), 5);
        }
    }
}

#[test]
fn greedy_stops_immediately_when_eos_dominates() {
    let (s, mut p) = tiny(DecoderFamily::Fc, 6, 4);
    p.get_mut("dec.out.b").unwrap().data_mut()[EOS] = 1e3;
    let r = s.greedy_decode(&p, &features(3, 0), 10).unwrap();
    assert!(r.words.is_empty() && r.ended);
    assert_eq!(r.trace.len(), 1);
    assert_eq!(r.log_probs.len(), 1);
}

#[test]
fn greedy_is_deterministic_and_locally_maximal() {
    for fam in FAMILIES {
        for seed in 0..5 {
            let (s, p) = tiny(fam, 6, seed);
            let feats = features(4, seed);
            let a = s.greedy_decode(&p, &feats, 8).unwrap();
            assert_eq!(a, s.greedy_decode(&p, &feats, 8).unwrap());
            assert_eq!(a.trace.len(), a.words.len() + 1);
            let em = a.emissions();
            let mut tape = Tape::new();
            let b = p.bind_frozen(&mut tape);
            let (ctx, mut state) = s.start(&mut tape, &b, &feats).unwrap();
            let mut x = BOS;
            for (tau, &tok) in em.iter().enumerate() {
                let (logits, next) = s.decoder.step(&mut tape, &b, &ctx, &state, x).unwrap();
                let lp = log_softmax_slice(tape.value(logits));
                assert_eq!(lp[tok], a.log_probs[tau]);
                assert!(lp.iter().all(|&l| l <= lp[tok]));
                state = next;
                x = tok;
            }
        }
    }
}

#[test]
fn sampling_a_degenerate_distribution_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let lp = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
    for _ in 0..1000 {
        assert_eq!(sample_index(&lp, &mut rng), 1);
    }
}

#[test]
fn sampling_frequencies_match_probabilities() {
    let probs = [0.2, 0.5, 0.3];
    let lp: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[sample_index(&lp, &mut rng)] += 1;
    }
    for (c, p) in counts.iter().zip(probs) {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn sampled_log_probs_replay_exactly() {
    for fam in FAMILIES {
        let (s, p) = tiny(fam, 6, 21);
        let feats = features(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r = s.sample_decode(&p, &feats, 6, &mut rng).unwrap();
            assert!(r.sampled);
            let replay = s.score(&p, &feats, &r.emissions()).unwrap();
            assert!((r.log_prob() - replay.log_prob()).abs() <= 1e-12);
            assert_eq!(r.trace, replay.trace);
        }
    }
}

#[test]
fn beam_width_one_is_greedy() {
    for fam in FAMILIES {
        for seed in 0..10 {
            let (s, p) = tiny(fam, 6, seed);
            let feats = features(3, seed + 100);
            let g = s.greedy_decode(&p, &feats, 7).unwrap();
            let b = s.beam_search(&p, &feats, 7, 1).unwrap();
            assert_eq!(b.words, g.words);
            assert_eq!(b.ended, g.ended);
            assert_eq!(b.score, g.log_prob());
        }
    }
}

#[test]
fn enumeration_covers_every_caption() {
    let all = enumerate_emissions(4, 3);
    assert_eq!(all.len(), 1 + 3 + 9 + 27);
    let mut sorted = all.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), all.len());
}

#[test]
fn wide_beam_finds_the_enumerated_argmax() {
    for fam in FAMILIES {
        for seed in 0..10 {
            let (s, p) = tiny(fam, 4, seed);
            let feats = features(3, seed);
            let mut best = (f64::NEG_INFINITY, Vec::new());
            let mut mass = 0.0;
            for em in enumerate_emissions(4, 3) {
                let lp = s.score(&p, &feats, &em).unwrap().log_prob();
                mass += lp.exp();
                if lp > best.0 {
                    best = (lp, em);
                }
            }
            assert!((mass - 1.0).abs() < 1e-12);
            let b = s.beam_search(&p, &feats, 3, 64).unwrap();
            let mut em = b.words.clone();
            if b.ended {
                em.push(EOS);
            }
            assert_eq!(em, best.1);
            assert!((b.score - best.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn beam_pool_is_ranked() {
    let (s, p) = tiny(DecoderFamily::UpDown, 6, 3);
    let mut tape = Tape::new();
    let b = p.bind_frozen(&mut tape);
    let (ctx, init) = s.start(&mut tape, &b, &features(3, 3)).unwrap();
    let pool = beam_search(&s.decoder, &mut tape, &b, &ctx, init, 8, 5).unwrap();
    assert!(!pool.is_empty());
    assert!(pool.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(beam_search(&s.decoder, &mut tape, &b, &ctx, State::zeros(&mut Tape::new(), 1, 4), 8, 0).is_err());
}

#[test]
fn student_copies_teacher_decoder() {
    let s = Student::new(DecoderFamily::Fc, dims(6), false);
    let teacher_like = ParamSet::init(&s.decoder.specs(), 9);
    let p = s.init_from_teacher(&teacher_like, 1).unwrap();
    for (name, t) in teacher_like.iter() {
        assert_eq!(p.get(name).unwrap(), t);
    }
    assert!(p.contains("state.l0.fc1.w"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn wider_beams_never_score_worse(seed in 0u64..1000, w in 1usize..6, extra in 1usize..6) {
        let fam = FAMILIES[(seed % 2) as usize];
        let (s, p) = tiny(fam, 5, seed);
        let feats = features(3, seed);
        let narrow = s.beam_search(&p, &feats, 4, w).unwrap();
        let wide = s.beam_search(&p, &feats, 4, w + extra).unwrap();
        prop_assert!(narrow.score <= wide.score);
    }

    #[test]
    fn rollout_bookkeeping(seed in 0u64..1000) {
        let fam = FAMILIES[(seed % 2) as usize];
        let (s, p) = tiny(fam, 6, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = s.sample_decode(&p, &features(2, seed), 5, &mut rng).unwrap();
        prop_assert_eq!(r.trace.len(), r.words.len() + 1);
        prop_assert_eq!(r.log_probs.len(), r.words.len() + usize::from(r.ended));
        prop_assert!(r.words.len() <= 5);
        prop_assert!(r.log_probs.iter().all(|&l| l <= 0.0));
    }
}
