use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{contract, dim_err, Result};

/// Shape and initialization scale of one named parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            fan_in,
        }
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draws every parameter from `uniform(-a, a)` with `a = 1/sqrt(fan_in)`.
    ///
    /// Values are drawn in the order of `specs`, so identical specs and seed
    /// give bit-identical parameters.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Self::new();
        for spec in specs {
            let a = 1.0 / (spec.fan_in.max(1) as f64).sqrt();
            let n: usize = spec.shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
            let t = Tensor::new(spec.shape.clone(), data).expect("spec shape is positive");
            set.tensors.insert(spec.name.clone(), t);
        }
        set
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Copies every parameter whose name starts with `prefix` from `other`.
    pub fn copy_prefix_from(&mut self, other: &ParamSet, prefix: &str) -> usize {
        let mut n = 0;
        for (name, t) in other.iter().filter(|(n, _)| n.starts_with(prefix)) {
            self.tensors.insert(name.clone(), t.clone());
            n += 1;
        }
        n
    }

    /// Verifies that the set holds exactly the given specs' names and shapes.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        for s in specs {
            match self.get(&s.name) {
                None => return contract(format!("missing parameter {}", s.name)),
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return dim_err(
                        "parameters",
                        format!("{} has shape {:?}, expected {:?}", s.name, t.shape(), s.shape),
                    )
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Records every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t)))
            .collect();
        Bound { vars }
    }

    /// Records every parameter as a constant (frozen) input on `tape`.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = tape
                    .constant(t.shape(), t.data().to_vec())
                    .expect("parameter shapes are valid");
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Plain gradient step `p -= lr * g` on every parameter that has a
    /// gradient entry.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (name, g) in grads.iter() {
            if let Some(t) = self.tensors.get_mut(name) {
                t.data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(p, d)| *p -= lr * d);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Order-sensitive 64-bit FNV-1a digest of names, shapes and value bits.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in &self.tensors {
            eat(name.as_bytes());
            for d in t.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Parameter names bound to leaves of one tape.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Associates names with leaves that already exist on a tape.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| crate::Error::Contract(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Reads the accumulated gradients for every bound parameter; parameters
    /// the root did not reach get zeros.
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        let map = self
            .vars
            .iter()
            .map(|(name, &v)| {
                let g = tape
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.numel(v)]);
                (name.clone(), g)
            })
            .collect();
        Gradients(map)
    }
}

/// Gradient buffers keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Vec<f64>>);

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self += scale * other`, inserting missing entries.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in &other.0 {
            let buf = self
                .0
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            buf.iter_mut().zip(g).for_each(|(b, x)| *b += scale * x);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.values_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.0.retain(|k, _| keep(k));
    }

    pub fn norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().flat_map(|g| g.iter()).all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest elementwise absolute difference; entries missing on one side
    /// count as zeros.
    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        let mut worst: f64 = 0.0;
        for (name, g) in &self.0 {
            match other.0.get(name) {
                Some(h) => {
                    for (a, b) in g.iter().zip(h) {
                        worst = worst.max((a - b).abs());
                    }
                }
                None => worst = worst.max(g.iter().fold(0.0, |m, x| m.max(x.abs()))),
            }
        }
        for (name, h) in &other.0 {
            if !self.0.contains_key(name) {
                worst = worst.max(h.iter().fold(0.0, |m, x| m.max(x.abs())));
            }
        }
        worst
    }
}
