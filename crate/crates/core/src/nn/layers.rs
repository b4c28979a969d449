use crate::autodiff::{Tape, Var};
use crate::error::{contract, dim_err, Result};

use super::{Bound, ParamSpec};

/// Affine map `W x + b`, with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    w: String,
    b: String,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(&self.w, &[self.out_dim, self.in_dim], self.in_dim),
            ParamSpec::new(&self.b, &[self.out_dim], self.in_dim),
        ]
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        if tape.numel(x) != self.in_dim {
            return dim_err(
                "linear",
                format!("input of length {} for in_dim {}", tape.numel(x), self.in_dim),
            );
        }
        let wx = tape.matmul(p.get(&self.w)?, x)?;
        tape.add(wx, p.get(&self.b)?)
    }
}

/// LSTM cell with gate blocks laid out as `[input, forget, cell, output]`
/// along the rows of `w_ih` (`4h × input`), `w_hh` (`4h × h`) and the single
/// coupled bias `b` (`4h`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_ih: String,
    w_hh: String,
    b: String,
}

impl LstmCell {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_ih: format!("{prefix}.w_ih"),
            w_hh: format!("{prefix}.w_hh"),
            b: format!("{prefix}.b"),
        }
    }

    pub fn bias_name(&self) -> &str {
        &self.b
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let (h, i) = (self.hidden_dim, self.input_dim);
        vec![
            ParamSpec::new(&self.w_ih, &[4 * h, i], i + h),
            ParamSpec::new(&self.w_hh, &[4 * h, h], i + h),
            ParamSpec::new(&self.b, &[4 * h], i + h),
        ]
    }

    /// One step: returns `(h', c')`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        if tape.numel(x) != self.input_dim || tape.numel(h) != hd || tape.numel(c) != hd {
            return dim_err(
                "lstm_step",
                format!(
                    "x {}, h {}, c {} for cell ({} -> {hd})",
                    tape.numel(x),
                    tape.numel(h),
                    tape.numel(c),
                    self.input_dim
                ),
            );
        }
        let gx = tape.matmul(p.get(&self.w_ih)?, x)?;
        let gh = tape.matmul(p.get(&self.w_hh)?, h)?;
        let pre = tape.add(gx, gh)?;
        let pre = tape.add(pre, p.get(&self.b)?)?;
        let i = tape.slice(pre, 0, hd)?;
        let f = tape.slice(pre, hd, hd)?;
        let g = tape.slice(pre, 2 * hd, hd)?;
        let o = tape.slice(pre, 3 * hd, hd)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}

/// Word embedding table `vocab × dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedding {
    pub vocab_size: usize,
    pub dim: usize,
    w: String,
}

impl Embedding {
    pub fn new(prefix: &str, vocab_size: usize, dim: usize) -> Self {
        Self {
            vocab_size,
            dim,
            w: format!("{prefix}.w"),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::new(&self.w, &[self.vocab_size, self.dim], self.dim)]
    }

    pub fn lookup(&self, tape: &mut Tape, p: &Bound, token: usize) -> Result<Var> {
        if token >= self.vocab_size {
            return contract(format!(
                "token id {token} outside vocabulary of {}",
                self.vocab_size
            ));
        }
        tape.row(p.get(&self.w)?, token)
    }
}

/// Dot-product attention over object features: `score_j = <h, f(v_j)>`,
/// weights are the softmax of the scores over objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionHead {
    pub proj: Linear,
}

impl AttentionHead {
    pub fn new(prefix: &str, feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            proj: Linear::new(&format!("{prefix}.proj"), feature_dim, hidden_dim),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.proj.specs()
    }

    /// `f(v_j)` for every object; independent of the query, so callers
    /// compute it once per scene.
    pub fn project(&self, tape: &mut Tape, p: &Bound, objects: &[Var]) -> Result<Vec<Var>> {
        objects.iter().map(|&v| self.proj.forward(tape, p, v)).collect()
    }

    /// Attention weights over objects from already projected features.
    pub fn weights(&self, tape: &mut Tape, h: Var, projected: &[Var]) -> Result<Var> {
        if projected.is_empty() {
            return contract("attention over zero objects");
        }
        let scores = projected
            .iter()
            .map(|&f| tape.dot(h, f))
            .collect::<Result<Vec<_>>>()?;
        let scores = tape.concat(&scores)?;
        tape.softmax(scores)
    }

    /// Projects `objects` and returns the attention weights `α` (length K).
    pub fn attend(&self, tape: &mut Tape, p: &Bound, h: Var, objects: &[Var]) -> Result<Var> {
        if objects.is_empty() {
            return contract("attention over zero objects");
        }
        let projected = self.project(tape, p, objects)?;
        self.weights(tape, h, &projected)
    }
}
