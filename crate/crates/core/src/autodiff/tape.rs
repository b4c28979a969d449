use crate::error::{contract, dim_err, Result};

use super::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    // Either side may be a one-element tensor broadcast over the other.
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
    },
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    MaxElementwise(Var, Var),
    MaxAll {
        x: Var,
        argmax: usize,
    },
    Softmax {
        x: Var,
        group: usize,
    },
    LogSoftmax {
        x: Var,
        group: usize,
    },
    SquaredL2(Var, Var),
    Dot(Var, Var),
    Row {
        table: Var,
        start: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of a computation, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are only ever pushed after their inputs, so the node order is a
/// topological order. Leaves created with [`Tape::constant`] never receive
/// gradients.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Records a differentiable input from raw parts.
    pub fn leaf_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true))
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if shape.is_empty() || numel(shape) != data.len() || data.is_empty() {
            return dim_err(
                "constant",
                format!("shape {shape:?} with {} values", data.len()),
            );
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn constant_vec(&mut self, data: &[f64]) -> Var {
        self.push(vec![data.len()], data.to_vec(), Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.push(vec![1], vec![x], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.node(v).value.len()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node is well formed")
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- linear algebra ------------------------------------------------

    /// Matrix product of `a` (`m×k`) and `b` (`k×n`, or a length-`k` vector
    /// giving a length-`m` vector).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() > 2 {
            return dim_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n, out_shape) = if sb.len() == 1 {
            (sb[0], 1, vec![m])
        } else {
            (sb[0], sb[1], vec![m, sb[1]])
        };
        if k != kb {
            return dim_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (o, row) in out.iter_mut().zip(av.chunks_exact(k)) {
                *o = dot(row, bv);
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip != 0.0 {
                        axpy(aip, &bv[p * n..(p + 1) * n], orow);
                    }
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out_shape, out, Op::MatMul { a, b, m, k, n }, rg))
    }

    // ---- elementwise ---------------------------------------------------

    fn binary(&mut self, kind: BinKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (la, lb) = (self.numel(a), self.numel(b));
        let shape = if self.shape(a) == self.shape(b) || lb == 1 {
            self.shape(a).to_vec()
        } else if la == 1 {
            self.shape(b).to_vec()
        } else {
            return dim_err(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            );
        };
        let n = la.max(lb);
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let out: Vec<f64> = if la == lb {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else if lb == 1 {
            av.iter().map(|&x| f(x, bv[0])).collect()
        } else {
            bv.iter().map(|&y| f(av[0], y)).collect()
        };
        debug_assert_eq!(out.len(), n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, Op::Binary { kind, a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b, "mul")
    }

    /// `x * c` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.node(x).value.iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, Op::Scale(x, c), rg)
    }

    /// `x + c` for a constant `c`.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out = self.node(x).value.iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, Op::Shift(x), rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.node(x).value.iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, op, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Concatenates vectors (any shapes are flattened) into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat", "no inputs");
        }
        let total: usize = parts.iter().map(|&p| self.numel(p)).sum();
        let mut out = Vec::with_capacity(total);
        for &p in parts {
            out.extend_from_slice(&self.node(p).value);
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![total], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Contiguous sub-vector `x[start..start + len]` of the flattened input.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.numel(x);
        if len == 0 || start + len > n {
            return dim_err("slice", format!("[{start}..{}] of {n}", start + len));
        }
        let out = self.node(x).value[start..start + len].to_vec();
        let rg = self.rg(x);
        Ok(self.push(vec![len], out, Op::Slice { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.node(x).value.iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.node(x).value;
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Mean(x), rg)
    }

    /// Elementwise maximum. The gradient goes to `a` wherever `a >= b`.
    pub fn max_elementwise(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(
                "max_elementwise",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            );
        }
        let out = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, Op::MaxElementwise(a, b), rg))
    }

    /// Largest element as a one-element tensor; ties go to the lowest index.
    pub fn max_all(&mut self, x: Var) -> Var {
        let v = &self.node(x).value;
        let mut argmax = 0;
        for (i, &e) in v.iter().enumerate() {
            if e > v[argmax] {
                argmax = i;
            }
        }
        let m = v[argmax];
        let rg = self.rg(x);
        self.push(vec![1], vec![m], Op::MaxAll { x, argmax }, rg)
    }

    fn last_axis(&self, x: Var, op: &'static str) -> Result<usize> {
        match self.shape(x).last() {
            Some(&g) if g > 0 => Ok(g),
            _ => dim_err(op, "empty axis"),
        }
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let group = self.last_axis(x, "softmax")?;
        let out = self
            .node(x)
            .value
            .chunks_exact(group)
            .flat_map(softmax_slice)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Softmax { x, group }, rg))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let group = self.last_axis(x, "log_softmax")?;
        let out = self
            .node(x)
            .value
            .chunks_exact(group)
            .flat_map(log_softmax_slice)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::LogSoftmax { x, group }, rg))
    }

    /// `sum_i (a_i - b_i)^2`.
    pub fn squared_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(
                "squared_l2",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            );
        }
        let s = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![1], vec![s], Op::SquaredL2(a, b), rg))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.numel(a) != self.numel(b) {
            return dim_err("dot", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let s = dot(&self.node(a).value, &self.node(b).value);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![1], vec![s], Op::Dot(a, b), rg))
    }

    /// Row `index` of a 2-D table (embedding lookup).
    pub fn row(&mut self, table: Var, index: usize) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 || index >= shape[0] {
            return dim_err("row", format!("row {index} of {shape:?}"));
        }
        let w = shape[1];
        let start = index * w;
        let out = self.node(table).value[start..start + w].to_vec();
        let rg = self.rg(table);
        Ok(self.push(vec![w], out, Op::Row { table, start }, rg))
    }

    /// Element `index` of the flattened input as a one-element tensor.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        self.slice(x, index, 1)
    }

    // ---- reverse pass --------------------------------------------------

    /// Back-propagates from the scalar `root`, accumulating into the `grad`
    /// buffers of every node that requires a gradient and is reachable from
    /// `root`. Calling it again without [`Tape::zero_grad`] accumulates.
    ///
    /// Returns the number of backward rules applied.
    pub fn backward(&mut self, root: Var) -> Result<usize> {
        if self.numel(root) != 1 {
            return contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            ));
        }
        if !self.rg(root) {
            return Ok(0);
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pass[root.0] = Some(vec![1.0]);
        let mut applied = 0;
        for i in (0..=root.0).rev() {
            let Some(g) = pass[i].take() else {
                continue;
            };
            self.apply_rule(i, &g, &mut pass);
            add_into(&mut self.nodes[i].grad, &g);
            applied += 1;
        }
        Ok(applied)
    }

    fn send(&self, pass: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if self.nodes[v.0].requires_grad {
            add_into(&mut pass[v.0], g);
        }
    }

    fn grad_buf<'p>(&self, pass: &'p mut [Option<Vec<f64>>], v: Var) -> Option<&'p mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.len();
        Some(pass[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn apply_rule(&self, i: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if self.rg(a) {
                    let bv = &self.nodes[b.0].value;
                    let ga = self.grad_buf(pass, a).expect("requires grad");
                    if n == 1 {
                        for (row, &gi) in ga.chunks_exact_mut(k).zip(g) {
                            if gi != 0.0 {
                                axpy(gi, bv, row);
                            }
                        }
                    } else {
                        for i in 0..m {
                            for p in 0..k {
                                ga[i * k + p] += dot(&g[i * n..(i + 1) * n], &bv[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                if self.rg(b) {
                    let av = &self.nodes[a.0].value;
                    let gb = self.grad_buf(pass, b).expect("requires grad");
                    if n == 1 {
                        for (row, &gi) in av.chunks_exact(k).zip(g) {
                            if gi != 0.0 {
                                axpy(gi, row, gb);
                            }
                        }
                    } else {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = av[i * k + p];
                                if aip != 0.0 {
                                    axpy(aip, &g[i * n..(i + 1) * n], &mut gb[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    }
                }
            }
            Op::Binary { kind, a, b } => {
                let (la, lb) = (self.numel(a), self.numel(b));
                let reduce = |full: Vec<f64>, len: usize| -> Vec<f64> {
                    if len == 1 && full.len() != 1 {
                        vec![full.iter().sum()]
                    } else {
                        full
                    }
                };
                let at = |v: &[f64], j: usize| if v.len() == 1 { v[0] } else { v[j] };
                if self.rg(a) {
                    let ga: Vec<f64> = match kind {
                        BinKind::Add | BinKind::Sub => g.to_vec(),
                        BinKind::Mul => {
                            let bv = &self.nodes[b.0].value;
                            g.iter().enumerate().map(|(j, &gj)| gj * at(bv, j)).collect()
                        }
                    };
                    self.send(pass, a, &reduce(ga, la));
                }
                if self.rg(b) {
                    let gb: Vec<f64> = match kind {
                        BinKind::Add => g.to_vec(),
                        BinKind::Sub => g.iter().map(|x| -x).collect(),
                        BinKind::Mul => {
                            let av = &self.nodes[a.0].value;
                            g.iter().enumerate().map(|(j, &gj)| gj * at(av, j)).collect()
                        }
                    };
                    self.send(pass, b, &reduce(gb, lb));
                }
            }
            Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.send(pass, x, &gx);
            }
            Op::Shift(x) => self.send(pass, x, g),
            Op::Tanh(x) => {
                let y = &self.nodes[i].value;
                let gx: Vec<f64> = g.iter().zip(y).map(|(gj, yj)| gj * (1.0 - yj * yj)).collect();
                self.send(pass, x, &gx);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                let gx: Vec<f64> = g.iter().zip(y).map(|(gj, yj)| gj * yj * (1.0 - yj)).collect();
                self.send(pass, x, &gx);
            }
            Op::Exp(x) => {
                let y = &self.nodes[i].value;
                let gx: Vec<f64> = g.iter().zip(y).map(|(gj, yj)| gj * yj).collect();
                self.send(pass, x, &gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.numel(p);
                    self.send(pass, p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                if let Some(gx) = self.grad_buf(pass, x) {
                    gx[start..start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.grad_buf(pass, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.grad_buf(pass, x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::MaxElementwise(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let mask: Vec<bool> = av.iter().zip(bv).map(|(x, y)| x >= y).collect();
                let ga: Vec<f64> = g.iter().zip(&mask).map(|(&gj, &m)| if m { gj } else { 0.0 }).collect();
                let gb: Vec<f64> = g.iter().zip(&mask).map(|(&gj, &m)| if m { 0.0 } else { gj }).collect();
                self.send(pass, a, &ga);
                self.send(pass, b, &gb);
            }
            Op::MaxAll { x, argmax } => {
                if let Some(gx) = self.grad_buf(pass, x) {
                    gx[argmax] += g[0];
                }
            }
            Op::Softmax { x, group } => {
                let y = &self.nodes[i].value;
                let mut gx = vec![0.0; y.len()];
                for ((gy, yy), out) in g
                    .chunks_exact(group)
                    .zip(y.chunks_exact(group))
                    .zip(gx.chunks_exact_mut(group))
                {
                    let s = dot(gy, yy);
                    for j in 0..group {
                        out[j] = yy[j] * (gy[j] - s);
                    }
                }
                self.send(pass, x, &gx);
            }
            Op::LogSoftmax { x, group } => {
                let y = &self.nodes[i].value;
                let mut gx = vec![0.0; y.len()];
                for ((gy, yy), out) in g
                    .chunks_exact(group)
                    .zip(y.chunks_exact(group))
                    .zip(gx.chunks_exact_mut(group))
                {
                    let s: f64 = gy.iter().sum();
                    for j in 0..group {
                        out[j] = gy[j] - yy[j].exp() * s;
                    }
                }
                self.send(pass, x, &gx);
            }
            Op::SquaredL2(a, b) => {
                let d: Vec<f64> = self.nodes[a.0]
                    .value
                    .iter()
                    .zip(&self.nodes[b.0].value)
                    .map(|(x, y)| 2.0 * g[0] * (x - y))
                    .collect();
                self.send(pass, a, &d);
                if self.rg(b) {
                    let nd: Vec<f64> = d.iter().map(|x| -x).collect();
                    self.send(pass, b, &nd);
                }
            }
            Op::Dot(a, b) => {
                if self.rg(a) {
                    let gb: Vec<f64> = self.nodes[b.0].value.iter().map(|v| v * g[0]).collect();
                    self.send(pass, a, &gb);
                }
                if self.rg(b) {
                    let ga: Vec<f64> = self.nodes[a.0].value.iter().map(|v| v * g[0]).collect();
                    self.send(pass, b, &ga);
                }
            }
            Op::Row { table, start } => {
                if let Some(gt) = self.grad_buf(pass, table) {
                    gt[start..start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += s);
                }
            }
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
        None => *slot = Some(g.to_vec()),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of a plain slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Numerically stable log-softmax of a plain slice.
pub fn log_softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
