//! Dense row-major `f64` tensors and a reverse-mode tape.
//!
//! The tape is an arena: every operation pushes a node and returns a [`Var`]
//! handle. Nodes whose inputs all lack gradients are stored as constants, so
//! only operations that can influence a parameter are replayed by
//! [`Tape::backward`]. A tape is meant to live for a single training step.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            values: vec![value],
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Builds an `n × d` matrix from row slices of equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims("from_rows", &[cols], &[r.len()]));
            }
            values.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1 && self.shape.len() <= 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.values[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dims(op, &self.shape, &[0, 0]));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// Raw kernels shared by the tape and by tape-free evaluation, so both paths
/// produce bitwise-identical values.
pub(crate) mod kernels {
    /// `out[m×n] = a[m×k] · b[k×n]`
    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let a_row = &a[i * k..(i + 1) * k];
            for (p, &a_ip) in a_row.iter().enumerate() {
                if a_ip == 0.0 {
                    continue;
                }
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(b_row) {
                    *o += a_ip * bv;
                }
            }
        }
        out
    }

    pub fn concat_cols(a: &[f64], ac: usize, b: &[f64], bc: usize, rows: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * (ac + bc));
        for i in 0..rows {
            out.extend_from_slice(&a[i * ac..(i + 1) * ac]);
            out.extend_from_slice(&b[i * bc..(i + 1) * bc]);
        }
        out
    }

    #[inline]
    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[inline]
    pub fn silu(x: f64) -> f64 {
        x * sigmoid(x)
    }

    #[inline]
    pub fn silu_grad(x: f64) -> f64 {
        let s = sigmoid(x);
        s * (1.0 + x * (1.0 - s))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise primitives. `Scale` multiplies by a constant; the rest are
/// unary (`Silu`, `Square`) or binary on equal shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Silu,
    Square,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Parameter,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Square(Var),
    ConcatCols(Var, Var),
    /// Mean over rows of `w_r · Σ_c (a−b)²`, divided by the column count.
    WeightedMeanSquared(Var, Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

impl Node {
    fn requires_grad(&self) -> bool {
        !matches!(self.op, Op::Constant)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes, constants included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of operations that backward will replay.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Constant | Op::Parameter))
            .count()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Parameter)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    fn record(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        if self.any_grad(inputs) {
            self.push(value, op)
        } else {
            self.push(value, Op::Constant)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).check_matrix("matmul")?;
        let (k2, n) = self.value(b).check_matrix("matmul")?;
        if k != k2 {
            return Err(Error::dims(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let out = kernels::matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.record(t, &[a, b], Op::MatMul(a, b)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).check_matrix("concat_cols")?;
        let (rb, cb) = self.value(b).check_matrix("concat_cols")?;
        if ra != rb {
            return Err(Error::dims(
                "concat_cols",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let out = kernels::concat_cols(self.value(a).values(), ca, self.value(b).values(), cb, ra);
        let t = Tensor::matrix(ra, ca + cb, out)?;
        Ok(self.record(t, &[a, b], Op::ConcatCols(a, b)))
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = |tape: &Self, b: Option<Var>| -> Result<Var> {
            let b = b.ok_or_else(|| Error::Contract(format!("{op:?} needs two operands")))?;
            if tape.value(a).shape() != tape.value(b).shape() {
                return Err(Error::dims(
                    "elementwise",
                    tape.value(a).shape(),
                    tape.value(b).shape(),
                ));
            }
            Ok(b)
        };
        let shape = self.value(a).shape().to_vec();
        match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => {
                let b = binary(self, b)?;
                let (x, y) = (self.value(a).values(), self.value(b).values());
                let out: Vec<f64> = match op {
                    Elementwise::Add => x.iter().zip(y).map(|(p, q)| p + q).collect(),
                    Elementwise::Sub => x.iter().zip(y).map(|(p, q)| p - q).collect(),
                    _ => x.iter().zip(y).map(|(p, q)| p * q).collect(),
                };
                let rec = match op {
                    Elementwise::Add => Op::Add(a, b),
                    Elementwise::Sub => Op::Sub(a, b),
                    _ => Op::Mul(a, b),
                };
                Ok(self.record(Tensor::new(shape, out)?, &[a, b], rec))
            }
            Elementwise::Scale(c) => {
                let out = self.value(a).values().iter().map(|v| v * c).collect();
                Ok(self.record(Tensor::new(shape, out)?, &[a], Op::Scale(a, c)))
            }
            Elementwise::Silu => {
                let out = self.value(a).values().iter().map(|&v| kernels::silu(v)).collect();
                Ok(self.record(Tensor::new(shape, out)?, &[a], Op::Silu(a)))
            }
            Elementwise::Square => {
                let out = self.value(a).values().iter().map(|v| v * v).collect();
                Ok(self.record(Tensor::new(shape, out)?, &[a], Op::Square(a)))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, a, Some(b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.elementwise(Elementwise::Scale(c), a, None)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Silu, a, None)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Square, a, None)
    }

    /// Mean of squared differences over all elements.
    pub fn mean_squared(&mut self, a: Var, b: Var) -> Result<Var> {
        let rows = self.value(a).rows();
        self.weighted_mean_squared(a, b, &vec![1.0; rows])
    }

    /// `(1 / (rows·cols)) · Σ_r w_r Σ_c (a_rc − b_rc)²`. With unit weights
    /// this is [`Tape::mean_squared`].
    pub fn weighted_mean_squared(&mut self, a: Var, b: Var, row_weights: &[f64]) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dims("mean_squared", sa, sb));
        }
        let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
        if row_weights.len() != rows {
            return Err(Error::dims("mean_squared", &[rows], &[row_weights.len()]));
        }
        if rows * cols == 0 {
            return Err(Error::Contract("mean_squared of an empty tensor".into()));
        }
        let (x, y) = (self.value(a).values(), self.value(b).values());
        let mut total = 0.0;
        for r in 0..rows {
            let mut s = 0.0;
            for c in r * cols..(r + 1) * cols {
                let d = x[c] - y[c];
                s += d * d;
            }
            total += row_weights[r] * s;
        }
        let out = Tensor::scalar(total / (rows * cols) as f64);
        Ok(self.record(
            out,
            &[a, b],
            Op::WeightedMeanSquared(a, b, row_weights.to_vec()),
        ))
    }

    /// Replays the tape from `loss` back to its leaves. Gradients add onto
    /// whatever the nodes already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        // Gradients flowing in this pass, separate from accumulated ones.
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Parameter => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k) = (av.shape[0], av.shape[1]);
                    let n = bv.shape[1];
                    if self.requires_grad(*a) {
                        // dA = dC · Bᵀ
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let g_row = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let b_row = &bv.values[p * n..(p + 1) * n];
                                da[i * k + p] =
                                    g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                            }
                        }
                        accumulate(&mut pending, *a, da);
                    }
                    if self.requires_grad(*b) {
                        // dB = Aᵀ · dC
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let g_row = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let a_ip = av.values[i * k + p];
                                if a_ip == 0.0 {
                                    continue;
                                }
                                let db_row = &mut db[p * n..(p + 1) * n];
                                for (d, gv) in db_row.iter_mut().zip(g_row) {
                                    *d += a_ip * gv;
                                }
                            }
                        }
                        accumulate(&mut pending, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires_grad(a) {
                        accumulate(&mut pending, a, g.clone());
                    }
                    if self.requires_grad(b) {
                        accumulate(&mut pending, b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires_grad(a) {
                        accumulate(&mut pending, a, g.clone());
                    }
                    if self.requires_grad(b) {
                        accumulate(&mut pending, b, g.iter().map(|v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires_grad(a) {
                        let y = &self.nodes[b.0].value.values;
                        accumulate(&mut pending, a, g.iter().zip(y).map(|(p, q)| p * q).collect());
                    }
                    if self.requires_grad(b) {
                        let x = &self.nodes[a.0].value.values;
                        accumulate(&mut pending, b, g.iter().zip(x).map(|(p, q)| p * q).collect());
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    accumulate(&mut pending, a, g.iter().map(|v| v * c).collect());
                }
                Op::Silu(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].value.values;
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(gv, &xv)| gv * kernels::silu_grad(xv))
                        .collect();
                    accumulate(&mut pending, a, d);
                }
                Op::Square(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].value.values;
                    let d = g.iter().zip(x).map(|(gv, xv)| 2.0 * gv * xv).collect();
                    accumulate(&mut pending, a, d);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let rows = self.nodes[a.0].value.shape[0];
                    let ca = self.nodes[a.0].value.shape[1];
                    let cb = self.nodes[b.0].value.shape[1];
                    let w = ca + cb;
                    if self.requires_grad(a) {
                        let d = (0..rows)
                            .flat_map(|i| g[i * w..i * w + ca].iter().copied())
                            .collect();
                        accumulate(&mut pending, a, d);
                    }
                    if self.requires_grad(b) {
                        let d = (0..rows)
                            .flat_map(|i| g[i * w + ca..(i + 1) * w].iter().copied())
                            .collect();
                        accumulate(&mut pending, b, d);
                    }
                }
                Op::WeightedMeanSquared(a, b, w) => {
                    let (a, b) = (*a, *b);
                    let av = &self.nodes[a.0].value;
                    let (rows, cols) = (av.rows(), av.cols());
                    let x = &av.values;
                    let y = &self.nodes[b.0].value.values;
                    let norm = 2.0 * g[0] / (rows * cols) as f64;
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let f = norm * w[r];
                        for c in r * cols..(r + 1) * cols {
                            da[c] = f * (x[c] - y[c]);
                        }
                    }
                    if self.requires_grad(b) {
                        accumulate(&mut pending, b, da.iter().map(|v| -v).collect());
                    }
                    if self.requires_grad(a) {
                        accumulate(&mut pending, a, da);
                    }
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.value.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(s, v)| *s += v),
                None => node.value.grad = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(pending: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut pending[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(s, x)| *s += x),
        slot @ None => *slot = Some(g),
    }
}
