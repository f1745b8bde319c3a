//! Recorded computation graph with reverse-mode gradients.

use super::ops;
use super::Tensor;
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: Var, kernel: Var, bias: Var, stride: usize },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Relu(Var),
    Tanh(Var),
    AttentionPool { h: Var, scores: Var, weights: Tensor },
    Softmax(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    Nll { probs: Var, labels: Vec<usize>, floor: f64 },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow { matrix: Var, row: Var },
    Reshape(Var),
    SumSquares(Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A forward pass recorded node by node.
///
/// In recording mode every op keeps what its backward needs; an inference
/// graph only keeps values and refuses [`Graph::backward`].
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
    clamped: usize,
}

/// Gradients indexed by [`Var`]; missing entries are zero.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    /// Gradient w.r.t. `v`, a zero tensor when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            clamped: 0,
        }
    }

    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of probabilities clamped by [`Graph::nll`] so far.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Attention weights saved by an attention-pool node.
    pub fn attention_weights(&self, v: Var) -> Option<&Tensor> {
        match &self.nodes[v.0].op {
            Op::AttentionPool { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let y = ops::conv1d_forward(self.value(input), self.value(kernel), self.value(bias), stride)?;
        self.push(y, Op::Conv1d { input, kernel, bias, stride }, "conv1d")
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = ops::linear_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        self.push(y, Op::Linear { input, weight, bias }, "linear")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let y = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| a.max(0.0)).collect())?;
        self.push(y, Op::Relu(x), "relu")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let y = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a.tanh()).collect())?;
        self.push(y, Op::Tanh(x), "tanh")
    }

    /// Returns the pooled context; weights are kept on the node.
    pub fn attention_pool(&mut self, h: Var, scores: Var) -> Result<Var> {
        let (ctx, weights) = ops::attention_pool_forward(self.value(h), self.value(scores))?;
        if !self.recording {
            // weights stay queryable in inference graphs too
            self.nodes.push(Node {
                value: ctx,
                op: Op::AttentionPool { h, scores, weights },
            });
            return Ok(Var(self.nodes.len() - 1));
        }
        self.push(ctx, Op::AttentionPool { h, scores, weights }, "attention_pool")
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax(self.value(x))?;
        self.push(y, Op::Softmax(x), "softmax")
    }

    /// Mean cross-entropy of row-wise softmax(logits) against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        check_labels(z, labels)?;
        let probs = ops::softmax(z)?;
        let k = z.shape()[1];
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        debug_assert_eq!(probs.numel(), labels.len() * k);
        let loss = loss / labels.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            "cross_entropy",
        )
    }

    /// Mean of `-ln(max(p[i, labels[i]], floor))` over rows of `probs`.
    /// Rows whose probability falls below `floor` are counted in
    /// [`Graph::clamped_count`] and contribute no gradient.
    pub fn nll(&mut self, probs: Var, labels: &[usize], floor: f64) -> Result<Var> {
        let p = self.value(probs);
        check_labels(p, labels)?;
        let mut loss = 0.0;
        let mut clamped = 0;
        for (i, &y) in labels.iter().enumerate() {
            let v = p.row(i)[y];
            if v <= floor {
                clamped += 1;
            }
            loss -= v.max(floor).ln();
        }
        self.clamped += clamped;
        let loss = loss / labels.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::Nll { probs, labels: labels.to_vec(), floor },
            "nll",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = zip_same(self.value(a), self.value(b), |x, y| x + y, "add")?;
        self.push(y, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = zip_same(self.value(a), self.value(b), |x, y| x * y, "mul")?;
        self.push(y, Op::Mul(a, b), "mul")
    }

    /// `matrix[i, :] + row` for every leading index `i`.
    pub fn add_row(&mut self, matrix: Var, row: Var) -> Result<Var> {
        let (m, r) = (self.value(matrix), self.value(row));
        let w = r.numel();
        if r.shape().len() != 1 || m.shape().last() != Some(&w) {
            return Err(Error::Shape(format!(
                "add_row: matrix {:?} and row {:?} do not align",
                m.shape(),
                r.shape()
            )));
        }
        let mut out = m.clone();
        for chunk in out.data_mut().chunks_mut(w) {
            for (o, v) in chunk.iter_mut().zip(r.data()) {
                *o += v;
            }
        }
        self.push(out, Op::AddRow { matrix, row }, "add_row")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        self.push(y, Op::Reshape(x), "reshape")
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum_squares());
        self.push(y, Op::SumSquares(x), "sum_squares")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let v = self.value(x);
        let y = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * factor).collect())?;
        self.push(y, Op::Scale(x, factor), "scale")
    }

    /// Reverse pass from the scalar `output` (seed gradient 1).
    pub fn backward(&self, output: Var) -> Result<Grads> {
        self.backward_with(output, Tensor::scalar(1.0))
    }

    /// Reverse pass seeded with `grad_output` at `output`.
    pub fn backward_with(&self, output: Var, grad_output: Tensor) -> Result<Grads> {
        if !self.recording || self.nodes.is_empty() {
            return Err(Error::NotRecorded);
        }
        if grad_output.numel() != self.value(output).numel() {
            return Err(Error::Shape(format!(
                "output gradient has {} values, output has {}",
                grad_output.numel(),
                self.value(output).numel()
            )));
        }
        let grad_output = grad_output.reshape(self.value(output).shape())?;
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(grad_output);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    // leaves keep their gradient for the caller
                    grads[i] = Some(g);
                }
                Op::Conv1d { input, kernel, bias, stride } => {
                    let (gx, gk, gb) =
                        ops::conv1d_backward(self.value(*input), self.value(*kernel), *stride, &g);
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *kernel, gk);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Linear { input, weight, bias } => {
                    let (gx, gw, gb) = ops::linear_backward(self.value(*input), self.value(*weight), &g);
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *weight, gw);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&a, &gv)| if a > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), d)?);
                }
                Op::Tanh(x) => {
                    let d = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(node.value.shape().to_vec(), d)?);
                }
                Op::AttentionPool { h, scores, weights } => {
                    let (gh, gs) = ops::attention_pool_backward(self.value(*h), weights, &g);
                    accumulate(&mut grads, *h, gh);
                    accumulate(&mut grads, *scores, gs);
                }
                Op::Softmax(x) => {
                    accumulate(&mut grads, *x, ops::softmax_backward(&node.value, &g));
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let scale = g.item() / labels.len() as f64;
                    let k = probs.shape()[1];
                    let mut d = probs.data().to_vec();
                    for (i, &y) in labels.iter().enumerate() {
                        d[i * k + y] -= 1.0;
                    }
                    d.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads, *logits, Tensor::new(probs.shape().to_vec(), d)?);
                }
                Op::Nll { probs, labels, floor } => {
                    let p = self.value(*probs);
                    let k = p.shape()[1];
                    let scale = g.item() / labels.len() as f64;
                    let mut d = vec![0.0; p.numel()];
                    for (i, &y) in labels.iter().enumerate() {
                        let v = p.data()[i * k + y];
                        if v > *floor {
                            d[i * k + y] = -scale / v;
                        }
                    }
                    accumulate(&mut grads, *probs, Tensor::new(p.shape().to_vec(), d)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_same(&g, self.value(*b), |x, y| x * y, "mul")?;
                    let gb = zip_same(&g, self.value(*a), |x, y| x * y, "mul")?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow { matrix, row } => {
                    let w = self.value(*row).numel();
                    let mut gr = vec![0.0; w];
                    for chunk in g.data().chunks(w) {
                        for (a, v) in gr.iter_mut().zip(chunk) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads, *row, Tensor::vector(gr));
                    accumulate(&mut grads, *matrix, g);
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.reshape(&shape)?);
                }
                Op::SumSquares(x) => {
                    let s = g.item();
                    let xv = self.value(*x);
                    let d = xv.data().iter().map(|v| 2.0 * v * s).collect();
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), d)?);
                }
                Op::Scale(x, f) => {
                    let d = g.data().iter().map(|v| v * f).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), d)?);
                }
            }
        }
        Ok(Grads {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip_same(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64, what: &str) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn check_labels(t: &Tensor, labels: &[usize]) -> Result<()> {
    let (rows, k) = ops::dims2(t, "class scores")?;
    if rows != labels.len() {
        return Err(Error::Shape(format!("{rows} score rows but {} labels", labels.len())));
    }
    if rows == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Shape(format!("label {bad} outside [0, {k})")));
    }
    Ok(())
}
