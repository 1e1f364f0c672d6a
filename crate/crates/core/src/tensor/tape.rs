use super::ops;
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var),
    Broadcast(Var),
    SumTo(Var),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Transpose(a) | LeakyRelu(a, _) | Tanh(a) | Exp(a)
            | Square(a) | Sqrt(a) | Sum(a) | Mean(a) | SumAxis(a) | Broadcast(a)
            | SumTo(a) => vec![*a],
            Concat(parts, _) => parts.clone(),
            Slice { input, .. } => vec![*input],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only record of tensor operations.
///
/// Node inputs always refer to earlier nodes, so the node order is a
/// topological order. A tape is owned by one thread; values leave it as
/// plain [`Tensor`]s.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Record an input. Leaves are differentiable if named in `backward`'s
    /// `wrt` list; otherwise they act as constants.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip(
        &mut self,
        name: &'static str,
        op: Op<T>,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let value = ops::zip(name, self.value(a), self.value(b), f)?;
        self.push(name, op, value)
    }

    fn unary(&mut self, name: &'static str, op: Op<T>, a: Var, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(name, op, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Elementwise `a / b`, taken to be zero where `b == 0`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", Op::Div(a, b), a, b, ops::div_or_zero)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", Op::Neg(a), a, |x| -x)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("scale", Op::Scale(a, c), a, |x| x * c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        self.push("matmul", Op::MatMul(a, b), value)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = ops::transpose(self.value(a))?;
        self.push("transpose", Op::Transpose(a), value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let value = ops::leaky_relu(self.value(a), slope);
        self.push("leaky_relu", Op::LeakyRelu(a, slope), value)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", Op::Tanh(a), a, |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", Op::Exp(a), a, |x| x.exp())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", Op::Square(a), a, |x| x * x)
    }

    /// Elementwise square root; negative inputs produce a `NonFinite` error.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", Op::Sqrt(a), a, |x| x.sqrt())
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push("sum", Op::Sum(a), Tensor::scalar(s))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a).mean();
        self.push("mean", Op::Mean(a), Tensor::scalar(m))
    }

    /// Sum over one axis, keeping it with size 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = ops::sum_axis(self.value(a), axis)?;
        self.push("sum_axis", Op::SumAxis(a), value)
    }

    /// Repeat size-1 dimensions (or a single element) to `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let value = ops::broadcast(self.value(a), shape)?;
        self.push("broadcast", Op::Broadcast(a), value)
    }

    /// Sum broadcast dimensions back down to `shape`.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let value = ops::sum_to(self.value(a), shape)?;
        self.push("sum_to", Op::SumTo(a), value)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = ops::concat(&values, axis)?;
        self.push("concat", Op::Concat(parts.to_vec(), axis), value)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let value = ops::slice(self.value(a), axis, start, end)?;
        self.push("slice", Op::Slice { input: a, axis, start }, value)
    }

    /// `x · w + b` with `b` of shape `[1, n]` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let shape = self.shape(xw).to_vec();
        let bb = self.broadcast(b, &shape)?;
        self.add(xw, bb)
    }

    /// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
    ///
    /// The gradient computation is recorded on this tape, so each returned
    /// [`Var`] can itself be differentiated. Entries of `wrt` that do not
    /// influence `output` get a zero gradient.
    pub fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let out_shape = self.shape(output).to_vec();
        if out_shape != [1] {
            return Err(TensorError::NotScalar(out_shape));
        }
        let n = output.0 + 1;

        // Only nodes on a path from some target to the output need gradients.
        let mut relevant = vec![false; n];
        for w in wrt {
            if w.0 < n {
                relevant[w.0] = true;
            }
        }
        for i in 0..n {
            if !relevant[i] {
                relevant[i] = self.nodes[i].op.inputs().iter().any(|j| relevant[j.0]);
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        if relevant[output.0] {
            grads[output.0] = Some(self.leaf(Tensor::ones(vec![1])));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.input_grads(Var(i), &op, g, &relevant)? {
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Tensor::zeros(self.shape(w).to_vec());
                    Ok(self.leaf(zeros))
                }
            })
            .collect()
    }

    /// Gradient values of `output` with respect to `wrt`, detached from the tape.
    pub fn gradients(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        let g = self.backward(output, wrt)?;
        Ok(g.into_iter().map(|v| self.value(v).clone()).collect())
    }

    /// Vector-Jacobian products of node `out` (with upstream gradient `g`)
    /// for each relevant input, expressed as tape operations.
    fn input_grads(
        &mut self,
        out: Var,
        op: &Op<T>,
        g: Var,
        relevant: &[bool],
    ) -> Result<Vec<(Var, Var)>> {
        let want = |v: &Var| relevant[v.0];
        let mut res = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(&a) {
                    res.push((a, g));
                }
                if want(&b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(&a) {
                    res.push((a, g));
                }
                if want(&b) {
                    res.push((b, self.neg(g)?));
                }
            }
            Op::Mul(a, b) => {
                if want(&a) {
                    res.push((a, self.mul(g, b)?));
                }
                if want(&b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Op::Div(a, b) => {
                if want(&a) {
                    res.push((a, self.div(g, b)?));
                }
                if want(&b) {
                    // d(a/b)/db = -(a/b)/b
                    let go = self.mul(g, out)?;
                    let q = self.div(go, b)?;
                    res.push((b, self.neg(q)?));
                }
            }
            Op::Neg(a) => {
                if want(&a) {
                    res.push((a, self.neg(g)?));
                }
            }
            Op::Scale(a, c) => {
                if want(&a) {
                    res.push((a, self.scale(g, c)?));
                }
            }
            Op::MatMul(a, b) => {
                if want(&a) {
                    let bt = self.transpose(b)?;
                    res.push((a, self.matmul(g, bt)?));
                }
                if want(&b) {
                    let at = self.transpose(a)?;
                    res.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => {
                if want(&a) {
                    res.push((a, self.transpose(g)?));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if want(&a) {
                    // Piecewise constant slope: second derivative is zero a.e.
                    let mask = ops::leaky_relu_slope_mask(self.value(a), slope);
                    let m = self.leaf(mask);
                    res.push((a, self.mul(g, m)?));
                }
            }
            Op::Tanh(a) => {
                if want(&a) {
                    // g * (1 - out^2)
                    let go = self.mul(g, out)?;
                    let goo = self.mul(go, out)?;
                    res.push((a, self.sub(g, goo)?));
                }
            }
            Op::Exp(a) => {
                if want(&a) {
                    res.push((a, self.mul(g, out)?));
                }
            }
            Op::Square(a) => {
                if want(&a) {
                    let ga = self.mul(g, a)?;
                    res.push((a, self.scale(ga, T::from_f64_lossy(2.0))?));
                }
            }
            Op::Sqrt(a) => {
                if want(&a) {
                    // g / (2 sqrt(a)); zero where a == 0.
                    let half = self.scale(g, T::from_f64_lossy(0.5))?;
                    res.push((a, self.div(half, out)?));
                }
            }
            Op::Sum(a) => {
                if want(&a) {
                    let shape = self.shape(a).to_vec();
                    res.push((a, self.broadcast(g, &shape)?));
                }
            }
            Op::Mean(a) => {
                if want(&a) {
                    let shape = self.shape(a).to_vec();
                    let n = T::from_usize(self.value(a).numel()).unwrap();
                    let gs = self.scale(g, T::one() / n)?;
                    res.push((a, self.broadcast(gs, &shape)?));
                }
            }
            Op::SumAxis(a) | Op::SumTo(a) => {
                if want(&a) {
                    let shape = self.shape(a).to_vec();
                    res.push((a, self.broadcast(g, &shape)?));
                }
            }
            Op::Broadcast(a) => {
                if want(&a) {
                    let shape = self.shape(a).to_vec();
                    res.push((a, self.sum_to(g, &shape)?));
                }
            }
            Op::Concat(ref parts, axis) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[axis];
                    if want(p) {
                        res.push((*p, self.slice(g, axis, offset, offset + len)?));
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                if want(&input) {
                    let full = self.shape(input).to_vec();
                    let len = self.shape(g)[axis];
                    let mut pieces = Vec::with_capacity(3);
                    if start > 0 {
                        let mut s = full.clone();
                        s[axis] = start;
                        pieces.push(self.leaf(Tensor::zeros(s)));
                    }
                    pieces.push(g);
                    if start + len < full[axis] {
                        let mut s = full.clone();
                        s[axis] = full[axis] - start - len;
                        pieces.push(self.leaf(Tensor::zeros(s)));
                    }
                    let padded = if pieces.len() == 1 {
                        g
                    } else {
                        self.concat(&pieces, axis)?
                    };
                    res.push((input, padded));
                }
            }
        }
        Ok(res)
    }
}
