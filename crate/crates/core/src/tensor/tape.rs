use super::kernels;
use super::{Activation, Tensor};
use crate::error::{Result, VadError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Reduction axis. `Rows` reduces within each row, so `[n, d]` becomes `[n]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    All,
    Rows,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Elementwise {
        kind: ElementwiseKind,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Activation {
        kind: Activation,
        input: Var,
    },
    Reduce {
        kind: ReduceKind,
        axis: Axis,
        input: Var,
    },
    Exp {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Offset {
        input: Var,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only record of a forward computation.
///
/// Every op checks its output for NaN/Inf and fails instead of recording a
/// non-finite value. Inputs of a node always precede it, so reverse insertion
/// order is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf. A requires-grad leaf starts with a zeroed gradient buffer.
    pub fn new_tensor(&mut self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        self.leaf(t, requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(VadError::NonFinite { op: "leaf" });
        }
        let grad = requires_grad.then(|| vec![0.0; value.len()]);
        Ok(self.push(Op::Leaf, value, requires_grad, grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a requires-grad leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, grad: Option<Vec<f64>>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor, inputs: &[Var], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(VadError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(op, value, requires_grad, None))
    }

    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if av.rank() == 2 && bv.rank() == 1 && av.shape()[1] == bv.shape()[0] {
            true
        } else {
            return Err(VadError::dim(format!(
                "elementwise {:?} on shapes {:?} and {:?}",
                kind,
                av.shape(),
                bv.shape()
            )));
        };
        let f = match kind {
            ElementwiseKind::Add => |x: f64, y: f64| x + y,
            ElementwiseKind::Sub => |x: f64, y: f64| x - y,
            ElementwiseKind::Mul => |x: f64, y: f64| x * y,
        };
        let bd = bv.data();
        let width = bd.len().max(1);
        let data: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[if broadcast { i % width } else { i }]))
            .collect();
        let value = Tensor::new(av.shape(), data)?;
        self.record(
            Op::Elementwise {
                kind,
                a,
                b,
                broadcast,
            },
            value,
            &[a, b],
            "elementwise",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Mul, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 {
            return Err(VadError::dim(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (n, k) = (av.shape()[0], av.shape()[1]);
        let (j, m) = (bv.shape()[0], bv.shape()[1]);
        if k != j {
            return Err(VadError::dim(format!("matmul inner extents {k} and {j} differ")));
        }
        let data = kernels::matmul(av.data(), bv.data(), n, k, m);
        let value = Tensor::new(&[n, m], data)?;
        self.record(Op::MatMul { a, b }, value, &[a, b], "matmul")
    }

    pub fn activation(&mut self, kind: Activation, input: Var) -> Result<Var> {
        let iv = self.value(input);
        let data = iv.data().iter().map(|&x| kind.apply(x)).collect();
        let value = Tensor::new(iv.shape(), data)?;
        self.record(Op::Activation { kind, input }, value, &[input], "activation")
    }

    pub fn reduce(&mut self, kind: ReduceKind, input: Var, axis: Axis) -> Result<Var> {
        let iv = self.value(input);
        let value = match axis {
            Axis::All => {
                if kind == ReduceKind::Mean && iv.is_empty() {
                    return Err(VadError::EmptyReduction);
                }
                let s: f64 = iv.data().iter().sum();
                let v = match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => s / iv.len() as f64,
                };
                Tensor::scalar(v)
            }
            Axis::Rows => {
                let (n, d) = iv.dims2();
                if kind == ReduceKind::Mean && d == 0 {
                    return Err(VadError::EmptyReduction);
                }
                let data = (0..n)
                    .map(|i| {
                        let s: f64 = iv.data()[i * d..(i + 1) * d].iter().sum();
                        match kind {
                            ReduceKind::Sum => s,
                            ReduceKind::Mean => s / d as f64,
                        }
                    })
                    .collect();
                Tensor::new(&[n], data)?
            }
        };
        self.record(Op::Reduce { kind, axis, input }, value, &[input], "reduce")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, input, Axis::All)
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, input, Axis::All)
    }

    pub fn exp(&mut self, input: Var) -> Result<Var> {
        let iv = self.value(input);
        let value = Tensor::new(iv.shape(), iv.data().iter().map(|x| x.exp()).collect())?;
        self.record(Op::Exp { input }, value, &[input], "exp")
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let iv = self.value(input);
        let value = Tensor::new(iv.shape(), iv.data().iter().map(|x| x * factor).collect())?;
        self.record(Op::Scale { input, factor }, value, &[input], "scale")
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, input: Var, constant: f64) -> Result<Var> {
        let iv = self.value(input);
        let value = Tensor::new(iv.shape(), iv.data().iter().map(|x| x + constant).collect())?;
        self.record(Op::Offset { input }, value, &[input], "offset")
    }

    /// Accumulates ∂loss/∂leaf into every requires-grad leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.item().is_none() {
            return Err(VadError::NonScalarBackward(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(VadError::NonFinite { op: "backward" });
            }
            match node.op.clone() {
                Op::Leaf => {
                    // Leaves keep their gradient; accumulate across repeated backward calls.
                    if let Some(acc) = self.nodes[idx].grad.as_mut() {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                }
                Op::Elementwise {
                    kind,
                    a,
                    b,
                    broadcast,
                } => {
                    let width = self.value(b).len().max(1);
                    if self.requires_grad(a) {
                        let ga: Vec<f64> = match kind {
                            ElementwiseKind::Add | ElementwiseKind::Sub => g.clone(),
                            ElementwiseKind::Mul => {
                                let bd = self.value(b).data();
                                g.iter()
                                    .enumerate()
                                    .map(|(i, gv)| gv * bd[if broadcast { i % width } else { i }])
                                    .collect()
                            }
                        };
                        accumulate(&mut grads, a, ga);
                    }
                    if self.requires_grad(b) {
                        let ad = self.value(a).data();
                        let mut gb = vec![0.0; self.value(b).len()];
                        for (i, gv) in g.iter().enumerate() {
                            let j = if broadcast { i % width } else { i };
                            gb[j] += match kind {
                                ElementwiseKind::Add => *gv,
                                ElementwiseKind::Sub => -gv,
                                ElementwiseKind::Mul => gv * ad[i],
                            };
                        }
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::MatMul { a, b } => {
                    let (n, k) = self.value(a).dims2();
                    let (_, m) = self.value(b).dims2();
                    if self.requires_grad(a) {
                        let mut ga = vec![0.0; n * k];
                        kernels::matmul_nt_acc(&mut ga, &g, self.value(b).data(), n, k, m);
                        accumulate(&mut grads, a, ga);
                    }
                    if self.requires_grad(b) {
                        let mut gb = vec![0.0; k * m];
                        kernels::matmul_tn_acc(&mut gb, self.value(a).data(), &g, n, k, m);
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Activation { kind, input } => {
                    let x = self.value(input).data();
                    let y = self.nodes[idx].value.data();
                    let gi = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(gv, (&xv, &yv))| gv * kind.derivative(xv, yv))
                        .collect();
                    accumulate(&mut grads, input, gi);
                }
                Op::Reduce { kind, axis, input } => {
                    let iv = self.value(input);
                    let gi = match axis {
                        Axis::All => {
                            let s = match kind {
                                ReduceKind::Sum => g[0],
                                ReduceKind::Mean => g[0] / iv.len() as f64,
                            };
                            vec![s; iv.len()]
                        }
                        Axis::Rows => {
                            let (n, d) = iv.dims2();
                            let mut out = Vec::with_capacity(n * d);
                            for gv in g.iter().take(n) {
                                let s = match kind {
                                    ReduceKind::Sum => *gv,
                                    ReduceKind::Mean => gv / d as f64,
                                };
                                out.extend(std::iter::repeat_n(s, d));
                            }
                            out
                        }
                    };
                    accumulate(&mut grads, input, gi);
                }
                Op::Exp { input } => {
                    let y = self.nodes[idx].value.data();
                    let gi = g.iter().zip(y).map(|(gv, yv)| gv * yv).collect();
                    accumulate(&mut grads, input, gi);
                }
                Op::Scale { input, factor } => {
                    let gi = g.iter().map(|gv| gv * factor).collect();
                    accumulate(&mut grads, input, gi);
                }
                Op::Offset { input } => accumulate(&mut grads, input, g),
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(&g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
