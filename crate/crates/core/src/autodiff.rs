//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records the forward computation as an append-only node list in
//! topological order; [`Tape::backward`] replays it once in reverse and
//! returns gradients for every tracked leaf. Node values are produced by the
//! same kernels as the untaped path in [`crate::tensor`], so attaching a
//! tape never changes a value.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor, LOG_FLOOR};

/// Index of a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Operation kinds accepted by [`Tape::apply`]. `Scale` carries its constant
/// factor; every other operand is a tape node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Matmul,
    Relu,
    Tanh,
    Exp,
    Log,
    Sum,
    /// Max-stabilized softmax over a logits vector.
    Softmax,
}

impl OpKind {
    fn arity(&self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Matmul => 2,
            _ => 1,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Matmul => "matmul",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sum => "sum",
            OpKind::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Input node. `tracked` leaves receive gradients from `backward`;
    /// untracked ones are frozen constants.
    Leaf { tracked: bool },
    Apply { kind: OpKind, parents: [NodeId; 2] },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only computation graph. Parents always precede children, so a
/// single reverse sweep visits each node exactly once.
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

    /// Tracked input: `backward` reports a gradient for it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { tracked: true }, value)
    }

    /// Frozen input: participates in the forward value but is skipped in the
    /// gradient map (used for frozen network parameters).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { tracked: false }, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Record one op. Shape rules are those of the underlying kernels; a
    /// violation reports the op name and both operand shapes.
    pub fn apply(&mut self, kind: OpKind, parents: &[NodeId]) -> Result<NodeId> {
        if parents.len() != kind.arity() {
            return Err(Error::InvalidArgument(format!(
                "op `{}` takes {} parent(s), got {}",
                kind.name(),
                kind.arity(),
                parents.len()
            )));
        }
        let a = &self.nodes[parents[0].0].value;
        let value = match kind {
            OpKind::Add => tensor::add(a, self.value(parents[1]))?,
            OpKind::Sub => tensor::sub(a, self.value(parents[1]))?,
            OpKind::Mul => tensor::mul(a, self.value(parents[1]))?,
            OpKind::Matmul => tensor::matmul(a, self.value(parents[1]))?,
            OpKind::Scale(c) => tensor::scale(a, c),
            OpKind::Relu => tensor::relu(a),
            OpKind::Tanh => tensor::tanh(a),
            OpKind::Exp => tensor::exp(a),
            OpKind::Log => tensor::log(a),
            OpKind::Sum => tensor::sum(a),
            OpKind::Softmax => tensor::softmax(a),
        };
        let stored = [parents[0], *parents.get(1).unwrap_or(&parents[0])];
        Ok(self.push(Op::Apply { kind, parents: stored }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Matmul, &[a, b])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Softmax, &[a])
    }

    /// Gradients of a scalar `root` with respect to every tracked leaf.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[root.0].value.shape().to_vec(),
            });
        }
        let mut adjoint: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoint[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let g = match adjoint[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf { tracked } => {
                    if *tracked {
                        adjoint[idx] = Some(g);
                    }
                }
                Op::Apply { kind, parents } => {
                    self.accumulate(*kind, *parents, idx, &g, &mut adjoint)?;
                }
            }
        }

        let mut map = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { tracked: true } = node.op {
                let grad = adjoint[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.insert(NodeId(idx), grad);
            }
        }
        Ok(Gradients { map })
    }

    fn accumulate(
        &self,
        kind: OpKind,
        parents: [NodeId; 2],
        out_idx: usize,
        g: &Tensor,
        adjoint: &mut [Option<Tensor>],
    ) -> Result<()> {
        let [pa, pb] = parents;
        let av = &self.nodes[pa.0].value;
        let out = &self.nodes[out_idx].value;
        match kind {
            OpKind::Add => {
                accum(adjoint, pa, g.clone())?;
                accum(adjoint, pb, g.clone())?;
            }
            OpKind::Sub => {
                accum(adjoint, pa, g.clone())?;
                accum(adjoint, pb, tensor::scale(g, -1.0))?;
            }
            OpKind::Mul => {
                let bv = &self.nodes[pb.0].value;
                accum(adjoint, pa, tensor::mul(g, bv)?)?;
                accum(adjoint, pb, tensor::mul(g, av)?)?;
            }
            OpKind::Scale(c) => {
                accum(adjoint, pa, tensor::scale(g, c))?;
            }
            OpKind::Matmul => {
                let bv = &self.nodes[pb.0].value;
                let (m, n) = (av.shape()[0], av.shape()[1]);
                if bv.is_vector() {
                    // out = A x: dA = g xᵀ, dx = Aᵀ g
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g.data()[i] * bv.data()[j];
                        }
                    }
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        let gi = g.data()[i];
                        for j in 0..n {
                            db[j] += av.data()[i * n + j] * gi;
                        }
                    }
                    accum(adjoint, pa, Tensor::matrix(m, n, da)?)?;
                    accum(adjoint, pb, Tensor::vector(db))?;
                } else {
                    // out = A B: dA = G Bᵀ, dB = Aᵀ G
                    let p = bv.shape()[1];
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for k in 0..n {
                            let mut acc = 0.0;
                            for j in 0..p {
                                acc += g.data()[i * p + j] * bv.data()[k * p + j];
                            }
                            da[i * n + k] = acc;
                        }
                    }
                    let mut db = vec![0.0; n * p];
                    for k in 0..n {
                        for j in 0..p {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av.data()[i * n + k] * g.data()[i * p + j];
                            }
                            db[k * p + j] = acc;
                        }
                    }
                    accum(adjoint, pa, Tensor::matrix(m, n, da)?)?;
                    accum(adjoint, pb, Tensor::matrix(n, p, db)?)?;
                }
            }
            OpKind::Relu => {
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(gi, &vi)| if vi > 0.0 { *gi } else { 0.0 })
                    .collect();
                accum(adjoint, pa, Tensor::new(av.shape().to_vec(), data)?)?;
            }
            OpKind::Tanh => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gi, oi)| gi * (1.0 - oi * oi))
                    .collect();
                accum(adjoint, pa, Tensor::new(av.shape().to_vec(), data)?)?;
            }
            OpKind::Exp => {
                accum(adjoint, pa, tensor::mul(g, out)?)?;
            }
            OpKind::Log => {
                // Below the clamp the value is locally constant, so the
                // gradient there is exactly zero.
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(gi, &vi)| if vi > LOG_FLOOR { gi / vi } else { 0.0 })
                    .collect();
                accum(adjoint, pa, Tensor::new(av.shape().to_vec(), data)?)?;
            }
            OpKind::Sum => {
                let gs = g.item()?;
                let data = vec![gs; av.len()];
                accum(adjoint, pa, Tensor::new(av.shape().to_vec(), data)?)?;
            }
            OpKind::Softmax => {
                // dL/dv_i = p_i (g_i - sum_j g_j p_j); identical Jacobian for
                // the max-shifted form since softmax(v - c) == softmax(v).
                let p = out.data();
                let dot: f64 = g.data().iter().zip(p).map(|(gi, pi)| gi * pi).sum();
                let data = g
                    .data()
                    .iter()
                    .zip(p)
                    .map(|(gi, pi)| pi * (gi - dot))
                    .collect();
                accum(adjoint, pa, Tensor::new(av.shape().to_vec(), data)?)?;
            }
        }
        Ok(())
    }
}

fn accum(adjoint: &mut [Option<Tensor>], id: NodeId, grad: Tensor) -> Result<()> {
    match &mut adjoint[id.0] {
        Some(existing) => {
            *existing = tensor::add(existing, &grad)?;
        }
        slot @ None => *slot = Some(grad),
    }
    Ok(())
}

/// Gradient map keyed by tracked-leaf node id.
#[derive(Debug)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Tensor)> {
        self.map.iter()
    }
}

/// Max relative error between the taped gradient of `build` and central
/// finite differences at step `fd_step`, over all coordinates of `params`.
///
/// `build` must construct the same scalar function on any tape it is given;
/// it is re-run twice per coordinate for the difference quotients.
pub fn grad_check<F>(build: F, params: &Tensor, fd_step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if fd_step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "fd_step must be positive, got {fd_step}"
        )));
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(params.clone());
    let root = build(&mut tape, leaf)?;
    let grads = tape.backward(root)?;
    let analytic = grads.get(leaf).expect("leaf gradient present");

    let eval = |theta: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let l = t.leaf(theta);
        let r = build(&mut t, l)?;
        t.value(r).item()
    };

    let mut max_rel = 0.0_f64;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.data_mut()[i] += fd_step;
        let mut minus = params.clone();
        minus.data_mut()[i] -= fd_step;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * fd_step);
        let a = analytic.data()[i];
        let rel = (a - fd).abs() / 1.0_f64.max(a.abs());
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
