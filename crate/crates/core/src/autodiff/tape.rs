use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels;
use super::tensor::{broadcast_index_map, broadcast_shape, split_axis, Tensor};
use super::TensorError;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Primitive operation kinds understood by [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    /// Inputs `x [C,H,W]`, `w [O,C,K,K]` and optionally `b [O]`.
    Conv2d {
        stride: usize,
        pad: usize,
    },
    Transpose,
    BroadcastTo(Vec<usize>),
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Pow(f32),
    ClampMin(f32),
    Softmax {
        axis: usize,
    },
    Sum {
        axis: usize,
    },
    Mean {
        axis: usize,
    },
    SumAll,
    MeanAll,
    /// Input `[C,H,W]`, no padding.
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Reshape(Vec<usize>),
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    Scale(f32),
    Shift(f32),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Transpose => "transpose",
            OpKind::BroadcastTo(_) => "broadcast_to",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Pow(_) => "pow",
            OpKind::ClampMin(_) => "clamp_min",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Sum { .. } => "sum",
            OpKind::Mean { .. } => "mean",
            OpKind::SumAll => "sum_all",
            OpKind::MeanAll => "mean_all",
            OpKind::MaxPool2d { .. } => "max_pool2d",
            OpKind::Reshape(_) => "reshape",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Scale(_) => "scale",
            OpKind::Shift(_) => "shift",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul => Some(2),
            OpKind::Conv2d { .. } | OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

fn parse_args<T: FromStr>(name: &str, args: &str) -> Result<Vec<T>, TensorError> {
    if args.trim().is_empty() {
        return Ok(Vec::new());
    }
    args.split(',')
        .map(|a| {
            a.trim()
                .parse()
                .map_err(|_| TensorError::UnknownOp(format!("{name}({args})")))
        })
        .collect()
}

/// Parses `name` or `name(arg, ...)`, e.g. `softmax(0)` or `conv2d(2,1)`.
impl FromStr for OpKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], &s[open + 1..s.len() - 1]),
            Some(_) => return Err(TensorError::UnknownOp(s.to_string())),
            None => (s, ""),
        };
        let unknown = || TensorError::UnknownOp(s.to_string());
        let usizes = || parse_args::<usize>(name, args);
        let float = || -> Result<f32, TensorError> {
            match parse_args::<f32>(name, args)?.as_slice() {
                [v] => Ok(*v),
                _ => Err(unknown()),
            }
        };
        let kind = match name {
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "matmul" => OpKind::MatMul,
            "conv2d" => match usizes()?.as_slice() {
                [] => OpKind::Conv2d { stride: 1, pad: 0 },
                [stride, pad] => OpKind::Conv2d {
                    stride: *stride,
                    pad: *pad,
                },
                _ => return Err(unknown()),
            },
            "transpose" => OpKind::Transpose,
            "broadcast_to" => OpKind::BroadcastTo(usizes()?),
            "relu" => OpKind::Relu,
            "sigmoid" => OpKind::Sigmoid,
            "tanh" => OpKind::Tanh,
            "exp" => OpKind::Exp,
            "log" => OpKind::Log,
            "pow" => OpKind::Pow(float()?),
            "clamp_min" => OpKind::ClampMin(float()?),
            "softmax" | "sum" | "mean" => {
                let axis = match usizes()?.as_slice() {
                    [a] => *a,
                    _ => return Err(unknown()),
                };
                match name {
                    "softmax" => OpKind::Softmax { axis },
                    "sum" => OpKind::Sum { axis },
                    _ => OpKind::Mean { axis },
                }
            }
            "sum_all" => OpKind::SumAll,
            "mean_all" => OpKind::MeanAll,
            "max_pool2d" => match usizes()?.as_slice() {
                [kernel, stride] => OpKind::MaxPool2d {
                    kernel: *kernel,
                    stride: *stride,
                },
                _ => return Err(unknown()),
            },
            "reshape" => OpKind::Reshape(usizes()?),
            "concat" => match usizes()?.as_slice() {
                [axis] => OpKind::Concat { axis: *axis },
                _ => return Err(unknown()),
            },
            "slice" => match usizes()?.as_slice() {
                [axis, start, end] => OpKind::Slice {
                    axis: *axis,
                    start: *start,
                    end: *end,
                },
                _ => return Err(unknown()),
            },
            "scale" => OpKind::Scale(float()?),
            "shift" => OpKind::Shift(float()?),
            _ => return Err(unknown()),
        };
        Ok(kind)
    }
}

/// An operation whose forward pass is computed outside the tape and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient of
    /// the output. `None` means the input receives no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Aux {
    None,
    Argmax(Vec<usize>),
}

enum NodeOp {
    Leaf,
    Prim {
        kind: OpKind,
        inputs: Vec<usize>,
        aux: Aux,
    },
    Custom {
        inputs: Vec<usize>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: NodeOp,
    requires_grad: bool,
    trainable: bool,
}

/// Define-by-run computation record.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and [`Tape::backward`] is a single reverse sweep.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

/// Gradients of a scalar root with respect to the trainable leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u32,
    grads: HashMap<u32, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(&var.index)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(node);
        Var {
            tape: self.id,
            index,
        }
    }

    /// Records a trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Node {
            value,
            op: NodeOp::Leaf,
            requires_grad: true,
            trainable: true,
        })
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Node {
            value,
            op: NodeOp::Leaf,
            requires_grad: false,
            trainable: false,
        })
    }

    /// Copies the value of `v` into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Result<Var, TensorError> {
        let value = self.value(v)?.clone();
        Ok(self.constant(value))
    }

    fn check(&self, v: Var) -> Result<usize, TensorError> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index())
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, TensorError> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool, TensorError> {
        let i = self.check(v)?;
        Ok(self.nodes[i].requires_grad)
    }

    /// Runs primitive `kind` on `inputs` and records it.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var, TensorError> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(TensorError::Arity {
                    op: kind.name(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        }
        let idx = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>, _>>()?;
        let values: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let (value, aux) = forward(&kind, &values)?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite(kind.name()));
        }
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Node {
            value,
            op: NodeOp::Prim {
                kind,
                inputs: idx,
                aux,
            },
            requires_grad,
            trainable: false,
        }))
    }

    /// Records an externally computed `output` of `op` applied to `inputs`.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor,
        op: Box<dyn CustomOp>,
    ) -> Result<Var, TensorError> {
        let idx = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>, _>>()?;
        if !output.is_finite() {
            return Err(TensorError::NonFinite(op.name()));
        }
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Node {
            value: output,
            op: NodeOp::Custom { inputs: idx, op },
            requires_grad,
            trainable: false,
        }))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let root_idx = self.check(root)?;
        let root_value = &self.nodes[root_idx].value;
        if !root_value.is_scalar() {
            return Err(TensorError::NotScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root_idx + 1);
        grads.resize_with(root_idx + 1, || None);
        grads[root_idx] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));
        let mut out = HashMap::new();

        for i in (0..=root_idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (inputs, input_grads) = match &node.op {
                NodeOp::Leaf => {
                    if node.trainable {
                        out.insert(i as u32, g);
                    }
                    continue;
                }
                NodeOp::Prim { kind, inputs, aux } => {
                    let values: Vec<&Tensor> =
                        inputs.iter().map(|&j| &self.nodes[j].value).collect();
                    let needs: Vec<bool> = inputs
                        .iter()
                        .map(|&j| self.nodes[j].requires_grad)
                        .collect();
                    (
                        inputs,
                        backward(kind, &values, &node.value, aux, &g, &needs),
                    )
                }
                NodeOp::Custom { inputs, op } => {
                    let values: Vec<&Tensor> =
                        inputs.iter().map(|&j| &self.nodes[j].value).collect();
                    (inputs, op.backward(&values, &node.value, &g))
                }
            };
            debug_assert_eq!(inputs.len(), input_grads.len());
            for (&j, ig) in inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.shape(), self.nodes[j].value.shape());
                match &mut grads[j] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    // Convenience wrappers over `apply`.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let kind = OpKind::Conv2d { stride, pad };
        match b {
            Some(b) => self.apply(kind, &[x, w, b]),
            None => self.apply(kind, &[x, w]),
        }
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.apply(OpKind::BroadcastTo(shape.to_vec()), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn pow(&mut self, a: Var, p: f32) -> Result<Var, TensorError> {
        self.apply(OpKind::Pow(p), &[a])
    }

    pub fn clamp_min(&mut self, a: Var, min: f32) -> Result<Var, TensorError> {
        self.apply(OpKind::ClampMin(min), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.apply(OpKind::Softmax { axis }, &[a])
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.apply(OpKind::Sum { axis }, &[a])
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.apply(OpKind::Mean { axis }, &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::SumAll, &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, TensorError> {
        self.apply(OpKind::MeanAll, &[a])
    }

    pub fn max_pool2d(&mut self, a: Var, kernel: usize, stride: usize) -> Result<Var, TensorError> {
        self.apply(OpKind::MaxPool2d { kernel, stride }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.apply(OpKind::Reshape(shape.to_vec()), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        self.apply(OpKind::Concat { axis }, parts)
    }

    pub fn slice(
        &mut self,
        a: Var,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Var, TensorError> {
        self.apply(OpKind::Slice { axis, start, end }, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var, TensorError> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn shift(&mut self, a: Var, c: f32) -> Result<Var, TensorError> {
        self.apply(OpKind::Shift(c), &[a])
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<(), TensorError> {
    if axis >= t.rank() {
        return Err(TensorError::BadAxis {
            op,
            axis,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn elementwise(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor, TensorError> {
    let shape = broadcast_shape(a.shape(), b.shape()).map_err(|e| match e {
        TensorError::ShapeMismatch { .. } => mismatch(op, a, b),
        other => other,
    })?;
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok(Tensor::from_parts(shape, data));
    }
    let ma = broadcast_index_map(&shape, a.shape());
    let mb = broadcast_index_map(&shape, b.shape());
    let data = ma
        .iter()
        .zip(&mb)
        .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
        .collect();
    Ok(Tensor::from_parts(shape, data))
}

/// Sum `g` (shaped like the broadcast output) back down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let map = broadcast_index_map(g.shape(), shape);
    let numel: usize = shape.iter().product();
    let mut acc = vec![0.0f64; numel];
    for (&src, &v) in map.iter().zip(g.data()) {
        acc[src] += f64::from(v);
    }
    Tensor::from_parts(shape.to_vec(), acc.into_iter().map(|v| v as f32).collect())
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn forward(kind: &OpKind, x: &[&Tensor]) -> Result<(Tensor, Aux), TensorError> {
    let unary = |f: &dyn Fn(f32) -> f32| x[0].map(f);
    let out = match kind {
        OpKind::Add => elementwise("add", x[0], x[1], |a, b| a + b)?,
        OpKind::Sub => elementwise("sub", x[0], x[1], |a, b| a - b)?,
        OpKind::Mul => elementwise("mul", x[0], x[1], |a, b| a * b)?,
        OpKind::MatMul => {
            let (a, b) = (x[0], x[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch("matmul", a, b));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::from_parts(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))
        }
        OpKind::Conv2d { stride, pad } => {
            if !(2..=3).contains(&x.len()) {
                return Err(TensorError::Arity {
                    op: "conv2d",
                    expected: 3,
                    got: x.len(),
                });
            }
            let geom = kernels::ConvGeom::new(x[0], x[1], *stride, *pad)?;
            if let Some(b) = x.get(2) {
                if b.shape() != [geom.out_c] {
                    return Err(mismatch("conv2d bias", x[1], b));
                }
            }
            let data = kernels::conv2d_forward(
                &geom,
                x[0].data(),
                x[1].data(),
                x.get(2).map(|b| b.data()),
            );
            Tensor::from_parts(vec![geom.out_c, geom.out_h, geom.out_w], data)
        }
        OpKind::Transpose => {
            let a = x[0];
            if a.rank() != 2 {
                return Err(TensorError::BadRank {
                    op: "transpose",
                    expected: 2,
                    shape: a.shape().to_vec(),
                });
            }
            let (r, c) = (a.shape()[0], a.shape()[1]);
            Tensor::from_parts(vec![c, r], kernels::transpose(a.data(), r, c))
        }
        OpKind::BroadcastTo(shape) => {
            let a = x[0];
            let target = Tensor::full(shape.clone(), 0.0);
            let out_shape = broadcast_shape(a.shape(), shape)
                .map_err(|_| mismatch("broadcast_to", a, &target))?;
            if &out_shape != shape {
                return Err(mismatch("broadcast_to", a, &target));
            }
            let map = broadcast_index_map(shape, a.shape());
            Tensor::from_parts(shape.clone(), map.iter().map(|&i| a.data()[i]).collect())
        }
        OpKind::Relu => unary(&|v| v.max(0.0)),
        OpKind::Sigmoid => unary(&sigmoid),
        OpKind::Tanh => unary(&f32::tanh),
        OpKind::Exp => unary(&f32::exp),
        OpKind::Log => unary(&f32::ln),
        OpKind::Pow(p) => {
            let p = *p;
            unary(&|v| v.powf(p))
        }
        OpKind::ClampMin(m) => {
            let m = *m;
            unary(&|v| v.max(m))
        }
        OpKind::Softmax { axis } => {
            let a = x[0];
            check_axis("softmax", a, *axis)?;
            let (outer, n, inner) = split_axis(a.shape(), *axis);
            let mut out = vec![0.0f32; a.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * n * inner + k * inner + i;
                    let max = (0..n)
                        .map(|k| a.data()[at(k)])
                        .fold(f32::NEG_INFINITY, f32::max);
                    let mut total = 0.0f64;
                    for k in 0..n {
                        let e = f64::from(a.data()[at(k)] - max).exp();
                        out[at(k)] = e as f32;
                        total += e;
                    }
                    for k in 0..n {
                        out[at(k)] = (f64::from(out[at(k)]) / total) as f32;
                    }
                }
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        }
        OpKind::Sum { axis } | OpKind::Mean { axis } => {
            let a = x[0];
            check_axis(kind.name(), a, *axis)?;
            let (outer, n, inner) = split_axis(a.shape(), *axis);
            let div = if matches!(kind, OpKind::Mean { .. }) {
                n as f64
            } else {
                1.0
            };
            let mut out = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..n)
                        .map(|k| f64::from(a.data()[o * n * inner + k * inner + i]))
                        .sum();
                    out.push((s / div) as f32);
                }
            }
            let mut shape = a.shape().to_vec();
            shape.remove(*axis);
            Tensor::from_parts(shape, out)
        }
        OpKind::SumAll => {
            Tensor::scalar(x[0].data().iter().map(|&v| f64::from(v)).sum::<f64>() as f32)
        }
        OpKind::MeanAll => {
            let s: f64 = x[0].data().iter().map(|&v| f64::from(v)).sum();
            Tensor::scalar((s / x[0].numel() as f64) as f32)
        }
        OpKind::MaxPool2d { kernel, stride } => {
            let a = x[0];
            if a.rank() != 3
                || *kernel == 0
                || *stride == 0
                || a.shape()[1] < *kernel
                || a.shape()[2] < *kernel
            {
                return Err(TensorError::BadRank {
                    op: "max_pool2d",
                    expected: 3,
                    shape: a.shape().to_vec(),
                });
            }
            let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let oh = (h - kernel) / stride + 1;
            let ow = (w - kernel) / stride + 1;
            let mut out = Vec::with_capacity(c * oh * ow);
            let mut argmax = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = usize::MAX;
                        let mut best_v = f32::NEG_INFINITY;
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                let idx = ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                if a.data()[idx] > best_v || best == usize::MAX {
                                    best_v = a.data()[idx];
                                    best = idx;
                                }
                            }
                        }
                        out.push(best_v);
                        argmax.push(best);
                    }
                }
            }
            return Ok((
                Tensor::from_parts(vec![c, oh, ow], out),
                Aux::Argmax(argmax),
            ));
        }
        OpKind::Reshape(shape) => {
            let numel: usize = shape.iter().product();
            if numel != x[0].numel() || shape.contains(&0) {
                return Err(TensorError::ShapeMismatch {
                    op: "reshape",
                    lhs: x[0].shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            Tensor::from_parts(shape.clone(), x[0].data().to_vec())
        }
        OpKind::Concat { axis } => {
            let first = x.first().ok_or(TensorError::Arity {
                op: "concat",
                expected: 1,
                got: 0,
            })?;
            check_axis("concat", first, *axis)?;
            for t in &x[1..] {
                let same_rest = t.rank() == first.rank()
                    && t.shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (p, q))| d == *axis || p == q);
                if !same_rest {
                    return Err(mismatch("concat", first, t));
                }
            }
            let (outer, _, inner) = split_axis(first.shape(), *axis);
            let total: usize = x.iter().map(|t| t.shape()[*axis]).sum();
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in x {
                    let n = t.shape()[*axis];
                    out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
                }
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = total;
            Tensor::from_parts(shape, out)
        }
        OpKind::Slice { axis, start, end } => {
            let a = x[0];
            check_axis("slice", a, *axis)?;
            if start >= end || *end > a.shape()[*axis] {
                return Err(TensorError::BadSlice {
                    axis: *axis,
                    start: *start,
                    end: *end,
                    shape: a.shape().to_vec(),
                });
            }
            let (outer, n, inner) = split_axis(a.shape(), *axis);
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                out.extend_from_slice(
                    &a.data()[o * n * inner + start * inner..o * n * inner + end * inner],
                );
            }
            let mut shape = a.shape().to_vec();
            shape[*axis] = end - start;
            Tensor::from_parts(shape, out)
        }
        OpKind::Scale(c) => {
            let c = *c;
            unary(&|v| v * c)
        }
        OpKind::Shift(c) => {
            let c = *c;
            unary(&|v| v + c)
        }
    };
    Ok((out, Aux::None))
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&p, &q)| f(p, q))
            .collect(),
    )
}

fn backward(
    kind: &OpKind,
    x: &[&Tensor],
    y: &Tensor,
    aux: &Aux,
    g: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    match kind {
        OpKind::Add => vec![
            want(0).then(|| reduce_to(g, x[0].shape())),
            want(1).then(|| reduce_to(g, x[1].shape())),
        ],
        OpKind::Sub => vec![
            want(0).then(|| reduce_to(g, x[0].shape())),
            want(1).then(|| reduce_to(&g.map(|v| -v), x[1].shape())),
        ],
        OpKind::Mul => {
            let grad_for = |other: &Tensor, own_shape: &[usize]| {
                let full = if other.shape() == g.shape() {
                    zip_map(g, other, |p, q| p * q)
                } else {
                    let map = broadcast_index_map(g.shape(), other.shape());
                    Tensor::from_parts(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(&map)
                            .map(|(&p, &j)| p * other.data()[j])
                            .collect(),
                    )
                };
                reduce_to(&full, own_shape)
            };
            vec![
                want(0).then(|| grad_for(x[1], x[0].shape())),
                want(1).then(|| grad_for(x[0], x[1].shape())),
            ]
        }
        OpKind::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = want(0).then(|| {
                let bt = kernels::transpose(b.data(), k, n);
                Tensor::from_parts(vec![m, k], kernels::matmul(g.data(), &bt, m, n, k))
            });
            let gb = want(1).then(|| {
                let at = kernels::transpose(a.data(), m, k);
                Tensor::from_parts(vec![k, n], kernels::matmul(&at, g.data(), k, m, n))
            });
            vec![ga, gb]
        }
        OpKind::Conv2d { stride, pad } => {
            let geom =
                kernels::ConvGeom::new(x[0], x[1], *stride, *pad).expect("validated in forward");
            let (gx, gw, gb) = kernels::conv2d_backward(
                &geom,
                x[0].data(),
                x[1].data(),
                g.data(),
                want(0),
                want(1),
            );
            let mut out = vec![
                gx.map(|d| Tensor::from_parts(x[0].shape().to_vec(), d)),
                gw.map(|d| Tensor::from_parts(x[1].shape().to_vec(), d)),
            ];
            if x.len() == 3 {
                out.push(want(2).then(|| Tensor::from_parts(vec![geom.out_c], gb)));
            }
            out
        }
        OpKind::Transpose => {
            let (r, c) = (x[0].shape()[0], x[0].shape()[1]);
            vec![Some(Tensor::from_parts(
                vec![r, c],
                kernels::transpose(g.data(), c, r),
            ))]
        }
        OpKind::BroadcastTo(_) => vec![Some(reduce_to(g, x[0].shape()))],
        OpKind::Relu => vec![Some(zip_map(
            g,
            x[0],
            |gv, v| if v > 0.0 { gv } else { 0.0 },
        ))],
        OpKind::Sigmoid => vec![Some(zip_map(g, y, |gv, s| gv * s * (1.0 - s)))],
        OpKind::Tanh => vec![Some(zip_map(g, y, |gv, t| gv * (1.0 - t * t)))],
        OpKind::Exp => vec![Some(zip_map(g, y, |gv, e| gv * e))],
        OpKind::Log => vec![Some(zip_map(g, x[0], |gv, v| gv / v))],
        OpKind::Pow(p) => {
            let p = *p;
            vec![Some(zip_map(g, x[0], |gv, v| gv * p * v.powf(p - 1.0)))]
        }
        OpKind::ClampMin(m) => {
            let m = *m;
            vec![Some(zip_map(g, x[0], |gv, v| if v > m { gv } else { 0.0 }))]
        }
        OpKind::Softmax { axis } => {
            let (outer, n, inner) = split_axis(y.shape(), *axis);
            let mut out = vec![0.0f32; y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * n * inner + k * inner + i;
                    let dot: f64 = (0..n)
                        .map(|k| f64::from(g.data()[at(k)]) * f64::from(y.data()[at(k)]))
                        .sum();
                    for k in 0..n {
                        let yk = f64::from(y.data()[at(k)]);
                        out[at(k)] = (yk * (f64::from(g.data()[at(k)]) - dot)) as f32;
                    }
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        }
        OpKind::Sum { axis } | OpKind::Mean { axis } => {
            let a = x[0];
            let (outer, n, inner) = split_axis(a.shape(), *axis);
            let scale = if matches!(kind, OpKind::Mean { .. }) {
                1.0 / n as f32
            } else {
                1.0
            };
            let mut out = vec![0.0f32; a.numel()];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        out[o * n * inner + k * inner + i] = g.data()[o * inner + i] * scale;
                    }
                }
            }
            vec![Some(Tensor::from_parts(a.shape().to_vec(), out))]
        }
        OpKind::SumAll => vec![Some(Tensor::full(x[0].shape().to_vec(), g.data()[0]))],
        OpKind::MeanAll => vec![Some(Tensor::full(
            x[0].shape().to_vec(),
            g.data()[0] / x[0].numel() as f32,
        ))],
        OpKind::MaxPool2d { .. } => {
            let Aux::Argmax(argmax) = aux else {
                unreachable!("max_pool2d records argmax")
            };
            let mut out = vec![0.0f32; x[0].numel()];
            for (&src, &gv) in argmax.iter().zip(g.data()) {
                out[src] += gv;
            }
            vec![Some(Tensor::from_parts(x[0].shape().to_vec(), out))]
        }
        OpKind::Reshape(_) => vec![Some(Tensor::from_parts(
            x[0].shape().to_vec(),
            g.data().to_vec(),
        ))],
        OpKind::Concat { axis } => {
            let (outer, total, inner) = split_axis(g.shape(), *axis);
            let mut offset = 0;
            let mut out = Vec::with_capacity(x.len());
            for (idx, t) in x.iter().enumerate() {
                let n = t.shape()[*axis];
                if want(idx) {
                    let mut d = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        d.extend_from_slice(&g.data()[base..base + n * inner]);
                    }
                    out.push(Some(Tensor::from_parts(t.shape().to_vec(), d)));
                } else {
                    out.push(None);
                }
                offset += n;
            }
            out
        }
        OpKind::Slice { axis, start, end } => {
            let a = x[0];
            let (outer, n, inner) = split_axis(a.shape(), *axis);
            let width = (end - start) * inner;
            let mut out = vec![0.0f32; a.numel()];
            for o in 0..outer {
                let dst = o * n * inner + start * inner;
                out[dst..dst + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
            }
            vec![Some(Tensor::from_parts(a.shape().to_vec(), out))]
        }
        OpKind::Scale(c) => {
            let c = *c;
            vec![Some(g.map(|v| v * c))]
        }
        OpKind::Shift(_) => vec![Some(g.clone())],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = t(&[3, 3], &[1.0, -2.0, 3.5, 0.25, 4.0, -1.0, 7.0, 8.0, 9.0]);
        let i = tape.constant(Tensor::eye(3));
        let av = tape.constant(a.clone());
        let out = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(out).unwrap(), &a);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([3]));
        let s = tape.softmax(x, 0).unwrap();
        for &v in tape.value(s).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(s).unwrap().item().unwrap(), 0.5);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let root = tape.sum_all(sq).unwrap();
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_of_sigmoid_times_const() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(0.0));
        let c = tape.constant(Tensor::scalar(3.0));
        let s = tape.sigmoid(w).unwrap();
        let root = tape.mul(s, c).unwrap();
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(w).unwrap().item().unwrap(), 0.75);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(
            "fft".parse::<OpKind>(),
            Err(TensorError::UnknownOp(_))
        ));
        assert_eq!(
            "softmax(1)".parse::<OpKind>().unwrap(),
            OpKind::Softmax { axis: 1 }
        );
        assert_eq!(
            "conv2d(2,1)".parse::<OpKind>().unwrap(),
            OpKind::Conv2d { stride: 2, pad: 1 }
        );
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_roots() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
        let mut other = Tape::new();
        let y = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(y), Err(TensorError::ForeignVar)));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        assert!(matches!(tape.log(x), Err(TensorError::NonFinite("log"))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 5.0);
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(&[2, 1], &[5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(
            tape.value(c).unwrap().data(),
            &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]
        );
        let s = tape.slice(c, 1, 2, 3).unwrap();
        assert_eq!(tape.value(s).unwrap().data(), &[5.0, 6.0]);
    }
}
