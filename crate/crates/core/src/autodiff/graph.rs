use ndarray::{Array2, Axis};

use super::Mat;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Constant,
    Variable,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Recip(NodeId),
    MaxConst(NodeId, f64),
    StopGradient(NodeId),
    Broadcast(NodeId),
    SumTo(NodeId),
    TileRows(NodeId, usize),
    FoldRows(NodeId, usize),
    BatchOuter(NodeId, NodeId),
    BatchMatVec(NodeId, NodeId),
    BatchMatVecT(NodeId, NodeId),
    /// Scalar output whose input gradients were computed eagerly.
    Custom {
        name: &'static str,
        inputs: Vec<NodeId>,
        grads: Vec<Option<Mat>>,
    },
    /// Gradient emitted by a [`Op::Custom`] node. Holds the custom node's
    /// inputs so dependency tracking sees through it; differentiating it
    /// again is an error.
    OpaqueGrad {
        origin: &'static str,
        inputs: Vec<NodeId>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Variable => "variable",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Recip(..) => "recip",
            Op::MaxConst(..) => "max_const",
            Op::StopGradient(..) => "stop_gradient",
            Op::Broadcast(..) => "broadcast",
            Op::SumTo(..) => "sum_to",
            Op::TileRows(..) => "tile_rows",
            Op::FoldRows(..) => "fold_rows",
            Op::BatchOuter(..) => "batch_outer",
            Op::BatchMatVec(..) => "batch_matvec",
            Op::BatchMatVecT(..) => "batch_matvec_t",
            Op::Custom { name, .. } => name,
            Op::OpaqueGrad { .. } => "opaque_grad",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Constant | Op::Variable => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::BatchOuter(a, b)
            | Op::BatchMatVec(a, b)
            | Op::BatchMatVecT(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Transpose(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Recip(a)
            | Op::MaxConst(a, _)
            | Op::Broadcast(a)
            | Op::SumTo(a)
            | Op::TileRows(a, _)
            | Op::FoldRows(a, _) => vec![*a],
            // Gradient does not flow through; no dependency edge.
            Op::StopGradient(_) => Vec::new(),
            Op::Custom { inputs, .. } | Op::OpaqueGrad { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Mat,
    pub(crate) op: Op,
}

/// Append-only record of matrix-valued operations.
///
/// Node indices are a topological order. Backward passes append their own
/// nodes to the same graph, so a gradient is itself differentiable.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(a: &Mat, b: &Mat, op: &str) {
    assert_eq!(
        a.dim(),
        b.dim(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.dim(),
        b.dim()
    );
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar(): node is {:?}", v.dim());
        v[[0, 0]]
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    /// Operation and operands that produced `id`, e.g. `add_scalar(#3, 1)`.
    /// A stop-gradient node lists its source even though no gradient edge
    /// exists.
    pub fn describe(&self, id: NodeId) -> String {
        let op = &self.nodes[id.0].op;
        let mut args: Vec<String> = match op {
            Op::StopGradient(a) => vec![format!("#{}", a.0)],
            other => other.inputs().iter().map(|n| format!("#{}", n.0)).collect(),
        };
        match op {
            Op::Scale(_, c) | Op::AddScalar(_, c) | Op::MaxConst(_, c) => args.push(format!("{c}")),
            Op::TileRows(_, k) | Op::FoldRows(_, k) => args.push(format!("{k}")),
            _ => {}
        }
        format!("{}({})", op.name(), args.join(", "))
    }

    pub(crate) fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn constant_scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn variable(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Variable)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "add");
        let v = va + vb;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "sub");
        let v = va - vb;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "mul");
        let v = va * vb;
        self.push(v, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).mapv(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::AddScalar(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.ncols(),
            vb.nrows(),
            "matmul: inner dimensions {:?} x {:?}",
            va.dim(),
            vb.dim()
        );
        let v = va.dot(vb);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().as_standard_layout().into_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(sigmoid_scalar);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(softplus_scalar);
        self.push(v, Op::Softplus(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::sin);
        self.push(v, Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::cos);
        self.push(v, Op::Cos(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::recip);
        self.push(v, Op::Recip(a))
    }

    /// Elementwise `max(x, c)`.
    pub fn max_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).mapv(|x| if x > c { x } else { c });
        self.push(v, Op::MaxConst(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.max_const(a, 0.0)
    }

    /// Passes the value through; the gradient through this node is zero.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(v, Op::StopGradient(a))
    }

    /// Expands a `1×1`, `1×c` or `r×1` node to `rows×cols`.
    pub fn broadcast(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let va = self.value(a);
        let (r, c) = va.dim();
        assert!(
            (r == 1 || r == rows) && (c == 1 || c == cols),
            "broadcast: cannot expand {:?} to {:?}",
            (r, c),
            (rows, cols)
        );
        let v = va
            .broadcast((rows, cols))
            .expect("broadcast shape checked")
            .to_owned();
        self.push(v, Op::Broadcast(a))
    }

    /// Sums down to `1×1`, `1×c` or `r×1`.
    pub fn sum_to(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let va = self.value(a);
        let (r, c) = va.dim();
        assert!(
            (rows == 1 || rows == r) && (cols == 1 || cols == c),
            "sum_to: cannot reduce {:?} to {:?}",
            (r, c),
            (rows, cols)
        );
        let mut v = va.clone();
        if rows == 1 && r != 1 {
            v = v.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        if cols == 1 && c != 1 {
            v = v.sum_axis(Axis(1)).insert_axis(Axis(1));
        }
        self.push(v, Op::SumTo(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.sum_to(a, 1, 1)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Stacks `times` copies vertically: row `k·r + i` is row `i`.
    pub fn tile_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let va = self.value(a);
        let views: Vec<_> = (0..times).map(|_| va.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("tile_rows");
        self.push(v, Op::TileRows(a, times))
    }

    /// Inverse-adjoint of [`Graph::tile_rows`]: sums the `times` row blocks.
    pub fn fold_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let va = self.value(a);
        let (r, c) = va.dim();
        assert!(times > 0 && r % times == 0, "fold_rows: {r} rows into {times} blocks");
        let block = r / times;
        let mut v = Array2::zeros((block, c));
        for k in 0..times {
            v += &va.slice(ndarray::s![k * block..(k + 1) * block, ..]);
        }
        self.push(v, Op::FoldRows(a, times))
    }

    /// Row-wise outer product: `out[b, i·r + k] = u[b,i]·v[b,k]`.
    pub fn batch_outer(&mut self, u: NodeId, v: NodeId) -> NodeId {
        let out = batch_outer_values(self.value(u), self.value(v));
        self.push(out, Op::BatchOuter(u, v))
    }

    /// Row-wise `M_b y_b` where row `b` of `m` holds a `d×r` matrix.
    pub fn batch_matvec(&mut self, m: NodeId, y: NodeId) -> NodeId {
        let out = batch_matvec_values(self.value(m), self.value(y));
        self.push(out, Op::BatchMatVec(m, y))
    }

    /// Row-wise `M_bᵀ x_b` where row `b` of `m` holds a `d×r` matrix.
    pub fn batch_matvec_t(&mut self, m: NodeId, x: NodeId) -> NodeId {
        let out = batch_matvec_t_values(self.value(m), self.value(x));
        self.push(out, Op::BatchMatVecT(m, x))
    }

    /// Records a scalar produced outside the graph together with its
    /// gradient with respect to each input (`None` for a zero gradient).
    ///
    /// First-order only: taking a gradient of this node's gradient fails
    /// with [`super::DiffError::Unsupported`].
    pub fn custom_scalar(
        &mut self,
        name: &'static str,
        inputs: &[NodeId],
        value: f64,
        grads: Vec<Option<Mat>>,
    ) -> NodeId {
        assert_eq!(inputs.len(), grads.len(), "{name}: one gradient per input");
        for (i, g) in inputs.iter().zip(&grads) {
            if let Some(g) = g {
                same_shape(self.value(*i), g, name);
            }
        }
        self.push(
            Array2::from_elem((1, 1), value),
            Op::Custom {
                name,
                inputs: inputs.to_vec(),
                grads,
            },
        )
    }
}

pub(crate) fn batch_outer_values(u: &Mat, v: &Mat) -> Mat {
    let (b, d) = u.dim();
    let (bv, r) = v.dim();
    assert_eq!(b, bv, "batch_outer: batch sizes {b} vs {bv}");
    let mut out = Array2::zeros((b, d * r));
    for row in 0..b {
        for i in 0..d {
            let ui = u[[row, i]];
            for k in 0..r {
                out[[row, i * r + k]] = ui * v[[row, k]];
            }
        }
    }
    out
}

pub(crate) fn batch_matvec_values(m: &Mat, y: &Mat) -> Mat {
    let (b, dr) = m.dim();
    let (by, r) = y.dim();
    assert!(
        b == by && r > 0 && dr % r == 0,
        "batch_matvec: {:?} with {:?}",
        m.dim(),
        y.dim()
    );
    let d = dr / r;
    let mut out = Array2::zeros((b, d));
    for row in 0..b {
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..r {
                acc += m[[row, i * r + k]] * y[[row, k]];
            }
            out[[row, i]] = acc;
        }
    }
    out
}

pub(crate) fn batch_matvec_t_values(m: &Mat, x: &Mat) -> Mat {
    let (b, dr) = m.dim();
    let (bx, d) = x.dim();
    assert!(
        b == bx && d > 0 && dr % d == 0,
        "batch_matvec_t: {:?} with {:?}",
        m.dim(),
        x.dim()
    );
    let r = dr / d;
    let mut out = Array2::zeros((b, r));
    for row in 0..b {
        for i in 0..d {
            let xi = x[[row, i]];
            for k in 0..r {
                out[[row, k]] += m[[row, i * r + k]] * xi;
            }
        }
    }
    out
}
