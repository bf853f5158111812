use ndarray::Array2;

use super::graph::{Graph, NodeId, Op};
use super::{DiffError, Mat};

impl Graph {
    /// Gradient of the scalar `output` with respect to each node in `wrt`.
    ///
    /// The backward pass is recorded on this graph, so the returned nodes
    /// can be used in further computation and differentiated again. Nodes
    /// in `wrt` that `output` does not depend on get a zero gradient.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>, DiffError> {
        let out_dim = self.value(output).dim();
        if out_dim != (1, 1) {
            return Err(DiffError::NonScalarOutput { shape: out_dim });
        }
        if wrt.is_empty() {
            return Ok(Vec::new());
        }
        let start = wrt.iter().map(|n| n.0).min().unwrap_or(0);
        let end = output.0;

        // reach[i - start]: node i depends on some wrt node.
        let mut reach = vec![false; end.saturating_sub(start) + 1];
        if start <= end {
            for w in wrt {
                if w.0 <= end {
                    reach[w.0 - start] = true;
                }
            }
            for i in start..=end {
                if reach[i - start] {
                    continue;
                }
                reach[i - start] = self.nodes[i]
                    .op
                    .inputs()
                    .iter()
                    .any(|p| p.0 >= start && reach[p.0 - start]);
            }
        }

        let mut grads: Vec<Option<NodeId>> = vec![None; end.saturating_sub(start) + 1];
        if start <= end && reach[end - start] {
            grads[end - start] = Some(self.constant_scalar(1.0));
            for i in (start..=end).rev() {
                let Some(g) = grads[i - start] else { continue };
                let op = self.nodes[i].op.clone();
                let node = NodeId(i);
                let need = |n: NodeId| n.0 >= start && reach[n.0 - start];
                for (input, contrib) in self.vjp(node, &op, g, &need)? {
                    if !need(input) {
                        continue;
                    }
                    if self.value(contrib).iter().any(|x| !x.is_finite()) {
                        return Err(DiffError::NonFinite {
                            node: i,
                            op: op.name(),
                        });
                    }
                    let slot = &mut grads[input.0 - start];
                    *slot = Some(match *slot {
                        Some(prev) => self.add(prev, contrib),
                        None => contrib,
                    });
                }
            }
        }

        let mut result = Vec::with_capacity(wrt.len());
        for w in wrt {
            let g = if w.0 <= end { grads[w.0 - start] } else { None };
            let g = match g {
                Some(g) => g,
                None => {
                    let shape = self.value(*w).dim();
                    self.constant(Array2::zeros(shape))
                }
            };
            result.push(g);
        }
        Ok(result)
    }

    /// Convenience wrapper around [`Graph::grad`] returning gradient values.
    pub fn gradient_values(
        &mut self,
        output: NodeId,
        wrt: &[NodeId],
    ) -> Result<Vec<Mat>, DiffError> {
        let ids = self.grad(output, wrt)?;
        Ok(ids.into_iter().map(|id| self.value(id).clone()).collect())
    }

    /// Vector-Jacobian products for one node, emitted as graph nodes.
    fn vjp(
        &mut self,
        node: NodeId,
        op: &Op,
        g: NodeId,
        need: &dyn Fn(NodeId) -> bool,
    ) -> Result<Vec<(NodeId, NodeId)>, DiffError> {
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Constant | Op::Variable | Op::StopGradient(_) => {}
            Op::Add(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, self.neg(g)));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    out.push((a, self.mul(g, b)));
                }
                if need(b) {
                    out.push((b, self.mul(g, a)));
                }
            }
            Op::Neg(a) => out.push((a, self.neg(g))),
            Op::Scale(a, c) => out.push((a, self.scale(g, c))),
            Op::AddScalar(a, _) => out.push((a, g)),
            Op::MatMul(a, b) => {
                if need(a) {
                    let bt = self.transpose(b);
                    out.push((a, self.matmul(g, bt)));
                }
                if need(b) {
                    let at = self.transpose(a);
                    out.push((b, self.matmul(at, g)));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(g))),
            Op::Exp(a) => out.push((a, self.mul(g, node))),
            Op::Log(a) => {
                let r = self.recip(a);
                out.push((a, self.mul(g, r)));
            }
            Op::Tanh(a) => {
                // 1 - tanh²
                let sq = self.mul(node, node);
                let neg = self.neg(sq);
                let d = self.add_scalar(neg, 1.0);
                out.push((a, self.mul(g, d)));
            }
            Op::Sigmoid(a) => {
                let neg = self.neg(node);
                let one_minus = self.add_scalar(neg, 1.0);
                let d = self.mul(node, one_minus);
                out.push((a, self.mul(g, d)));
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a);
                out.push((a, self.mul(g, s)));
            }
            Op::Sin(a) => {
                let c = self.cos(a);
                out.push((a, self.mul(g, c)));
            }
            Op::Cos(a) => {
                let s = self.sin(a);
                let ns = self.neg(s);
                out.push((a, self.mul(g, ns)));
            }
            Op::Recip(a) => {
                let sq = self.mul(node, node);
                let nsq = self.neg(sq);
                out.push((a, self.mul(g, nsq)));
            }
            Op::MaxConst(a, c) => {
                let mask = self.value(a).mapv(|x| if x > c { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                out.push((a, self.mul(g, m)));
            }
            Op::Broadcast(a) => {
                let (r, c) = self.value(a).dim();
                out.push((a, self.sum_to(g, r, c)));
            }
            Op::SumTo(a) => {
                let (r, c) = self.value(a).dim();
                out.push((a, self.broadcast(g, r, c)));
            }
            Op::TileRows(a, k) => out.push((a, self.fold_rows(g, k))),
            Op::FoldRows(a, k) => out.push((a, self.tile_rows(g, k))),
            Op::BatchOuter(u, v) => {
                if need(u) {
                    out.push((u, self.batch_matvec(g, v)));
                }
                if need(v) {
                    out.push((v, self.batch_matvec_t(g, u)));
                }
            }
            Op::BatchMatVec(m, y) => {
                if need(m) {
                    out.push((m, self.batch_outer(g, y)));
                }
                if need(y) {
                    out.push((y, self.batch_matvec_t(m, g)));
                }
            }
            Op::BatchMatVecT(m, x) => {
                if need(m) {
                    out.push((m, self.batch_outer(x, g)));
                }
                if need(x) {
                    out.push((x, self.batch_matvec(m, g)));
                }
            }
            Op::Custom {
                name,
                ref inputs,
                ref grads,
            } => {
                for (input, grad) in inputs.iter().zip(grads) {
                    let Some(grad) = grad else { continue };
                    if !need(*input) {
                        continue;
                    }
                    let opaque = self.push(
                        grad.clone(),
                        Op::OpaqueGrad {
                            origin: name,
                            inputs: inputs.clone(),
                        },
                    );
                    let (r, c) = grad.dim();
                    let gb = self.broadcast(g, r, c);
                    out.push((*input, self.mul(gb, opaque)));
                }
            }
            Op::OpaqueGrad { origin, .. } => {
                return Err(DiffError::Unsupported {
                    op: origin,
                    node: node.0,
                })
            }
        }
        Ok(out)
    }
}
