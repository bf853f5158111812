use ndarray::Array2;

use super::{Bound, Model, ModelError, VariantKind, SIGMA_FLOOR};
use crate::autodiff::{DiffError, Graph, Mat, NodeId};
use crate::time_codes::{alpha_graph, fourier_bank, time2vec_graph, Time2VecNodes, FOURIER_DIM};

/// Which time code conditions a trunk pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeCode {
    Time2vec,
    Fourier,
}

/// Graph nodes of one step over a batch of `B` states with `K` noise draws.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub alpha: NodeId,
    /// `B×1`; absent for the unconstrained variant.
    pub potential: Option<NodeId>,
    /// `−∇_z U`, `B×d`.
    pub grad_term: Option<NodeId>,
    /// `S z`, `B×d`.
    pub curl_term: Option<NodeId>,
    pub sigma: Option<NodeId>,
    /// Prediction with `ε = 0`, `B×d`.
    pub z_det: NodeId,
    /// `K·B×d`; row `k·B + b` is draw `k` for state `b`.
    pub z_hat: NodeId,
}

/// Evaluated residual components for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualParts {
    pub alpha: f64,
    pub grad_term: Option<Mat>,
    pub curl_term: Option<Mat>,
    pub sigma: Option<Mat>,
    pub z_det: Mat,
    pub z_hat: Mat,
}

fn finite(g: &Graph, n: NodeId, component: &'static str) -> Result<(), ModelError> {
    if g.value(n).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { component })
    }
}

fn affine(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let xw = g.matmul(x, w);
    let (r, c) = g.value(xw).dim();
    let bb = g.broadcast(b, r, c);
    g.add(xw, bb)
}

impl Model {
    fn check_delta(delta: f64) -> Result<(), ModelError> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(ModelError::NegativeDelta(delta));
        }
        Ok(())
    }

    fn check_states(&self, z: &Mat) -> Result<(), ModelError> {
        if z.ncols() != self.config.dim {
            return Err(ModelError::DimMismatch {
                expected: self.config.dim,
                got: z.ncols(),
            });
        }
        Ok(())
    }

    fn check_action(&self, action: Option<&Mat>) -> Result<(), ModelError> {
        if let Some(a) = action {
            if a.dim() != (1, self.config.width) {
                return Err(ModelError::DimMismatch {
                    expected: self.config.width,
                    got: a.len(),
                });
            }
        }
        Ok(())
    }

    /// Codes conditioning the potential and antisymmetric branches.
    pub fn branch_codes(&self) -> (TimeCode, TimeCode) {
        match self.config.variant {
            VariantKind::Selected | VariantKind::Unconstrained => {
                (TimeCode::Time2vec, TimeCode::Fourier)
            }
            VariantKind::TiedTime2vec => (TimeCode::Time2vec, TimeCode::Time2vec),
            VariantKind::TiedFourier => (TimeCode::Fourier, TimeCode::Fourier),
        }
    }

    /// Projected time embedding `E`, `1×time_width`.
    pub fn embedding_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        code: TimeCode,
        delta: f64,
    ) -> NodeId {
        let dn = self.delta_scale.normalize(delta);
        match code {
            TimeCode::Time2vec => {
                let nodes = Time2VecNodes {
                    omega_raw: b.get("t2v.omega_raw"),
                    phase: b.get("t2v.phase"),
                };
                let c = time2vec_graph(g, nodes, dn);
                affine(g, c, b.get("embed.t2v.w"), b.get("embed.t2v.b"))
            }
            TimeCode::Fourier => {
                let f = fourier_bank(dn);
                let c = g.constant(Array2::from_shape_vec((1, FOURIER_DIM), f.to_vec()).unwrap());
                affine(g, c, b.get("embed.fourier.w"), b.get("embed.fourier.b"))
            }
        }
    }

    /// Shared trunk: input projection, then residual layers
    /// `h ← h + tanh((h W + b) ⊙ (1 + γ(E)) + β(E))`.
    pub fn trunk_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        z: NodeId,
        noise: Option<NodeId>,
        e: NodeId,
        action: Option<&Mat>,
    ) -> NodeId {
        let rows = g.value(z).nrows();
        let w = self.config.width;
        let mut h = g.matmul(z, b.get("trunk.in.w"));
        if let Some(eps) = noise {
            let hn = g.matmul(eps, b.get("trunk.in_noise.w"));
            h = g.add(h, hn);
        }
        let bias = g.broadcast(b.get("trunk.in.b"), rows, w);
        h = g.add(h, bias);
        if let Some(a) = action {
            let an = g.constant(a.clone());
            let ab = g.broadcast(an, rows, w);
            h = g.add(h, ab);
        }
        for l in 0..self.config.depth {
            let pre = affine(g, h, b.get(&format!("trunk.l{l}.w")), b.get(&format!("trunk.l{l}.b")));
            let gamma = affine(
                g,
                e,
                b.get(&format!("trunk.l{l}.gamma.w")),
                b.get(&format!("trunk.l{l}.gamma.b")),
            );
            let beta = affine(
                g,
                e,
                b.get(&format!("trunk.l{l}.beta.w")),
                b.get(&format!("trunk.l{l}.beta.b")),
            );
            let scale = g.add_scalar(gamma, 1.0);
            let scale = g.broadcast(scale, rows, w);
            let shift = g.broadcast(beta, rows, w);
            let m = g.mul(pre, scale);
            let m = g.add(m, shift);
            let t = g.tanh(m);
            h = g.add(h, t);
        }
        h
    }

    /// `U(z)` per row, `B×1`; `None` for the unconstrained variant.
    pub fn potential_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        z: NodeId,
        delta: f64,
        action: Option<&Mat>,
    ) -> Option<NodeId> {
        if self.config.variant == VariantKind::Unconstrained {
            return None;
        }
        let (code_u, _) = self.branch_codes();
        let e = self.embedding_graph(g, b, code_u, delta);
        let h = self.trunk_graph(g, b, z, None, e, action);
        Some(affine(g, h, b.get("head.u.w"), b.get("head.u.b")))
    }

    /// Records one step for the states in `z` (`B×d`) and `noise`
    /// (`K·B×d`).
    pub fn step_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        z: NodeId,
        delta: f64,
        action: Option<&Mat>,
        noise: &Mat,
    ) -> Result<StepNodes, ModelError> {
        Self::check_delta(delta)?;
        self.check_states(g.value(z))?;
        self.check_action(action)?;
        let (rows, d) = g.value(z).dim();
        if noise.ncols() != d {
            return Err(ModelError::DimMismatch {
                expected: d,
                got: noise.ncols(),
            });
        }
        if rows == 0 || noise.nrows() == 0 || noise.nrows() % rows != 0 {
            return Err(ModelError::NoiseShape {
                got: noise.nrows(),
                batch: rows,
            });
        }
        let k = noise.nrows() / rows;
        let alpha = alpha_graph(g, b.get("gate.tau_raw"), delta);

        if self.config.variant == VariantKind::Unconstrained {
            return self.unconstrained_step(g, b, z, delta, action, noise, k, alpha);
        }

        let (code_u, code_c) = self.branch_codes();
        let e_u = self.embedding_graph(g, b, code_u, delta);
        let h_u = self.trunk_graph(g, b, z, None, e_u, action);
        let u = affine(g, h_u, b.get("head.u.w"), b.get("head.u.b"));
        let su = g.sum(u);
        let grad_u = match g.grad(su, &[z]) {
            Ok(v) => v[0],
            Err(DiffError::NonFinite { .. }) => {
                return Err(ModelError::NonFinite {
                    component: "potential gradient",
                })
            }
            Err(e) => return Err(e.into()),
        };
        finite(g, grad_u, "potential gradient")?;
        let grad_term = g.neg(grad_u);

        let h_c = if code_c == code_u {
            h_u
        } else {
            let e_c = self.embedding_graph(g, b, code_c, delta);
            self.trunk_graph(g, b, z, None, e_c, action)
        };
        let p = affine(g, h_c, b.get("head.p.w"), b.get("head.p.b"));
        let q = affine(g, h_c, b.get("head.q.w"), b.get("head.q.b"));
        let qz = g.batch_matvec_t(q, z);
        let pqz = g.batch_matvec(p, qz);
        let pz = g.batch_matvec_t(p, z);
        let qpz = g.batch_matvec(q, pz);
        let curl = g.sub(pqz, qpz);
        finite(g, curl, "antisymmetric")?;

        let s_raw = affine(g, h_u, b.get("head.sigma.w"), b.get("head.sigma.b"));
        let s = g.softplus(s_raw);
        let sigma = g.add_scalar(s, SIGMA_FLOOR);
        finite(g, sigma, "noise scale")?;

        let det = g.add(grad_term, curl);
        let a_b = g.broadcast(alpha, rows, d);
        let step = g.mul(a_b, det);
        let z_det = g.add(z, step);

        let zt = g.tile_rows(z, k);
        let dt = g.tile_rows(det, k);
        let st = g.tile_rows(sigma, k);
        let eps = g.constant(noise.clone());
        let spread = g.mul(st, eps);
        let inner = g.add(dt, spread);
        let a_k = g.broadcast(alpha, rows * k, d);
        let step = g.mul(a_k, inner);
        let z_hat = g.add(zt, step);
        finite(g, z_hat, "output")?;

        Ok(StepNodes {
            alpha,
            potential: Some(u),
            grad_term: Some(grad_term),
            curl_term: Some(curl),
            sigma: Some(sigma),
            z_det,
            z_hat,
        })
    }

    fn residual_head(&self, g: &mut Graph, b: &Bound, h: NodeId) -> NodeId {
        let hid = affine(g, h, b.get("head.r.hidden.w"), b.get("head.r.hidden.b"));
        let hid = g.tanh(hid);
        affine(g, hid, b.get("head.r.out.w"), b.get("head.r.out.b"))
    }

    #[allow(clippy::too_many_arguments)]
    fn unconstrained_step(
        &self,
        g: &mut Graph,
        b: &Bound,
        z: NodeId,
        delta: f64,
        action: Option<&Mat>,
        noise: &Mat,
        k: usize,
        alpha: NodeId,
    ) -> Result<StepNodes, ModelError> {
        let (rows, d) = g.value(z).dim();
        let e_t = self.embedding_graph(g, b, TimeCode::Time2vec, delta);
        let e_f = self.embedding_graph(g, b, TimeCode::Fourier, delta);
        let e = g.add(e_t, e_f);

        let zeros = g.constant(Array2::zeros((rows, d)));
        let h0 = self.trunk_graph(g, b, z, Some(zeros), e, action);
        let r0 = self.residual_head(g, b, h0);
        let a_b = g.broadcast(alpha, rows, d);
        let step = g.mul(a_b, r0);
        let z_det = g.add(z, step);

        let zt = g.tile_rows(z, k);
        let eps = g.constant(noise.clone());
        let h = self.trunk_graph(g, b, zt, Some(eps), e, action);
        let r = self.residual_head(g, b, h);
        finite(g, r, "residual")?;
        let a_k = g.broadcast(alpha, rows * k, d);
        let step = g.mul(a_k, r);
        let z_hat = g.add(zt, step);
        finite(g, z_hat, "output")?;
        Ok(StepNodes {
            alpha,
            potential: None,
            grad_term: None,
            curl_term: None,
            sigma: None,
            z_det,
            z_hat,
        })
    }

    /// One step for a batch: `K = noise.nrows() / z.nrows()` draws per state.
    pub fn one_step(
        &self,
        z: &Mat,
        delta: f64,
        action: Option<&Mat>,
        noise: &Mat,
    ) -> Result<ResidualParts, ModelError> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let zn = g.constant(z.clone());
        let s = self.step_graph(&mut g, &b, zn, delta, action, noise)?;
        let get = |n: Option<NodeId>| n.map(|n| g.value(n).clone());
        Ok(ResidualParts {
            alpha: g.scalar(s.alpha),
            grad_term: get(s.grad_term),
            curl_term: get(s.curl_term),
            sigma: get(s.sigma),
            z_det: g.value(s.z_det).clone(),
            z_hat: g.value(s.z_hat).clone(),
        })
    }

    /// Deterministic prediction (`ε = 0`) for each state.
    pub fn predict_mean(&self, z: &Mat, delta: f64, action: Option<&Mat>) -> Result<Mat, ModelError> {
        let noise = Array2::zeros(z.dim());
        Ok(self.one_step(z, delta, action, &noise)?.z_det)
    }

    /// `U(z)` per state.
    pub fn potential(&self, z: &Mat, delta: f64, action: Option<&Mat>) -> Result<Vec<f64>, ModelError> {
        Self::check_delta(delta)?;
        self.check_states(z)?;
        self.check_action(action)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let zn = g.constant(z.clone());
        let u = self
            .potential_graph(&mut g, &b, zn, delta, action)
            .ok_or_else(|| ModelError::Config("variant has no potential head".into()))?;
        Ok(g.value(u).iter().copied().collect())
    }

    /// `∇_z U(z)` per state, `B×d`.
    pub fn potential_grad(&self, z: &Mat, delta: f64, action: Option<&Mat>) -> Result<Mat, ModelError> {
        Self::check_delta(delta)?;
        self.check_states(z)?;
        self.check_action(action)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let zn = g.constant(z.clone());
        let u = self
            .potential_graph(&mut g, &b, zn, delta, action)
            .ok_or_else(|| ModelError::Config("variant has no potential head".into()))?;
        let su = g.sum(u);
        let gz = g.grad(su, &[zn])?[0];
        Ok(g.value(gz).clone())
    }

    /// `σ(z)` per state, `B×d`.
    pub fn noise_scale(&self, z: &Mat, delta: f64, action: Option<&Mat>) -> Result<Mat, ModelError> {
        let noise = Array2::zeros(z.dim());
        self.one_step(z, delta, action, &noise)?
            .sigma
            .ok_or_else(|| ModelError::Config("variant has no noise head".into()))
    }

    /// Low-rank factors `(P, Q)` per state; row `b` holds a `d×r` matrix.
    pub fn curl_factors(
        &self,
        z: &Mat,
        delta: f64,
        action: Option<&Mat>,
    ) -> Result<(Mat, Mat), ModelError> {
        Self::check_delta(delta)?;
        self.check_states(z)?;
        self.check_action(action)?;
        if self.config.variant == VariantKind::Unconstrained {
            return Err(ModelError::Config("variant has no antisymmetric head".into()));
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let zn = g.constant(z.clone());
        let (_, code_c) = self.branch_codes();
        let e = self.embedding_graph(&mut g, &b, code_c, delta);
        let h = self.trunk_graph(&mut g, &b, zn, None, e, action);
        let p = affine(&mut g, h, b.get("head.p.w"), b.get("head.p.b"));
        let q = affine(&mut g, h, b.get("head.q.w"), b.get("head.q.b"));
        Ok((g.value(p).clone(), g.value(q).clone()))
    }

    /// Materialized `S = PQᵀ − QPᵀ` for each state. Used for inspection; the
    /// step itself never forms `S`.
    pub fn antisym_matrices(
        &self,
        z: &Mat,
        delta: f64,
        action: Option<&Mat>,
    ) -> Result<Vec<Mat>, ModelError> {
        let (p, q) = self.curl_factors(z, delta, action)?;
        let (d, r) = (self.config.dim, self.config.rank);
        Ok((0..z.nrows())
            .map(|row| {
                let pm = Array2::from_shape_fn((d, r), |(i, k)| p[[row, i * r + k]]);
                let qm = Array2::from_shape_fn((d, r), |(i, k)| q[[row, i * r + k]]);
                pm.dot(&qm.t()) - qm.dot(&pm.t())
            })
            .collect())
    }

    /// Time embedding `E` for a code at elapsed time `delta`.
    pub fn embedding(&self, code: TimeCode, delta: f64) -> Result<Mat, ModelError> {
        Self::check_delta(delta)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let uses = match code {
            TimeCode::Time2vec => b.try_get("t2v.omega_raw").is_some(),
            TimeCode::Fourier => b.try_get("embed.fourier.w").is_some(),
        };
        if !uses {
            return Err(ModelError::Config(format!("variant has no {code:?} code")));
        }
        let e = self.embedding_graph(&mut g, &b, code, delta);
        Ok(g.value(e).clone())
    }

    /// Trunk features for states `z` under embedding `e` (`1×time_width`).
    pub fn trunk_features(&self, z: &Mat, e: &Mat, action: Option<&Mat>) -> Result<Mat, ModelError> {
        self.check_states(z)?;
        self.check_action(action)?;
        if e.dim() != (1, self.config.time_width) {
            return Err(ModelError::DimMismatch {
                expected: self.config.time_width,
                got: e.len(),
            });
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let zn = g.constant(z.clone());
        let en = g.constant(e.clone());
        let noise = (self.config.variant == VariantKind::Unconstrained)
            .then(|| g.constant(Array2::zeros(z.dim())));
        let h = self.trunk_graph(&mut g, &b, zn, noise, en, action);
        Ok(g.value(h).clone())
    }
}
