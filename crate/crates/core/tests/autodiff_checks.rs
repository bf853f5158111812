//! Finite-difference checks of the differentiation engine, first and second
//! order, over randomly composed functions.

use chreode::autodiff::{grad_wrt_input, Graph, Mat, NodeId};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// |a − b| relative to the larger magnitude, floored so that gradients near
/// zero are compared on an absolute scale.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// A random program over the supported op set, replayable on any graph.
#[derive(Clone, Debug)]
enum Step {
    Unary(u8, usize),
    Binary(u8, usize, usize),
    MatMul(usize, Mat),
    MaxConst(usize, f64),
    Reduce(usize),
}

fn random_program(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Step> {
    let n_steps = rng.random_range(3..9);
    let mut steps = Vec::new();
    for k in 0..n_steps {
        // pool index 0 is z, then one entry per step
        let pool = k + 1;
        let pick = |rng: &mut ChaCha8Rng| rng.random_range(0..pool);
        let step = match rng.random_range(0..10) {
            0..=3 => Step::Unary(rng.random_range(0..9), pick(rng)),
            4..=6 => Step::Binary(rng.random_range(0..3), pick(rng), pick(rng)),
            7 => Step::MatMul(pick(rng), randn(rng, dim, dim, 0.5)),
            8 => Step::MaxConst(pick(rng), rng.random_range(-0.5..0.5)),
            _ => Step::Reduce(pick(rng)),
        };
        steps.push(step);
    }
    steps
}

/// Replays `prog`; every intermediate is a `1×dim` row. Returns `None` when a
/// max-with-constant lands within `margin` of its kink, where central
/// differences are meaningless.
fn replay(g: &mut Graph, z: NodeId, prog: &[Step], margin: f64) -> Option<NodeId> {
    let mut pool = vec![z];
    for step in prog {
        let node = match step {
            Step::Unary(kind, i) => {
                let x = pool[*i];
                // keep arguments in the domain and away from overflow
                let t = g.tanh(x);
                match kind {
                    0 => g.exp(t),
                    1 => {
                        let sp = g.softplus(x);
                        let shifted = g.add_scalar(sp, 0.5);
                        g.ln(shifted)
                    }
                    2 => g.tanh(x),
                    3 => g.sigmoid(x),
                    4 => g.softplus(x),
                    5 => g.sin(x),
                    6 => g.cos(x),
                    7 => {
                        let sq = g.mul(t, t);
                        let pos = g.add_scalar(sq, 1.0);
                        g.recip(pos)
                    }
                    _ => g.neg(x),
                }
            }
            Step::Binary(kind, i, j) => {
                let (a, b) = (pool[*i], pool[*j]);
                match kind {
                    0 => g.add(a, b),
                    1 => g.sub(a, b),
                    _ => {
                        let ta = g.tanh(a);
                        g.mul(ta, b)
                    }
                }
            }
            Step::MatMul(i, w) => {
                let wn = g.constant(w.clone());
                g.matmul(pool[*i], wn)
            }
            Step::MaxConst(i, c) => {
                let x = pool[*i];
                if g.value(x).iter().any(|v| (v - c).abs() < margin) {
                    return None;
                }
                g.max_const(x, *c)
            }
            Step::Reduce(i) => {
                let x = pool[*i];
                let cols = g.value(x).ncols();
                let s = g.sum(x);
                let t = g.tanh(s);
                g.broadcast(t, 1, cols)
            }
        };
        pool.push(node);
    }
    let last = *pool.last().unwrap();
    let w = g.constant(Array2::from_shape_fn((1, g.value(last).ncols()), |(_, j)| {
        1.0 + 0.1 * j as f64
    }));
    let weighted = g.mul(last, w);
    Some(g.sum(weighted))
}

fn eval(prog: &[Step], z: &[f64]) -> Option<f64> {
    let mut g = Graph::new();
    let zn = g.constant(Array2::from_shape_vec((1, z.len()), z.to_vec()).unwrap());
    replay(&mut g, zn, prog, 0.0).map(|o| g.scalar(o))
}

#[test]
fn first_order_matches_central_differences_on_random_programs() {
    let dim = 4;
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let prog = random_program(&mut rng, dim);
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut g = Graph::new();
        let zn = g.variable(Array2::from_shape_vec((1, dim), z.clone()).unwrap());
        let Some(out) = replay(&mut g, zn, &prog, 1e-3) else { continue };
        let grad = g.gradient_values(out, &[zn]).unwrap().remove(0);
        for i in 0..dim {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] += h;
            zm[i] -= h;
            let fd = (eval(&prog, &zp).unwrap() - eval(&prog, &zm).unwrap()) / (2.0 * h);
            let e = rel_err(grad[[0, i]], fd, 1e-3);
            worst = worst.max(e);
            assert!(e < 1e-6, "program {prog:?} coord {i}: engine {} fd {fd}", grad[[0, i]]);
        }
        checked += 1;
    }
    println!("worst first-order relative error over 100 programs: {worst:.2e}");
}

struct Mlp {
    w1: Mat,
    b1: Mat,
    w2: Mat,
    w3: Mat,
}

impl Mlp {
    fn random(rng: &mut ChaCha8Rng, dim: usize, width: usize) -> Self {
        Self {
            w1: randn(rng, dim, width, 1.0 / (dim as f64).sqrt()),
            b1: randn(rng, 1, width, 0.1),
            w2: randn(rng, width, width, 1.0 / (width as f64).sqrt()),
            w3: randn(rng, width, 1, 1.0 / (width as f64).sqrt()),
        }
    }

    fn scalar_head(&self, g: &mut Graph, z: NodeId, leaves: &[NodeId; 4]) -> NodeId {
        let h = g.matmul(z, leaves[0]);
        let rows = g.value(h).nrows();
        let cols = g.value(h).ncols();
        let b = g.broadcast(leaves[1], rows, cols);
        let h = g.add(h, b);
        let h = g.tanh(h);
        let h2 = g.matmul(h, leaves[2]);
        let h2 = g.softplus(h2);
        let u = g.matmul(h2, leaves[3]);
        g.sum(u)
    }

    fn leaves(&self, g: &mut Graph, variable: bool) -> [NodeId; 4] {
        let mk = |g: &mut Graph, m: &Mat| {
            if variable {
                g.variable(m.clone())
            } else {
                g.constant(m.clone())
            }
        };
        [mk(g, &self.w1), mk(g, &self.b1), mk(g, &self.w2), mk(g, &self.w3)]
    }
}

#[test]
fn mlp_scalar_head_input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mlp = Mlp::random(&mut rng, 4, 8);
    let z: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let f = |zz: &[f64]| {
        let mut g = Graph::new();
        let leaves = mlp.leaves(&mut g, false);
        let zn = g.constant(Array2::from_shape_vec((1, 4), zz.to_vec()).unwrap());
        let u = mlp.scalar_head(&mut g, zn, &leaves);
        g.scalar(u)
    };
    let grad = grad_wrt_input(
        |g, zn| {
            let leaves = mlp.leaves(g, false);
            mlp.scalar_head(g, zn, &leaves)
        },
        &z,
    )
    .unwrap();
    let h = 1e-5;
    for i in 0..4 {
        let (mut zp, mut zm) = (z.clone(), z.clone());
        zp[i] += h;
        zm[i] -= h;
        let fd = (f(&zp) - f(&zm)) / (2.0 * h);
        assert!(rel_err(grad[i], fd, 1e-3) < 1e-6, "coord {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn quadratic_form_nested_gradient_matches_finite_differences() {
    // L(A) = ‖∇_z(½ zᵀAz)‖², ∇_z = ½(A + Aᵀ)z
    let z = Array2::from_shape_vec((2, 1), vec![0.7, -1.3]).unwrap();
    let a0 = ndarray::array![[1.0, 0.4], [-0.3, 2.0]];
    let loss = |a: &Mat, want_grad: bool| -> (f64, Option<Mat>) {
        let mut g = Graph::new();
        let an = g.variable(a.clone());
        let zn = g.variable(z.clone());
        let zt = g.transpose(zn);
        let az = g.matmul(an, zn);
        let q = g.matmul(zt, az);
        let f = g.scale(q, 0.5);
        let gz = g.grad(f, &[zn]).unwrap()[0];
        let sq = g.mul(gz, gz);
        let l = g.sum(sq);
        let grad = want_grad.then(|| g.gradient_values(l, &[an]).unwrap().remove(0));
        (g.scalar(l), grad)
    };
    let (_, grad) = loss(&a0, true);
    let grad = grad.unwrap();
    let h = 1e-6;
    for i in 0..2 {
        for j in 0..2 {
            let mut ap = a0.clone();
            let mut am = a0.clone();
            ap[[i, j]] += h;
            am[[i, j]] -= h;
            let fd = (loss(&ap, false).0 - loss(&am, false).0) / (2.0 * h);
            assert!(rel_err(grad[[i, j]], fd, 1e-3) < 1e-6, "({i},{j}) {} vs {fd}", grad[[i, j]]);
        }
    }
}

#[test]
fn second_order_matches_finite_differences_of_first_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let (dim, width) = (3, 6);
    for case in 0..20 {
        let mlp = Mlp::random(&mut rng, dim, width);
        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        // L(θ) = c · ∇_z f(z; θ)
        let run = |m: &Mlp, want: bool| -> (f64, Option<Vec<Mat>>) {
            let mut g = Graph::new();
            let leaves = m.leaves(&mut g, true);
            let zn = g.variable(Array2::from_shape_vec((1, dim), z.clone()).unwrap());
            let f = m.scalar_head(&mut g, zn, &leaves);
            let gz = g.grad(f, &[zn]).unwrap()[0];
            let cn = g.constant(Array2::from_shape_vec((1, dim), c.clone()).unwrap());
            let prod = g.mul(gz, cn);
            let l = g.sum(prod);
            let grads = want.then(|| g.gradient_values(l, &leaves).unwrap());
            (g.scalar(l), grads)
        };
        let (_, grads) = run(&mlp, true);
        let grads = grads.unwrap();
        let h = 1e-5;
        for (block, analytic) in grads.iter().enumerate() {
            for idx in 0..analytic.len() {
                let perturb = |sign: f64| {
                    let mut m = Mlp {
                        w1: mlp.w1.clone(),
                        b1: mlp.b1.clone(),
                        w2: mlp.w2.clone(),
                        w3: mlp.w3.clone(),
                    };
                    let target = match block {
                        0 => &mut m.w1,
                        1 => &mut m.b1,
                        2 => &mut m.w2,
                        _ => &mut m.w3,
                    };
                    let cols = target.ncols();
                    target[[idx / cols, idx % cols]] += sign * h;
                    run(&m, false).0
                };
                let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * h);
                let cols = analytic.ncols();
                let an = analytic[[idx / cols, idx % cols]];
                assert!(
                    rel_err(an, fd, 1e-3) < 1e-5,
                    "case {case} block {block} idx {idx}: {an} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn gradients_are_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::random(&mut rng, 4, 8);
        let mut g = Graph::new();
        let leaves = mlp.leaves(&mut g, true);
        let zn = g.variable(randn(&mut rng, 5, 4, 1.0));
        let f = mlp.scalar_head(&mut g, zn, &leaves);
        let gz = g.grad(f, &[zn]).unwrap()[0];
        let sq = g.mul(gz, gz);
        let l = g.sum(sq);
        g.gradient_values(l, &leaves).unwrap()
    };
    let a = run();
    let b = run();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
