//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order. Only nodes that depend on a gradient-requiring leaf
//! receive gradients.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::params::ParamStore;
use crate::tensor::Tensor;

const NORM_EPS: f32 = 1e-5;
/// Sigmoid outputs are kept strictly inside (0, 1).
const SIGMOID_EPS: f32 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<f32> },
    LeakyRelu { x: Var, slope: f32 },
    Tanh { x: Var },
    Sigmoid { x: Var },
    InstanceNorm { x: Var, inv_std: Vec<f32> },
    BatchNorm { x: Var, inv_std: Vec<f32> },
    Upsample2 { x: Var },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Concat { a: Var, b: Var },
    GlobalAvgPool { x: Var },
    Linear { x: Var, w: Var, b: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<(u64, usize), Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is wanted.
    pub fn input_tracked(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for parameter `index` of `store`. Repeated requests return the same node.
    /// Frozen parameters behave as constants.
    pub fn param(&mut self, store: &ParamStore, index: usize, trainable: bool) -> Var {
        let key = (store.id(), index);
        if let Some(&v) = self.params.get(&key) {
            assert_eq!(self.needs(v), trainable, "parameter requested as both frozen and trainable");
            return v;
        }
        let v = self.push(
            store.get(index).clone(),
            Op::Param,
            trainable,
        );
        self.params.insert(key, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, in_c, in_h, in_w) = self.value(x).dims4();
        let (out_c, wc, k, k2) = self.value(w).dims4();
        assert_eq!(wc, in_c, "conv channel mismatch");
        assert_eq!(k, k2, "square kernels only");
        let geom = ConvGeom { in_c, in_h, in_w, out_c, kernel: k, stride, pad };
        let (y, cols) = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let out = Tensor::from_vec(&[n, out_c, geom.out_h(), geom.out_w()], y);
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        // Patch matrices are only worth keeping for the weight gradient.
        let cols = if self.needs(w) { cols } else { Vec::new() };
        self.push(out, Op::Conv { x, w, b, geom, cols }, ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.needs(x);
        self.push(out, Op::LeakyRelu { x, slope }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f32::tanh);
        let ng = self.needs(x);
        self.push(out, Op::Tanh { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| sigmoid(v).clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS));
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid { x }, ng)
    }

    pub fn instance_norm(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (y, inv_std) = kernels::instance_norm_forward(self.value(x).data(), n * c, h * w, NORM_EPS);
        let ng = self.needs(x);
        self.push(Tensor::from_vec(&[n, c, h, w], y), Op::InstanceNorm { x, inv_std }, ng)
    }

    /// Normalizes each channel over the batch and spatial axes (no affine terms).
    pub fn batch_norm(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (y, inv_std) = kernels::batch_norm_forward(self.value(x).data(), n, c, h * w, NORM_EPS);
        let ng = self.needs(x);
        self.push(Tensor::from_vec(&[n, c, h, w], y), Op::BatchNorm { x, inv_std }, ng)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let y = kernels::upsample2_forward(self.value(x).data(), n * c, h, w);
        let ng = self.needs(x);
        self.push(Tensor::from_vec(&[n, c, 2 * h, 2 * w], y), Op::Upsample2 { x }, ng)
    }

    pub fn maxpool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (y, argmax) = kernels::maxpool2_forward(self.value(x).data(), n * c, h, w);
        let ng = self.needs(x);
        self.push(Tensor::from_vec(&[n, c, h / 2, w / 2], y), Op::MaxPool2 { x, argmax }, ng)
    }

    /// Channel concatenation of two NCHW tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = self.value(a).dims4();
        let (nb, cb, hb, wb) = self.value(b).dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat spatial mismatch");
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            data.extend_from_slice(&self.value(a).data()[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&self.value(b).data()[i * sb..(i + 1) * sb]);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(&[n, ca + cb, h, w], data), Op::Concat { a, b }, ng)
    }

    /// Spatial mean of each feature map: `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let plane = h * w;
        let y: Vec<f32> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let ng = self.needs(x);
        self.push(Tensor::from_vec(&[n, c], y), Op::GlobalAvgPool { x }, ng)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, f) = self.value(x).dims2();
        let (o, wf) = self.value(w).dims2();
        assert_eq!(f, wf, "linear feature mismatch");
        let y = kernels::linear_forward(self.value(x).data(), n, f, self.value(w).data(), Some(self.value(b).data()), o);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Tensor::from_vec(&[n, o], y), Op::Linear { x, w, b }, ng)
    }

    /// Back-propagates the given output gradients through the tape.
    pub fn backward(&self, seeds: &[(Var, &Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed gradient shape mismatch");
            accumulate(&mut grads, *v, g.data());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let dy = gy.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv { x, w, b, geom, cols } => {
                let n = self.value(*x).shape()[0];
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    (!cols.is_empty()).then_some(cols.as_slice()),
                    n,
                    self.value(*w).data(),
                    dy,
                    geom,
                    self.needs(*x),
                    self.needs(*w),
                    b.is_some_and(|b| self.needs(b)),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *x, &dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, &dw);
                }
                if let (Some(db), Some(b)) = (db, b) {
                    accumulate(grads, *b, &db);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xs = self.value(*x).data();
                let dx: Vec<f32> = xs
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Op::Tanh { x } => {
                let dx: Vec<f32> = node.value.data().iter().zip(dy).map(|(&t, &g)| g * (1.0 - t * t)).collect();
                accumulate(grads, *x, &dx);
            }
            Op::Sigmoid { x } => {
                let dx: Vec<f32> = node.value.data().iter().zip(dy).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                accumulate(grads, *x, &dx);
            }
            Op::InstanceNorm { x, inv_std } => {
                let (_, _, h, w) = node.value.dims4();
                let dx = kernels::instance_norm_backward(node.value.data(), inv_std, dy, h * w);
                accumulate(grads, *x, &dx);
            }
            Op::BatchNorm { x, inv_std } => {
                let (n, _, h, w) = node.value.dims4();
                let dx = kernels::batch_norm_backward(node.value.data(), inv_std, dy, n, h * w);
                accumulate(grads, *x, &dx);
            }
            Op::Upsample2 { x } => {
                let (n, c, h, w) = self.value(*x).dims4();
                accumulate(grads, *x, &kernels::upsample2_backward(dy, n * c, h, w));
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&a, &g) in argmax.iter().zip(dy) {
                    dx[a as usize] += g;
                }
                accumulate(grads, *x, &dx);
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4();
                let cb = self.value(*b).shape()[1];
                let (sa, sb) = (ca * h * w, cb * h * w);
                if self.needs(*a) {
                    let da: Vec<f32> = (0..n).flat_map(|i| dy[i * (sa + sb)..i * (sa + sb) + sa].iter().copied()).collect();
                    accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f32> = (0..n)
                        .flat_map(|i| dy[i * (sa + sb) + sa..(i + 1) * (sa + sb)].iter().copied())
                        .collect();
                    accumulate(grads, *b, &db);
                }
            }
            Op::GlobalAvgPool { x } => {
                let (_, _, h, w) = self.value(*x).dims4();
                let plane = h * w;
                let scale = 1.0 / plane as f32;
                let dx: Vec<f32> = dy.iter().flat_map(|&g| std::iter::repeat_n(g * scale, plane)).collect();
                accumulate(grads, *x, &dx);
            }
            Op::Linear { x, w, b } => {
                let (n, f) = self.value(*x).dims2();
                let o = self.value(*w).shape()[0];
                let (dx, dw, db) = kernels::linear_backward(self.value(*x).data(), n, f, self.value(*w).data(), o, dy);
                if self.needs(*x) {
                    accumulate(grads, *x, &dx);
                }
                if self.needs(*w) {
                    accumulate(grads, *w, &dw);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, &db);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &[f32]) {
    match &mut grads[v.0] {
        Some(t) => t.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(Tensor::from_vec(&[g.len()], g.to_vec())),
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node, shaped like its value. `None` when no seed reaches it.
    pub fn get(&self, graph: &Graph, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| g.clone().reshape(graph.value(v).shape()))
    }

    /// Gradients for every parameter of `store`, in store order; zero for unused ones.
    pub fn for_store(&self, graph: &Graph, store: &ParamStore) -> Vec<Tensor> {
        (0..store.len())
            .map(|i| {
                graph
                    .params
                    .get(&(store.id(), i))
                    .and_then(|&v| self.grads[v.0].as_ref().map(|g| g.clone().reshape(store.get(i).shape())))
                    .unwrap_or_else(|| Tensor::zeros(store.get(i).shape()))
            })
            .collect()
    }

    /// Whether any gradient reached a parameter of `store`.
    pub fn touches(&self, graph: &Graph, store: &ParamStore) -> bool {
        (0..store.len()).any(|i| {
            graph
                .params
                .get(&(store.id(), i))
                .is_some_and(|&v| self.grads[v.0].is_some() && graph.needs(v))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_and_grad(out: &Tensor, target: &[f32]) -> (f64, Tensor) {
        // ½‖out − target‖²
        let diff: Vec<f32> = out.data().iter().zip(target).map(|(a, b)| a - b).collect();
        let loss = diff.iter().map(|&d| 0.5 * (d as f64).powi(2)).sum();
        (loss, Tensor::from_vec(out.shape(), diff))
    }

    fn pseudo(n: usize, seed: f32) -> Vec<f32> {
        (0..n).map(|i| ((i as f32 + 1.0) * seed).sin() * 0.8).collect()
    }

    /// A small network touching every op; returns the output node.
    fn net(g: &mut Graph, store: &ParamStore, x: Var, trainable: bool) -> Var {
        let w1 = g.param(store, 0, trainable);
        let b1 = g.param(store, 1, trainable);
        let h = g.conv2d(x, w1, Some(b1), 2, 1);
        let h = g.instance_norm(h);
        let h = g.batch_norm(h);
        let h = g.leaky_relu(h, 0.2);
        let u = g.upsample2(h);
        let c = g.concat(u, x);
        let w2 = g.param(store, 2, trainable);
        let h2 = g.conv2d(c, w2, None, 1, 1);
        let t = g.tanh(h2);
        let p = g.maxpool2(t);
        let s = g.sigmoid(p);
        let gap = g.global_avg_pool(s);
        let w3 = g.param(store, 3, trainable);
        let b3 = g.param(store, 4, trainable);
        g.linear(gap, w3, b3)
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.push("w1", Tensor::from_vec(&[3, 2, 4, 4], pseudo(96, 0.37)));
        s.push("b1", Tensor::from_vec(&[3], pseudo(3, 1.7)));
        s.push("w2", Tensor::from_vec(&[4, 5, 3, 3], pseudo(180, 0.53)));
        s.push("w3", Tensor::from_vec(&[2, 4], pseudo(8, 0.91)));
        s.push("b3", Tensor::from_vec(&[2], pseudo(2, 2.1)));
        s
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn parameter_gradients_match_finite_differences() {
        let x = Tensor::from_vec(&[2, 2, 4, 4], pseudo(64, 0.77));
        let target = [0.3f32, -0.2, 0.1, 0.4];
        let mut s = store();
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let out = net(&mut g, &s, xi, true);
        let (_, seed) = loss_and_grad(g.value(out), &target);
        let grads = g.backward(&[(out, &seed)]).for_store(&g, &s);

        let eval = |s: &ParamStore| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let out = net(&mut g, s, xi, false);
            loss_and_grad(g.value(out), &target).0
        };
        let h = 1e-2f32;
        for pi in 0..s.len() {
            for j in [0, s.get(pi).len() / 2, s.get(pi).len() - 1] {
                let orig = s.get(pi).data()[j];
                s.get_mut(pi).data_mut()[j] = orig + h;
                let up = eval(&s);
                s.get_mut(pi).data_mut()[j] = orig - h;
                let down = eval(&s);
                s.get_mut(pi).data_mut()[j] = orig;
                let fd = (up - down) / (2.0 * h as f64);
                let an = grads[pi].data()[j] as f64;
                assert!((fd - an).abs() < 2e-3 * (1.0 + fd.abs()), "param {pi}[{j}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn frozen_parameters_receive_nothing() {
        let s = store();
        let mut g = Graph::new();
        let xi = g.input_tracked(Tensor::from_vec(&[1, 2, 4, 4], pseudo(32, 0.5)));
        let out = net(&mut g, &s, xi, false);
        let seed = Tensor::full(g.value(out).shape(), 1.0);
        let grads = g.backward(&[(out, &seed)]);
        assert!(!grads.touches(&g, &s));
        assert!(grads.get(&g, xi).is_some());
    }
}
