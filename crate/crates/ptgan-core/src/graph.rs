//! Define-by-run reverse-mode automatic differentiation on a tape.
//!
//! Each training step builds a fresh [`Graph`]; forward values are computed
//! eagerly as nodes are appended, and [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients into every node that requires them. The
//! tape order is the topological order, so a single reverse sweep suffices
//! even when a node feeds several consumers (a generator output feeding both
//! the cycle path and a discriminator, for example).

use crate::conv::{
    conv_backward_bias, conv_backward_data, conv_backward_weight, conv_forward, ConvGeom,
};
use crate::tensor::{Bchw, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Abs(Var),
    Sqrt(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    /// Fractionally-strided convolution. `geom` is stored in the orientation
    /// of the underlying ordinary convolution (the one this op is the adjoint
    /// of), so the three conv primitives are reused unchanged.
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    MeanAll(Var),
    SumPerSample(Var),
    MeanSpatial(Var),
    BceWithLogitsMean {
        scores: Var,
        target: f64,
    },
    SoftmaxCrossEntropyMean {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are retained after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-trainable leaf: data, masks, targets.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Copies a node's value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(value, rg, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(value, rg, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, rg, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(value, rg, Op::Abs(a))
    }

    /// Elementwise square root. The derivative is clamped to 0 where the
    /// input vanishes so a perfectly reconstructed sample does not poison the
    /// whole gradient with infinities.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        let rg = self.rg(a);
        self.push(value, rg, Op::Sqrt(a))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let value = conv_forward(self.value(x), self.value(w), Some(self.value(b)), &geom);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(value, rg, Op::Conv2d { x, w, b, geom })
    }

    /// Stride-1/2 convolution: doubles the spatial size. `geom` describes the
    /// ordinary convolution it inverts, i.e. `geom.in_channels` is this op's
    /// output channel count and `geom.out_channels` its input channel count.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let s = Bchw::of(self.value(x));
        let (out_h, out_w) = (s.height * geom.stride, s.width * geom.stride);
        let mut value = conv_backward_data(self.value(x), self.value(w), &geom, out_h, out_w);
        let bias = self.value(b);
        let os = Bchw::of(&value);
        let plane = os.pixels();
        for bi in 0..os.batch {
            for c in 0..os.channels {
                let bv = bias.data()[c];
                let off = (bi * os.channels + c) * plane;
                for v in &mut value.data_mut()[off..off + plane] {
                    *v += bv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(value, rg, Op::ConvTranspose2d { x, w, b, geom })
    }

    /// Per-sample, per-channel normalization with learned affine parameters.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let s = Bchw::of(self.value(x));
        let n = s.pixels();
        let mut mean = vec![0.0; s.batch * s.channels];
        let mut inv_std = vec![0.0; s.batch * s.channels];
        let mut value = Tensor::zeros(&self.value(x).dims().to_vec());
        {
            let xv = self.value(x).data();
            let g = self.value(gamma).data();
            let be = self.value(beta).data();
            let out = value.data_mut();
            for bi in 0..s.batch {
                for c in 0..s.channels {
                    let off = (bi * s.channels + c) * n;
                    let slice = &xv[off..off + n];
                    let m = slice.iter().sum::<f64>() / n as f64;
                    let var = slice.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                    let is = 1.0 / (var + EPS).sqrt();
                    mean[bi * s.channels + c] = m;
                    inv_std[bi * s.channels + c] = is;
                    for (o, &v) in out[off..off + n].iter_mut().zip(slice.iter()) {
                        *o = g[c] * (v - m) * is + be[c];
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            rg,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
        )
    }

    /// Fully connected layer: `x [B,D] * w [D,K] + b [K]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xd = self.value(x).dims().to_vec();
        let wd = self.value(w).dims().to_vec();
        assert_eq!(xd.len(), 2);
        assert_eq!(wd.len(), 2);
        assert_eq!(xd[1], wd[0], "linear: {}-d input vs {}-row weight", xd[1], wd[0]);
        let (bsz, d, k) = (xd[0], xd[1], wd[1]);
        let mut value = Tensor::zeros(&[bsz, k]);
        unsafe {
            matrixmultiply::dgemm(
                bsz,
                d,
                k,
                1.0,
                self.value(x).data().as_ptr(),
                d as isize,
                1,
                self.value(w).data().as_ptr(),
                k as isize,
                1,
                0.0,
                value.data_mut().as_mut_ptr(),
                k as isize,
                1,
            );
        }
        let bias = self.value(b).data();
        for row in 0..bsz {
            for col in 0..k {
                value.data_mut()[row * k + col] += bias[col];
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(value, rg, Op::Linear { x, w, b })
    }

    /// Mean over every element, producing a scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(value, rg, Op::MeanAll(a))
    }

    /// Sums all non-batch dimensions: `[B, ...] -> [B]`.
    pub fn sum_per_sample(&mut self, a: Var) -> Var {
        let dims = self.value(a).dims();
        let batch = dims[0];
        let per = self.value(a).len() / batch;
        let mut out = Tensor::zeros(&[batch]);
        for bi in 0..batch {
            out.data_mut()[bi] = self.value(a).data()[bi * per..(bi + 1) * per].iter().sum();
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::SumPerSample(a))
    }

    /// Global average pooling: `[B,C,H,W] -> [B,C]`.
    pub fn mean_spatial(&mut self, a: Var) -> Var {
        let s = Bchw::of(self.value(a));
        let n = s.pixels();
        let mut out = Tensor::zeros(&[s.batch, s.channels]);
        for bi in 0..s.batch {
            for c in 0..s.channels {
                let off = (bi * s.channels + c) * n;
                out.data_mut()[bi * s.channels + c] =
                    self.value(a).data()[off..off + n].iter().sum::<f64>() / n as f64;
            }
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::MeanSpatial(a))
    }

    /// Numerically stable mean binary cross-entropy of logits against a
    /// constant target in {0, 1}.
    pub fn bce_with_logits_mean(&mut self, scores: Var, target: f64) -> Var {
        let v = self.value(scores);
        let n = v.len() as f64;
        let total: f64 = v
            .data()
            .iter()
            .map(|&s| s.max(0.0) + (-s.abs()).exp().ln_1p() - target * s)
            .sum();
        let rg = self.rg(scores);
        self.push(
            Tensor::scalar(total / n),
            rg,
            Op::BceWithLogitsMean { scores, target },
        )
    }

    /// Mean cross-entropy of `[B,K]` logits against integer labels.
    pub fn softmax_cross_entropy_mean(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let v = self.value(logits);
        let dims = v.dims();
        assert_eq!(dims.len(), 2);
        let (bsz, k) = (dims[0], dims[1]);
        assert_eq!(labels.len(), bsz);
        let mut probs = Tensor::zeros(&[bsz, k]);
        let mut loss = 0.0;
        for bi in 0..bsz {
            let row = &v.data()[bi * k..(bi + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            for (j, &x) in row.iter().enumerate() {
                probs.data_mut()[bi * k + j] = (x - max).exp() / sum;
            }
            loss -= (row[labels[bi]] - max) - sum.ln();
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss / bsz as f64),
            rg,
            Op::SoftmaxCrossEntropyMean {
                logits,
                labels,
                probs,
            },
        )
    }

    fn accumulate(&mut self, v: Var, contribution: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => g.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Reverse sweep from a scalar loss. Gradients of `param` leaves are
    /// retained and readable through [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = match self.nodes[i].op {
                Op::Leaf => continue,
                ref op => op.clone(),
            };
            let grad = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue, // node did not contribute to the loss
            };
            match op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    self.accumulate(a, grad.clone());
                    self.accumulate(b, grad);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, grad.clone());
                    self.accumulate(b, grad.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = grad.zip_map(self.value(b), |g, y| g * y);
                    let db = grad.zip_map(self.value(a), |g, x| g * x);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Scale(a, f) => self.accumulate(a, grad.map(|x| x * f)),
                Op::Relu(a) => {
                    let da = grad.zip_map(self.value(a), |g, x| if x > 0.0 { g } else { 0.0 });
                    self.accumulate(a, da);
                }
                Op::LeakyRelu(a, slope) => {
                    let da = grad.zip_map(self.value(a), |g, x| if x > 0.0 { g } else { slope * g });
                    self.accumulate(a, da);
                }
                Op::Tanh(a) => {
                    let da = grad.zip_map(&self.nodes[i].value, |g, y| g * (1.0 - y * y));
                    self.accumulate(a, da);
                }
                Op::Abs(a) => {
                    let da = grad.zip_map(self.value(a), |g, x| g * x.signum() * f64::from(x != 0.0));
                    self.accumulate(a, da);
                }
                Op::Sqrt(a) => {
                    let da = grad.zip_map(&self.nodes[i].value, |g, y| {
                        if y > 1e-12 {
                            g * 0.5 / y
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(a, da);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let s = Bchw::of(self.value(x));
                    if self.rg(x) {
                        let dx = conv_backward_data(&grad, self.value(w), &geom, s.height, s.width);
                        self.accumulate(x, dx);
                    }
                    if self.rg(w) {
                        let dw = conv_backward_weight(self.value(x), &grad, &geom);
                        self.accumulate(w, dw);
                    }
                    if self.rg(b) {
                        self.accumulate(b, conv_backward_bias(&grad));
                    }
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    if self.rg(x) {
                        let dx = conv_forward(&grad, self.value(w), None, &geom);
                        self.accumulate(x, dx);
                    }
                    if self.rg(w) {
                        let dw = conv_backward_weight(&grad, self.value(x), &geom);
                        self.accumulate(w, dw);
                    }
                    if self.rg(b) {
                        self.accumulate(b, conv_backward_bias(&grad));
                    }
                }
                Op::InstanceNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let s = Bchw::of(self.value(x));
                    let n = s.pixels();
                    let xv = self.value(x).data();
                    let gv = self.value(gamma).data();
                    let gd = grad.data();
                    let mut dx = Tensor::zeros(self.value(x).dims());
                    let mut dgamma = Tensor::zeros(&[s.channels]);
                    let mut dbeta = Tensor::zeros(&[s.channels]);
                    for bi in 0..s.batch {
                        for c in 0..s.channels {
                            let idx = bi * s.channels + c;
                            let off = idx * n;
                            let (m, is) = (mean[idx], inv_std[idx]);
                            let mut sum_g = 0.0;
                            let mut sum_gx = 0.0;
                            for j in 0..n {
                                let xh = (xv[off + j] - m) * is;
                                sum_g += gd[off + j];
                                sum_gx += gd[off + j] * xh;
                            }
                            dbeta.data_mut()[c] += sum_g;
                            dgamma.data_mut()[c] += sum_gx;
                            let mg = sum_g / n as f64;
                            let mgx = sum_gx / n as f64;
                            for j in 0..n {
                                let xh = (xv[off + j] - m) * is;
                                dx.data_mut()[off + j] = gv[c] * is * (gd[off + j] - mg - xh * mgx);
                            }
                        }
                    }
                    self.accumulate(x, dx);
                    self.accumulate(gamma, dgamma);
                    self.accumulate(beta, dbeta);
                }
                Op::Linear { x, w, b } => {
                    let xd = self.value(x).dims().to_vec();
                    let wd = self.value(w).dims().to_vec();
                    let (bsz, d, k) = (xd[0], xd[1], wd[1]);
                    if self.rg(x) {
                        // dx = g * w^T
                        let mut dx = Tensor::zeros(&[bsz, d]);
                        unsafe {
                            matrixmultiply::dgemm(
                                bsz,
                                k,
                                d,
                                1.0,
                                grad.data().as_ptr(),
                                k as isize,
                                1,
                                self.value(w).data().as_ptr(),
                                1,
                                k as isize,
                                0.0,
                                dx.data_mut().as_mut_ptr(),
                                d as isize,
                                1,
                            );
                        }
                        self.accumulate(x, dx);
                    }
                    if self.rg(w) {
                        // dw = x^T * g
                        let mut dw = Tensor::zeros(&[d, k]);
                        unsafe {
                            matrixmultiply::dgemm(
                                d,
                                bsz,
                                k,
                                1.0,
                                self.value(x).data().as_ptr(),
                                1,
                                d as isize,
                                grad.data().as_ptr(),
                                k as isize,
                                1,
                                0.0,
                                dw.data_mut().as_mut_ptr(),
                                k as isize,
                                1,
                            );
                        }
                        self.accumulate(w, dw);
                    }
                    if self.rg(b) {
                        let mut db = Tensor::zeros(&[k]);
                        for row in 0..bsz {
                            for col in 0..k {
                                db.data_mut()[col] += grad.data()[row * k + col];
                            }
                        }
                        self.accumulate(b, db);
                    }
                }
                Op::MeanAll(a) => {
                    let n = self.value(a).len() as f64;
                    let g = grad.item() / n;
                    let da = Tensor::filled(self.value(a).dims(), g);
                    self.accumulate(a, da);
                }
                Op::SumPerSample(a) => {
                    let dims = self.value(a).dims().to_vec();
                    let batch = dims[0];
                    let per = self.value(a).len() / batch;
                    let mut da = Tensor::zeros(&dims);
                    for bi in 0..batch {
                        let g = grad.data()[bi];
                        for v in &mut da.data_mut()[bi * per..(bi + 1) * per] {
                            *v = g;
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::MeanSpatial(a) => {
                    let s = Bchw::of(self.value(a));
                    let n = s.pixels();
                    let mut da = Tensor::zeros(self.value(a).dims());
                    for bi in 0..s.batch {
                        for c in 0..s.channels {
                            let g = grad.data()[bi * s.channels + c] / n as f64;
                            let off = (bi * s.channels + c) * n;
                            for v in &mut da.data_mut()[off..off + n] {
                                *v = g;
                            }
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::BceWithLogitsMean { scores, target } => {
                    let n = self.value(scores).len() as f64;
                    let g = grad.item();
                    let da = self.value(scores).map(|s| {
                        let sig = 1.0 / (1.0 + (-s).exp());
                        g * (sig - target) / n
                    });
                    self.accumulate(scores, da);
                }
                Op::SoftmaxCrossEntropyMean {
                    logits,
                    labels,
                    probs,
                } => {
                    let dims = self.value(logits).dims().to_vec();
                    let (bsz, k) = (dims[0], dims[1]);
                    let g = grad.item() / bsz as f64;
                    let mut da = probs.map(|p| p * g);
                    for (bi, &label) in labels.iter().enumerate() {
                        da.data_mut()[bi * k + label] -= g;
                    }
                    self.accumulate(logits, da);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::PadMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences over every element of every leaf, the
    /// oracle for each op's analytic backward pass.
    fn check_gradients(
        build: impl Fn(&mut Graph, &[Var]) -> Var,
        leaves: &[Tensor],
        step: f64,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.backward(loss);
        let analytic: Vec<Tensor> = vars
            .iter()
            .map(|&v| g.grad(v).expect("missing gradient").clone())
            .collect();

        for (li, leaf) in leaves.iter().enumerate() {
            for j in 0..leaf.len() {
                let eval = |delta: f64| {
                    let mut g = Graph::new();
                    let vars: Vec<Var> = leaves
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let mut t = t.clone();
                            if i == li {
                                t.data_mut()[j] += delta;
                            }
                            g.param(t)
                        })
                        .collect();
                    let loss = build(&mut g, &vars);
                    g.value(loss).item()
                };
                let numeric = (eval(step) - eval(-step)) / (2.0 * step);
                let a = analytic[li].data()[j];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "leaf {li} elem {j}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn elementwise_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 3], 1.0, &mut rng);
        check_gradients(
            |g, vars| {
                let s = g.add(vars[0], vars[1]);
                let d = g.sub(vars[0], vars[1]);
                let m = g.mul(s, d);
                let m = g.scale(m, 0.7);
                g.mean_all(m)
            },
            &[a, b],
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn activation_gradients() {
        // Values chosen away from the relu/abs kinks.
        let a = Tensor::from_vec(&[6], vec![-1.4, -0.6, 0.3, 0.9, 1.7, -2.2]);
        check_gradients(
            |g, vars| {
                let t = g.tanh(vars[0]);
                let r = g.relu(t);
                let l = g.leaky_relu(r, 0.2);
                g.mean_all(l)
            },
            &[a.clone()],
            1e-5,
            1e-5,
        );
        check_gradients(
            |g, vars| {
                let x = g.abs(vars[0]);
                g.mean_all(x)
            },
            &[a.clone()],
            1e-5,
            1e-5,
        );
        check_gradients(
            |g, vars| {
                let x = g.mul(vars[0], vars[0]);
                let x = g.sqrt(x);
                g.mean_all(x)
            },
            &[a],
            1e-6,
            1e-4,
        );
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(stride, pad, k, mode) in &[
            (1usize, 1usize, 3usize, PadMode::Reflect),
            (2, 1, 3, PadMode::Zeros),
            (2, 1, 4, PadMode::Zeros),
        ] {
            let geom = ConvGeom {
                in_channels: 2,
                out_channels: 3,
                kernel: k,
                stride,
                pad,
                pad_mode: mode,
            };
            let x = Tensor::randn(&[2, 2, 6, 6], 1.0, &mut rng);
            let w = Tensor::randn(&[3, 2, k, k], 0.5, &mut rng);
            let b = Tensor::randn(&[3], 0.5, &mut rng);
            check_gradients(
                |g, vars| {
                    let y = g.conv2d(vars[0], vars[1], vars[2], geom);
                    let y = g.mul(y, y);
                    g.mean_all(y)
                },
                &[x, w, b],
                1e-5,
                1e-5,
            );
        }
    }

    #[test]
    fn conv_transpose_gradients_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Conv orientation: maps 8x8 -> 4x4, so the transpose maps 4x4 -> 8x8.
        let geom = ConvGeom {
            in_channels: 3,
            out_channels: 2,
            kernel: 3,
            stride: 2,
            pad: 1,
            pad_mode: PadMode::Zeros,
        };
        let x = Tensor::randn(&[2, 2, 4, 4], 1.0, &mut rng);
        let w = Tensor::randn(&[2, 3, 3, 3], 0.5, &mut rng);
        let b = Tensor::randn(&[3], 0.5, &mut rng);
        {
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.param(x.clone()), g.param(w.clone()), g.param(b.clone()));
            let y = g.conv2d_transpose(xv, wv, bv, geom);
            assert_eq!(g.value(y).dims(), &[2, 3, 8, 8]);
        }
        check_gradients(
            |g, vars| {
                let y = g.conv2d_transpose(vars[0], vars[1], vars[2], geom);
                let y = g.mul(y, y);
                g.mean_all(y)
            },
            &[x, w, b],
            1e-5,
            1e-5,
        );
    }

    #[test]
    fn instance_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng);
        let gamma = Tensor::randn(&[3], 0.3, &mut rng).map(|v| v + 1.0);
        let beta = Tensor::randn(&[3], 0.3, &mut rng);
        check_gradients(
            |g, vars| {
                let y = g.instance_norm(vars[0], vars[1], vars[2]);
                let y = g.mul(y, y);
                g.mean_all(y)
            },
            &[x, gamma, beta],
            1e-5,
            1e-4,
        );
    }

    #[test]
    fn linear_and_reduction_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 5], 0.5, &mut rng);
        let b = Tensor::randn(&[5], 0.5, &mut rng);
        check_gradients(
            |g, vars| {
                let y = g.linear(vars[0], vars[1], vars[2]);
                let y = g.tanh(y);
                g.mean_all(y)
            },
            &[x.clone(), w, b],
            1e-5,
            1e-5,
        );
        let img = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng);
        check_gradients(
            |g, vars| {
                let pooled = g.mean_spatial(vars[0]);
                let sq = g.mul(pooled, pooled);
                let per = g.sum_per_sample(sq);
                let per = g.sqrt(per);
                g.mean_all(per)
            },
            &[img],
            1e-5,
            1e-5,
        );
        check_gradients(
            |g, vars| g.bce_with_logits_mean(vars[0], 1.0),
            &[x.clone()],
            1e-5,
            1e-5,
        );
        check_gradients(
            |g, vars| g.softmax_cross_entropy_mean(vars[0], vec![0, 3, 1]),
            &[Tensor::randn(&[3, 5], 1.0, &mut rng)],
            1e-5,
            1e-5,
        );
    }

    #[test]
    fn shared_node_accumulates_both_paths() {
        // loss = mean(x*x) + mean(x): d/dx = 2x/n + 1/n.
        let x = Tensor::from_vec(&[2], vec![3.0, -2.0]);
        let mut g = Graph::new();
        let xv = g.param(x);
        let sq = g.mul(xv, xv);
        let m1 = g.mean_all(sq);
        let m2 = g.mean_all(xv);
        let loss = g.add(m1, m2);
        g.backward(loss);
        let grad = g.grad(xv).unwrap();
        assert!((grad.data()[0] - (3.0 + 0.5)).abs() < 1e-12);
        assert!((grad.data()[1] - (-2.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        let mut g = Graph::new();
        let xv = g.param(x);
        let d = g.detach(xv);
        let m = g.mul(d, d);
        let loss = g.mean_all(m);
        g.backward(loss);
        assert!(g.grad(xv).is_none());
    }

    #[test]
    fn constants_do_not_allocate_gradients() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::filled(&[4], 2.0));
        let p = g.param(Tensor::filled(&[4], 3.0));
        let m = g.mul(c, p);
        let loss = g.mean_all(m);
        g.backward(loss);
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap().data(), &[0.5, 0.5, 0.5, 0.5]);
    }
}
