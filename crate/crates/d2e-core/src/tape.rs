//! Reverse-mode autodiff over a recorded tape.
//!
//! A `Tape` owns every intermediate value of a forward pass as a linear list
//! of nodes; `Var` is an index into that list. Unrolled time loops just keep
//! appending nodes, so backprop-through-time falls out of the ordinary
//! reverse sweep. Ops with non-smooth forwards (the spike threshold) carry
//! their own backward rule.
//!
//! All log/division clamps share one epsilon so losses and their diagnostics
//! agree numerically.

use crate::error::{D2eError, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Clamp used before every log and division in loss code.
pub const EPS: f64 = 1e-12;

/// Handle to a tape node.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    Abs(Var),
    Affine { x: Var, w: Var, b: Var },
    Conv2d { x: Var, kernel: Var, stride: usize, padding: usize },
    ChannelBias { x: Var, b: Var },
    AvgPool2d { x: Var, k: usize },
    Flatten(Var),
    Softmax(Var),
    CrossEntropy { probs: Var, labels: Vec<usize> },
    KlDiv { p: Var, q: Var },
    /// Membrane charge H = v + (I - (v - v_reset)) / tau.
    LifCharge { v: Var, input: Var, tau: f64 },
    /// Threshold crossing. Hard mode emits 1 where h >= threshold; smooth mode
    /// emits the arctangent sigmoid relaxation. Both modes backprop the same
    /// surrogate derivative, so smooth mode is an actually-differentiable clone
    /// usable for finite-difference checks.
    Spike { h: Var, threshold: f64, alpha: f64 },
    /// v' = s * v_reset + (1 - s) * h. With `detach` the reset path treats the
    /// spike as a constant and no gradient flows from v' into s.
    HardReset { h: Var, spikes: Var, v_reset: f64, detach: bool },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by the `Var`s of the source tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Surrogate derivative of the spike threshold at membrane offset `u = H - v_threshold`:
/// alpha / (2 * (1 + (pi * alpha * u / 2)^2)).
pub fn surrogate_derivative(u: f64, alpha: f64) -> f64 {
    let z = std::f64::consts::PI * alpha * u / 2.0;
    alpha / (2.0 * (1.0 + z * z))
}

/// Smooth relaxation whose derivative is `surrogate_derivative`:
/// 1/2 + arctan(pi * alpha * u / 2) / pi.
pub fn surrogate_sigmoid(u: f64, alpha: f64) -> f64 {
    0.5 + (std::f64::consts::PI * alpha * u / 2.0).atan() / std::f64::consts::PI
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa != sb {
            return Err(D2eError::Dimension(format!("{}: {:?} vs {:?}", what, sa, sb)));
        }
        Ok(())
    }

    // ── elementwise and reductions ──

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::MeanAll(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    // ── layers ──

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let v = kernels::affine_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Affine { x, w, b }))
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let v = kernels::conv2d_forward(self.value(x), self.value(kernel), stride, padding)?;
        Ok(self.push(v, Op::Conv2d { x, kernel, stride, padding }))
    }

    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let v = kernels::channel_bias_forward(self.value(x), self.value(b))?;
        Ok(self.push(v, Op::ChannelBias { x, b }))
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let v = kernels::avg_pool_forward(self.value(x), k)?;
        Ok(self.push(v, Op::AvgPool2d { x, k }))
    }

    /// [B, d1, d2, ...] -> [B, d1*d2*...]
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() < 2 {
            return Err(D2eError::Dimension(format!("flatten expects >= 2 dims, got {:?}", t.shape)));
        }
        let batch = t.shape[0];
        let rest: usize = t.shape[1..].iter().product();
        let v = t.reshaped(vec![batch, rest])?;
        Ok(self.push(v, Op::Flatten(x)))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = kernels::softmax_rows(self.value(x))?;
        Ok(self.push(v, Op::Softmax(x)))
    }

    // ── losses ──

    /// Mean over the batch of -ln(probs[i, labels[i]]), probabilities clamped
    /// at EPS before the log. Takes probabilities, not logits.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let p = self.value(probs);
        if p.ndim() != 2 {
            return Err(D2eError::Dimension(format!("cross_entropy expects [B,C] probs, got {:?}", p.shape)));
        }
        let (batch, classes) = (p.shape[0], p.shape[1]);
        if labels.len() != batch {
            return Err(D2eError::Dimension(format!(
                "cross_entropy: {} labels for batch {}",
                labels.len(),
                batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(D2eError::Contract(format!("label {} out of range for {} classes", bad, classes)));
        }
        let mut acc = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            acc -= p.idx2(i, y).max(EPS).ln();
        }
        let v = Tensor::scalar(acc / batch as f64);
        Ok(self.push(v, Op::CrossEntropy { probs, labels: labels.to_vec() }))
    }

    /// Mean over the batch of sum_c p * ln(p / q), q clamped at EPS; rows where
    /// p[c] = 0 contribute nothing for that class.
    pub fn kl_divergence(&mut self, p: Var, q: Var) -> Result<Var> {
        self.same_shape(p, q, "kl_divergence")?;
        let (pv, qv) = (self.value(p), self.value(q));
        if pv.ndim() != 2 {
            return Err(D2eError::Dimension(format!("kl_divergence expects [B,C], got {:?}", pv.shape)));
        }
        let batch = pv.shape[0];
        let mut acc = 0.0;
        for (a, b) in pv.data.iter().zip(qv.data.iter()) {
            if *a > 0.0 {
                acc += a * (a.ln() - b.max(EPS).ln());
            }
        }
        let v = Tensor::scalar(acc / batch as f64);
        Ok(self.push(v, Op::KlDiv { p, q }))
    }

    // ── spiking neuron ops ──

    pub fn lif_charge(&mut self, v: Var, input: Var, tau: f64, v_reset: f64) -> Result<Var> {
        self.same_shape(v, input, "lif_charge")?;
        let h = self
            .value(v)
            .zip(self.value(input), |vm, i| vm + (i - (vm - v_reset)) / tau)?;
        Ok(self.push(h, Op::LifCharge { v, input, tau }))
    }

    pub fn spike(&mut self, h: Var, threshold: f64, alpha: f64, smooth: bool) -> Var {
        let s = if smooth {
            self.value(h).map(|x| surrogate_sigmoid(x - threshold, alpha))
        } else {
            self.value(h).map(|x| if x >= threshold { 1.0 } else { 0.0 })
        };
        self.push(s, Op::Spike { h, threshold, alpha })
    }

    pub fn hard_reset(&mut self, h: Var, spikes: Var, v_reset: f64, detach: bool) -> Result<Var> {
        self.same_shape(h, spikes, "hard_reset")?;
        let v = self
            .value(h)
            .zip(self.value(spikes), |hv, s| s * v_reset + (1.0 - s) * hv)?;
        Ok(self.push(v, Op::HardReset { h, spikes, v_reset, detach }))
    }

    // ── backward ──

    /// Reverse sweep from a scalar loss. Gradients accumulate across fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_val = self.value(loss);
        if loss_val.numel() != 1 {
            return Err(D2eError::Contract(format!(
                "backward seed must be scalar, got shape {:?}",
                loss_val.shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&loss_val.shape, 1.0));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, d) in acc.data.iter_mut().zip(delta.data.iter()) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let da = g.zip(self.value(*b), |gv, bv| gv * bv).unwrap();
                let db = g.zip(self.value(*a), |gv, av| gv * av).unwrap();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::SumAll(a) => {
                let da = Tensor::full(&self.value(*a).shape, g.item());
                self.accumulate(grads, *a, da);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).numel() as f64;
                let da = Tensor::full(&self.value(*a).shape, g.item() / n);
                self.accumulate(grads, *a, da);
            }
            Op::Abs(a) => {
                let da = g.zip(self.value(*a), |gv, av| gv * av.signum() * ((av != 0.0) as i32 as f64))
                    .unwrap();
                self.accumulate(grads, *a, da);
            }
            Op::Affine { x, w, b } => {
                let (dx, dw, db) = kernels::affine_backward(self.value(*x), self.value(*w), g);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::Conv2d { x, kernel, stride, padding } => {
                let (dx, dk) =
                    kernels::conv2d_backward(self.value(*x), self.value(*kernel), g, *stride, *padding);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *kernel, dk);
            }
            Op::ChannelBias { x, b } => {
                self.accumulate(grads, *x, g.clone());
                self.accumulate(grads, *b, kernels::channel_bias_backward(g));
            }
            Op::AvgPool2d { x, k } => {
                let dx = kernels::avg_pool_backward(&self.value(*x).shape, g, *k);
                self.accumulate(grads, *x, dx);
            }
            Op::Flatten(x) => {
                let dx = g.reshaped(self.value(*x).shape.clone()).unwrap();
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let p = &self.nodes[i].value;
                let (batch, c) = (p.shape[0], p.shape[1]);
                let mut dx = Tensor::zeros(&p.shape);
                for r in 0..batch {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g.idx2(r, j) * p.idx2(r, j);
                    }
                    for j in 0..c {
                        dx.data[r * c + j] = p.idx2(r, j) * (g.idx2(r, j) - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { probs, labels } => {
                let p = self.value(*probs);
                let batch = p.shape[0] as f64;
                let gv = g.item();
                let mut dp = Tensor::zeros(&p.shape);
                for (r, &y) in labels.iter().enumerate() {
                    let pv = p.idx2(r, y);
                    // below the clamp the forward is constant in p
                    if pv >= EPS {
                        dp.data[r * p.shape[1] + y] = -gv / (batch * pv);
                    }
                }
                self.accumulate(grads, *probs, dp);
            }
            Op::KlDiv { p, q } => {
                let (pv, qv) = (self.value(*p), self.value(*q));
                let batch = pv.shape[0] as f64;
                let gv = g.item();
                let mut dp = Tensor::zeros(&pv.shape);
                let mut dq = Tensor::zeros(&qv.shape);
                for idx in 0..pv.data.len() {
                    let (a, b) = (pv.data[idx], qv.data[idx]);
                    if a > 0.0 {
                        dp.data[idx] = gv * (a.ln() - b.max(EPS).ln() + 1.0) / batch;
                        if b > EPS {
                            dq.data[idx] = -gv * a / (b * batch);
                        }
                    }
                }
                self.accumulate(grads, *p, dp);
                self.accumulate(grads, *q, dq);
            }
            Op::LifCharge { v, input, tau } => {
                self.accumulate(grads, *v, g.map(|x| x * (1.0 - 1.0 / tau)));
                self.accumulate(grads, *input, g.map(|x| x / tau));
            }
            Op::Spike { h, threshold, alpha } => {
                let dh = g
                    .zip(self.value(*h), |gv, hv| gv * surrogate_derivative(hv - threshold, *alpha))
                    .unwrap();
                self.accumulate(grads, *h, dh);
            }
            Op::HardReset { h, spikes, v_reset, detach } => {
                let dh = g.zip(self.value(*spikes), |gv, s| gv * (1.0 - s)).unwrap();
                self.accumulate(grads, *h, dh);
                if !detach {
                    let ds = g.zip(self.value(*h), |gv, hv| gv * (v_reset - hv)).unwrap();
                    self.accumulate(grads, *spikes, ds);
                }
            }
        }
    }
}

/// Compares tape gradients against central finite differences for a scalar
/// function built from the given parameter tensors. Returns the worst
/// elementwise error |g_tape - g_fd| / max(|g_tape|, |g_fd|, 1).
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut perturbed: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.wrt(vars[pi]);
        for ei in 0..param.numel() {
            perturbed[pi].data[ei] = param.data[ei] + h;
            let up = eval(&perturbed)?;
            perturbed[pi].data[ei] = param.data[ei] - h;
            let down = eval(&perturbed)?;
            perturbed[pi].data[ei] = param.data[ei];
            let fd = (up - down) / (2.0 * h);
            let tape_g = analytic.map_or(0.0, |t| t.data[ei]);
            let err = (tape_g - fd).abs() / tape_g.abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
