//! SGD with Nesterov momentum and the warmup-then-cosine learning-rate
//! schedule used by every training entry point.

use crate::error::{D2eError, Result};
use crate::tensor::Tensor;

/// SGD with Nesterov momentum, matching the torch.optim.SGD update:
///   v <- mu*v + g
///   p <- p - lr * (g + mu*v)
/// The velocity buffer is created lazily on the first step.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(momentum: f64, n_params: usize) -> Sgd {
        Sgd { momentum, velocity: vec![None; n_params] }
    }

    /// Applies one update to every parameter tensor in `params`, in order.
    /// `grads[i]` must match `params[i]` elementwise.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(D2eError::Contract(format!(
                "optimizer built for {} tensors, got {} params / {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            if param.shape != grad.shape {
                return Err(D2eError::Dimension(format!(
                    "param {:?} vs grad {:?}",
                    param.shape, grad.shape
                )));
            }
            let v = vel.get_or_insert_with(|| vec![0.0; grad.data.len()]);
            for ((p, &g), vi) in param.data.iter_mut().zip(&grad.data).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + g;
                *p -= lr * (g + self.momentum * *vi);
            }
        }
        Ok(())
    }
}

/// Per-epoch learning rate: linear warmup from base/10 to base over `warmup`
/// epochs, then cosine decay to zero at `epochs`.
pub fn lr_schedule(base: f64, epoch: usize, warmup: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return base;
    }
    if epoch < warmup {
        base * (0.1 + 0.9 * epoch as f64 / warmup as f64)
    } else {
        let span = (epochs - warmup).max(1) as f64;
        let t = (epoch - warmup) as f64 / span;
        base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Scales the reference rate linearly with batch size: 0.1 * batch / 256.
pub fn base_lr_for_batch(batch: usize) -> f64 {
    0.1 * batch as f64 / 256.0
}
