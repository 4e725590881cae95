//! Leaky integrate-and-fire neuron with hard reset and a surrogate spike
//! gradient.
//!
//! One step of dynamics, for membrane state v and input current I:
//!
//!   H  = v + (I - (v - v_reset)) / tau      (charge)
//!   S  = 1 where H >= v_threshold            (fire)
//!   v' = v_reset where S = 1, else H         (hard reset)
//!
//! The forward spike is a hard step; its backward rule is the arctangent
//! surrogate `alpha / (2 * (1 + (pi * alpha * u / 2)^2))` at u = H - v_threshold.
//! Setting `smooth` replaces the forward step with the matching sigmoid
//! relaxation so the whole network becomes differentiable end to end; that
//! mode exists purely so finite differences can validate the tape and is not
//! used in training.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use crate::tape::{surrogate_derivative, surrogate_sigmoid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    pub tau: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub surrogate_alpha: f64,
    /// Treat the spike as a constant inside the reset equation during backward.
    pub detach_reset: bool,
    /// Smooth relaxation of the spike forward (gradient checks only).
    pub smooth: bool,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau: 2.0,
            v_threshold: 1.0,
            v_reset: 0.0,
            surrogate_alpha: 2.0,
            detach_reset: false,
            smooth: false,
        }
    }
}

/// One LIF step on the tape: returns (spikes, new_state). State for t = 0
/// should be a fresh tensor filled with v_reset.
pub fn lif_step(tape: &mut Tape, state: Var, input: Var, params: &LifParams) -> Result<(Var, Var)> {
    let h = tape.lif_charge(state, input, params.tau, params.v_reset)?;
    let s = tape.spike(h, params.v_threshold, params.surrogate_alpha, params.smooth);
    let v_next = tape.hard_reset(h, s, params.v_reset, params.detach_reset)?;
    Ok((s, v_next))
}

/// Fresh membrane state for a layer of the given shape.
pub fn initial_state(tape: &mut Tape, shape: &[usize], params: &LifParams) -> Var {
    tape.leaf(Tensor::full(shape, params.v_reset))
}
