//! Architecture zoo: layer specs, geometry validation, seeded builds, and the
//! unrolled T-step forward pass.
//!
//! Networks are stacks of {conv+LIF, affine+LIF, avg-pool, flatten} closed by
//! exactly one affine readout with no LIF after it. Class probabilities come
//! from softmax over the time-averaged readout logits, so spike timing feeds
//! the decision only through accumulated evidence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{D2eError, Result};
use crate::neuron::{initial_state, lif_step, LifParams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// Square-kernel convolution followed by a LIF layer.
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    /// Fully connected layer; spiking everywhere except the readout.
    Affine { out_features: usize, spiking: bool },
    /// Non-overlapping k x k mean pooling.
    AvgPool { k: usize },
    Flatten,
}

/// Feature shape flowing between layers (batch dimension implicit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat { n: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub name: String,
    /// Input planes as the network sees them: (channels, height, width).
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    /// flatten -> affine(64)+LIF -> readout
    pub fn tiny_mlp(input: (usize, usize, usize), classes: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            name: "tiny-mlp".into(),
            input,
            classes,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Affine { out_features: 64, spiking: true },
                LayerSpec::Affine { out_features: classes, spiking: false },
            ],
        }
    }

    /// conv(8,k3)+LIF -> pool2 -> conv(16,k3)+LIF -> pool2 -> flatten -> readout
    pub fn tiny_conv(input: (usize, usize, usize), classes: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            name: "tiny-conv".into(),
            input,
            classes,
            layers: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::AvgPool { k: 2 },
                LayerSpec::Conv { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::AvgPool { k: 2 },
                LayerSpec::Flatten,
                LayerSpec::Affine { out_features: classes, spiking: false },
            ],
        }
    }

    pub fn by_name(name: &str, input: (usize, usize, usize), classes: usize) -> Result<ArchitectureSpec> {
        match name {
            "tiny-mlp" => Ok(ArchitectureSpec::tiny_mlp(input, classes)),
            "tiny-conv" => Ok(ArchitectureSpec::tiny_conv(input, classes)),
            other => Err(D2eError::config(
                "arch.name",
                format!("unknown architecture `{}` (known: tiny-mlp, tiny-conv)", other),
            )),
        }
    }

    /// Inline layer syntax: comma-separated `conv:OUT:K:STRIDE:PAD`, `pool:K`,
    /// `flatten`, `affine:N`, `readout`. Conv and affine layers spike; the
    /// readout is the mandatory last item.
    pub fn parse_layers(dsl: &str, input: (usize, usize, usize), classes: usize) -> Result<ArchitectureSpec> {
        let bad = |item: &str, why: &str| {
            D2eError::config("arch.layers", format!("item `{}`: {}", item, why))
        };
        let mut layers = Vec::new();
        for item in dsl.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let parts: Vec<&str> = item.split(':').collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(item, "expected an integer"));
            match parts[0] {
                "conv" if parts.len() == 5 => layers.push(LayerSpec::Conv {
                    out_channels: num(parts[1])?,
                    kernel: num(parts[2])?,
                    stride: num(parts[3])?,
                    padding: num(parts[4])?,
                }),
                "pool" if parts.len() == 2 => layers.push(LayerSpec::AvgPool { k: num(parts[1])? }),
                "flatten" if parts.len() == 1 => layers.push(LayerSpec::Flatten),
                "affine" if parts.len() == 2 => {
                    layers.push(LayerSpec::Affine { out_features: num(parts[1])?, spiking: true })
                }
                "readout" if parts.len() == 1 => {
                    layers.push(LayerSpec::Affine { out_features: classes, spiking: false })
                }
                _ => return Err(bad(item, "unrecognized layer")),
            }
        }
        let spec = ArchitectureSpec { name: format!("inline({})", dsl), input, classes, layers };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the stack chains geometrically and ends in exactly one readout.
    /// Returns the feature shape after every layer.
    pub fn validate(&self) -> Result<Vec<FeatureShape>> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 || self.classes == 0 {
            return Err(D2eError::Geometry(format!(
                "{}: input {:?} and classes {} must be nonzero",
                self.name, self.input, self.classes
            )));
        }
        if self.layers.is_empty() {
            return Err(D2eError::Geometry(format!("{}: no layers", self.name)));
        }
        let mut shape = FeatureShape::Spatial { c, h, w };
        let mut shapes = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |why: String| Err(D2eError::Geometry(format!("{} layer {}: {}", self.name, i, why)));
            shape = match (layer, &shape) {
                (LayerSpec::Conv { out_channels, kernel, stride, padding }, FeatureShape::Spatial { h, w, .. }) => {
                    let ho = crate::kernels::conv_out_len(*h, *kernel, *stride, *padding)?;
                    let wo = crate::kernels::conv_out_len(*w, *kernel, *stride, *padding)?;
                    FeatureShape::Spatial { c: *out_channels, h: ho, w: wo }
                }
                (LayerSpec::Conv { .. }, FeatureShape::Flat { .. }) => {
                    return fail("conv after flatten".into())
                }
                (LayerSpec::AvgPool { k }, FeatureShape::Spatial { c, h, w }) => {
                    if *k == 0 || h % k != 0 || w % k != 0 {
                        return fail(format!("pool {} does not tile {}x{}", k, h, w));
                    }
                    FeatureShape::Spatial { c: *c, h: h / k, w: w / k }
                }
                (LayerSpec::AvgPool { .. }, FeatureShape::Flat { .. }) => {
                    return fail("pool after flatten".into())
                }
                (LayerSpec::Flatten, FeatureShape::Spatial { c, h, w }) => {
                    FeatureShape::Flat { n: c * h * w }
                }
                (LayerSpec::Flatten, FeatureShape::Flat { .. }) => {
                    return fail("flatten of already-flat features".into())
                }
                (LayerSpec::Affine { out_features, spiking }, FeatureShape::Flat { .. }) => {
                    if i == last {
                        if *spiking {
                            return fail("readout must not spike".into());
                        }
                        if *out_features != self.classes {
                            return fail(format!(
                                "readout width {} != {} classes",
                                out_features, self.classes
                            ));
                        }
                    } else if !*spiking {
                        return fail("only the last affine may skip the LIF".into());
                    }
                    FeatureShape::Flat { n: *out_features }
                }
                (LayerSpec::Affine { .. }, FeatureShape::Spatial { .. }) => {
                    return fail("affine on spatial features (flatten first)".into())
                }
            };
            shapes.push(shape.clone());
        }
        match self.layers[last] {
            LayerSpec::Affine { spiking: false, .. } => {}
            _ => {
                return Err(D2eError::Geometry(format!(
                    "{}: last layer must be the affine readout",
                    self.name
                )))
            }
        }
        Ok(shapes)
    }

    /// Total learnable parameters (weights + biases).
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.validate()?;
        let mut total = 0;
        let mut prev = FeatureShape::Spatial { c: self.input.0, h: self.input.1, w: self.input.2 };
        for (layer, out) in self.layers.iter().zip(shapes.iter()) {
            match (layer, &prev) {
                (LayerSpec::Conv { out_channels, kernel, .. }, FeatureShape::Spatial { c, .. }) => {
                    total += out_channels * c * kernel * kernel + out_channels;
                }
                (LayerSpec::Affine { out_features, .. }, FeatureShape::Flat { n }) => {
                    total += out_features * n + out_features;
                }
                _ => {}
            }
            prev = out.clone();
        }
        Ok(total)
    }
}

// ── parameters and build ──

#[derive(Debug, Clone)]
pub enum LayerParams {
    Conv { kernel: Tensor, bias: Tensor, stride: usize, padding: usize },
    Affine { weight: Tensor, bias: Tensor, spiking: bool },
    AvgPool { k: usize },
    Flatten,
}

#[derive(Debug, Clone)]
pub struct SpikingNetwork {
    pub spec: ArchitectureSpec,
    pub layers: Vec<LayerParams>,
    pub lif: LifParams,
}

/// Builds a network with Kaiming-uniform weights (bound sqrt(6/fan_in)) drawn
/// from a ChaCha8 stream seeded by `seed`, and zero biases.
pub fn build(spec: &ArchitectureSpec, lif: LifParams, seed: u64) -> Result<SpikingNetwork> {
    let shapes = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kaiming = |shape: &[usize], fan_in: usize| -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor { shape: shape.to_vec(), data }
    };

    let mut prev = FeatureShape::Spatial { c: spec.input.0, h: spec.input.1, w: spec.input.2 };
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (layer, out) in spec.layers.iter().zip(shapes.iter()) {
        let built = match (layer, &prev) {
            (LayerSpec::Conv { out_channels, kernel, stride, padding }, FeatureShape::Spatial { c, .. }) => {
                let fan_in = c * kernel * kernel;
                LayerParams::Conv {
                    kernel: kaiming(&[*out_channels, *c, *kernel, *kernel], fan_in),
                    bias: Tensor::zeros(&[*out_channels]),
                    stride: *stride,
                    padding: *padding,
                }
            }
            (LayerSpec::Affine { out_features, spiking }, FeatureShape::Flat { n }) => LayerParams::Affine {
                weight: kaiming(&[*out_features, *n], *n),
                bias: Tensor::zeros(&[*out_features]),
                spiking: *spiking,
            },
            (LayerSpec::AvgPool { k }, _) => LayerParams::AvgPool { k: *k },
            (LayerSpec::Flatten, _) => LayerParams::Flatten,
            _ => unreachable!("validated spec"),
        };
        layers.push(built);
        prev = out.clone();
    }
    Ok(SpikingNetwork { spec: spec.clone(), layers, lif })
}

impl SpikingNetwork {
    /// Learnable tensors in fixed order (per layer: weight/kernel, then bias).
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Conv { kernel, bias, .. } => {
                    out.push(kernel);
                    out.push(bias);
                }
                LayerParams::Affine { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerParams::Conv { kernel, bias, .. } => {
                    out.push(kernel);
                    out.push(bias);
                }
                LayerParams::Affine { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.numel()).sum()
    }
}

// ── unrolled forward ──

/// Everything a T-step forward pass leaves on the tape.
pub struct Unrolled {
    /// Readout logits per step, each [B x classes].
    pub step_logits: Vec<Var>,
    /// Spike outputs per step for each spiking layer (outer index: spiking
    /// layer in stack order).
    pub layer_spikes: Vec<Vec<Var>>,
    /// Pre-activation (weights x input + bias) of the first synaptic layer
    /// at every step.
    pub first_preactivation: Vec<Var>,
    /// Parameter leaves in `param_tensors` order, for gradient lookup.
    pub param_vars: Vec<Var>,
}

/// Runs the network over `steps` (one [B×C×H×W] input per timestep), fresh
/// membrane state at t = 0. Appends everything to `tape`.
pub fn run_unrolled(net: &SpikingNetwork, tape: &mut Tape, steps: &[Tensor]) -> Result<Unrolled> {
    if steps.is_empty() {
        return Err(D2eError::Contract("run_unrolled needs at least one timestep".into()));
    }
    let t_steps = steps.len();
    let n_spiking = net
        .layers
        .iter()
        .filter(|l| matches!(l, LayerParams::Conv { .. } | LayerParams::Affine { spiking: true, .. }))
        .count();

    // parameter leaves, once per pass
    let mut param_vars = Vec::new();
    let mut layer_param_vars: Vec<Option<(Var, Var)>> = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        match layer {
            LayerParams::Conv { kernel, bias, .. } => {
                let k = tape.leaf(kernel.clone());
                let b = tape.leaf(bias.clone());
                param_vars.push(k);
                param_vars.push(b);
                layer_param_vars.push(Some((k, b)));
            }
            LayerParams::Affine { weight, bias, .. } => {
                let w = tape.leaf(weight.clone());
                let b = tape.leaf(bias.clone());
                param_vars.push(w);
                param_vars.push(b);
                layer_param_vars.push(Some((w, b)));
            }
            _ => layer_param_vars.push(None),
        }
    }

    let mut states: Vec<Option<Var>> = vec![None; net.layers.len()];
    let mut step_logits = Vec::with_capacity(t_steps);
    let mut layer_spikes: Vec<Vec<Var>> = vec![Vec::with_capacity(t_steps); n_spiking];
    let mut first_preactivation = Vec::with_capacity(t_steps);

    for step in steps {
        let mut x = tape.leaf(step.clone());
        let mut spiking_idx = 0;
        let mut first_synapse_seen = false;
        for (li, layer) in net.layers.iter().enumerate() {
            match layer {
                LayerParams::Conv { stride, padding, .. } => {
                    let (k, b) = layer_param_vars[li].unwrap();
                    let z = tape.conv2d(x, k, *stride, *padding)?;
                    let z = tape.channel_bias(z, b)?;
                    if !first_synapse_seen {
                        first_preactivation.push(z);
                        first_synapse_seen = true;
                    }
                    let state = match states[li] {
                        Some(s) => s,
                        None => {
                            let s = initial_state(tape, &tape.value(z).shape.clone(), &net.lif);
                            states[li] = Some(s);
                            s
                        }
                    };
                    let (spikes, v_next) = lif_step(tape, state, z, &net.lif)?;
                    states[li] = Some(v_next);
                    layer_spikes[spiking_idx].push(spikes);
                    spiking_idx += 1;
                    x = spikes;
                }
                LayerParams::Affine { spiking, .. } => {
                    let (w, b) = layer_param_vars[li].unwrap();
                    let z = tape.affine(x, w, b)?;
                    if !first_synapse_seen {
                        first_preactivation.push(z);
                        first_synapse_seen = true;
                    }
                    if *spiking {
                        let state = match states[li] {
                            Some(s) => s,
                            None => {
                                let s = initial_state(tape, &tape.value(z).shape.clone(), &net.lif);
                                states[li] = Some(s);
                                s
                            }
                        };
                        let (spikes, v_next) = lif_step(tape, state, z, &net.lif)?;
                        states[li] = Some(v_next);
                        layer_spikes[spiking_idx].push(spikes);
                        spiking_idx += 1;
                        x = spikes;
                    } else {
                        x = z;
                    }
                }
                LayerParams::AvgPool { k } => {
                    x = tape.avg_pool2d(x, *k)?;
                }
                LayerParams::Flatten => {
                    x = tape.flatten(x)?;
                }
            }
        }
        step_logits.push(x);
    }

    Ok(Unrolled { step_logits, layer_spikes, first_preactivation, param_vars })
}

/// Softmax over time-averaged logits: mean over steps first, then softmax.
pub fn temporal_readout(tape: &mut Tape, step_logits: &[Var]) -> Result<Var> {
    if step_logits.is_empty() {
        return Err(D2eError::Contract("temporal_readout over zero steps".into()));
    }
    let mut acc = step_logits[0];
    for &v in &step_logits[1..] {
        acc = tape.add(acc, v)?;
    }
    let mean = tape.scale(acc, 1.0 / step_logits.len() as f64);
    tape.softmax(mean)
}

/// Forward pass to class probabilities; returns the pass record too.
pub fn forward_probs(net: &SpikingNetwork, tape: &mut Tape, steps: &[Tensor]) -> Result<(Var, Unrolled)> {
    let run = run_unrolled(net, tape, steps)?;
    let probs = temporal_readout(tape, &run.step_logits)?;
    Ok((probs, run))
}

/// Convenience eval: probabilities as a plain tensor, tape discarded.
pub fn eval_probs(net: &SpikingNetwork, steps: &[Tensor]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (probs, _) = forward_probs(net, &mut tape, steps)?;
    Ok(tape.value(probs).clone())
}

/// Encodes a batch of images and stacks the codes into per-step batches.
pub fn encoded_steps(
    encoder: &crate::encoders::Encoder,
    images: &[&Tensor],
    t_steps: usize,
) -> Result<Vec<Tensor>> {
    let codes: Vec<Tensor> = images
        .iter()
        .map(|img| encoder.encode(img, t_steps))
        .collect::<Result<_>>()?;
    stack_time_batch(&codes)
}

/// Stacks per-image time-major codes [T×C×H×W] into T batch tensors [B×C×H×W].
pub fn stack_time_batch(codes: &[Tensor]) -> Result<Vec<Tensor>> {
    if codes.is_empty() {
        return Err(D2eError::EmptyDataset);
    }
    let t_steps = codes[0].shape[0];
    let frame: Vec<usize> = codes[0].shape[1..].to_vec();
    let per_frame: usize = frame.iter().product();
    for c in codes {
        if c.shape != codes[0].shape {
            return Err(D2eError::Dimension(format!(
                "stack_time_batch: mixed code shapes {:?} vs {:?}",
                c.shape, codes[0].shape
            )));
        }
    }
    let batch = codes.len();
    let mut steps = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let mut shape = vec![batch];
        shape.extend_from_slice(&frame);
        let mut data = Vec::with_capacity(batch * per_frame);
        for code in codes {
            data.extend_from_slice(&code.data[t * per_frame..(t + 1) * per_frame]);
        }
        steps.push(Tensor::new(shape, data)?);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{encode_direct, encode_ttfs, Encoder};

    fn input_16() -> (usize, usize, usize) {
        (1, 16, 16)
    }

    #[test]
    fn tiny_mlp_geometry_and_params() {
        let spec = ArchitectureSpec::tiny_mlp(input_16(), 4);
        let shapes = spec.validate().unwrap();
        assert_eq!(shapes[0], FeatureShape::Flat { n: 256 });
        assert_eq!(shapes[1], FeatureShape::Flat { n: 64 });
        assert_eq!(shapes[2], FeatureShape::Flat { n: 4 });
        // 256*64+64 + 64*4+4
        assert_eq!(spec.param_count().unwrap(), 16708);
    }

    #[test]
    fn tiny_conv_geometry() {
        let spec = ArchitectureSpec::tiny_conv((1, 16, 16), 4);
        let shapes = spec.validate().unwrap();
        assert_eq!(shapes[0], FeatureShape::Spatial { c: 8, h: 16, w: 16 });
        assert_eq!(shapes[1], FeatureShape::Spatial { c: 8, h: 8, w: 8 });
        assert_eq!(shapes[3], FeatureShape::Spatial { c: 16, h: 4, w: 4 });
        assert_eq!(shapes[4], FeatureShape::Flat { n: 256 });
        // conv: 8*1*9+8=80, conv: 16*8*9+16=1168, readout: 4*256+4=1028
        assert_eq!(spec.param_count().unwrap(), 80 + 1168 + 1028);
    }

    #[test]
    fn mlp_param_count_hand_example() {
        // 64 inputs -> 32 hidden -> 10 out: 64*32+32 + 32*10+10 = 2410
        let spec = ArchitectureSpec {
            name: "probe".into(),
            input: (1, 8, 8),
            classes: 10,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Affine { out_features: 32, spiking: true },
                LayerSpec::Affine { out_features: 10, spiking: false },
            ],
        };
        assert_eq!(spec.param_count().unwrap(), 2410);
    }

    #[test]
    fn validation_rejects_bad_stacks() {
        let affine_on_spatial = ArchitectureSpec {
            name: "bad".into(),
            input: input_16(),
            classes: 2,
            layers: vec![
                LayerSpec::Affine { out_features: 2, spiking: false },
            ],
        };
        assert!(affine_on_spatial.validate().is_err());

        let pool_indivisible = ArchitectureSpec {
            name: "bad".into(),
            input: (1, 15, 15),
            classes: 2,
            layers: vec![
                LayerSpec::AvgPool { k: 2 },
                LayerSpec::Flatten,
                LayerSpec::Affine { out_features: 2, spiking: false },
            ],
        };
        assert!(pool_indivisible.validate().is_err());

        let spiking_readout = ArchitectureSpec {
            name: "bad".into(),
            input: input_16(),
            classes: 2,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Affine { out_features: 2, spiking: true },
            ],
        };
        assert!(spiking_readout.validate().is_err());

        let hidden_without_lif = ArchitectureSpec {
            name: "bad".into(),
            input: input_16(),
            classes: 2,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Affine { out_features: 8, spiking: false },
                LayerSpec::Affine { out_features: 2, spiking: false },
            ],
        };
        assert!(hidden_without_lif.validate().is_err());

        let wrong_readout_width = ArchitectureSpec {
            name: "bad".into(),
            input: input_16(),
            classes: 3,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Affine { out_features: 2, spiking: false },
            ],
        };
        assert!(wrong_readout_width.validate().is_err());
    }

    #[test]
    fn dsl_round_trips_tiny_conv() {
        let spec = ArchitectureSpec::parse_layers(
            "conv:8:3:1:1, pool:2, conv:16:3:1:1, pool:2, flatten, readout",
            (1, 16, 16),
            4,
        )
        .unwrap();
        assert_eq!(spec.layers, ArchitectureSpec::tiny_conv((1, 16, 16), 4).layers);
        assert!(ArchitectureSpec::parse_layers("conv:8", (1, 16, 16), 4).is_err());
    }

    #[test]
    fn build_is_seed_deterministic_with_zero_biases() {
        let spec = ArchitectureSpec::tiny_mlp(input_16(), 4);
        let a = build(&spec, LifParams::default(), 7).unwrap();
        let b = build(&spec, LifParams::default(), 7).unwrap();
        let c = build(&spec, LifParams::default(), 8).unwrap();
        for (ta, tb) in a.param_tensors().iter().zip(b.param_tensors().iter()) {
            assert_eq!(ta.data, tb.data);
        }
        let differs = a
            .param_tensors()
            .iter()
            .zip(c.param_tensors().iter())
            .any(|(ta, tc)| ta.data != tc.data);
        assert!(differs);
        match &a.layers[1] {
            LayerParams::Affine { bias, weight, .. } => {
                assert!(bias.data.iter().all(|&v| v == 0.0));
                let bound = (6.0f64 / 256.0).sqrt();
                assert!(weight.data.iter().all(|&v| v.abs() < bound));
            }
            _ => panic!("layer 1 should be affine"),
        }
        assert_eq!(a.param_count(), 16708);
    }

    #[test]
    fn forward_shapes_and_fresh_state() {
        let spec = ArchitectureSpec::tiny_mlp(input_16(), 4);
        let net = build(&spec, LifParams::default(), 3).unwrap();
        let img = Tensor::full(&[1, 16, 16], 0.8);
        let code = encode_ttfs(&img, 8).unwrap().into_tensor();
        let steps = stack_time_batch(&[code]).unwrap();
        let probs_a = eval_probs(&net, &steps).unwrap();
        let probs_b = eval_probs(&net, &steps).unwrap();
        assert_eq!(probs_a.shape, vec![1, 4]);
        assert_eq!(probs_a.data, probs_b.data, "state must reset between passes");
        assert!((probs_a.data.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn direct_coding_first_preactivation_static_over_time() {
        let spec = ArchitectureSpec::tiny_conv((1, 8, 8), 2);
        let net = build(&spec, LifParams::default(), 11).unwrap();
        let img = Tensor::new(
            vec![1, 8, 8],
            (0..64).map(|i| (i % 7) as f64 / 10.0).collect(),
        )
        .unwrap();
        let code = encode_direct(&img, 4).unwrap();
        let steps = stack_time_batch(&[code]).unwrap();
        let mut tape = Tape::new();
        let run = run_unrolled(&net, &mut tape, &steps).unwrap();
        let z0 = tape.value(run.first_preactivation[0]).clone();
        for t in 1..4 {
            assert_eq!(tape.value(run.first_preactivation[t]).data, z0.data);
        }
    }

    #[test]
    fn temporal_readout_hand_example() {
        // logits step 1: [0,0], step 2: [ln 9, 0] -> mean [ln 3, 0] -> softmax [0.75, 0.25]
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![1, 2], vec![(9.0f64).ln(), 0.0]).unwrap());
        let probs = temporal_readout(&mut tape, &[a, b]).unwrap();
        let p = tape.value(probs);
        assert!((p.data[0] - 0.75).abs() < 1e-12);
        assert!((p.data[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn event_and_direct_codes_share_network_weights() {
        // same net accepts both codings of one image
        let spec = ArchitectureSpec::tiny_mlp(input_16(), 4);
        let net = build(&spec, LifParams::default(), 5).unwrap();
        let img = Tensor::full(&[1, 16, 16], 0.6);
        for enc in [Encoder::Direct, Encoder::Ttfs] {
            let code = enc.encode(&img, 8).unwrap();
            let steps = stack_time_batch(&[code]).unwrap();
            let probs = eval_probs(&net, &steps).unwrap();
            assert_eq!(probs.shape, vec![1, 4]);
        }
    }
}
