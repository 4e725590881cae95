//! Evaluation metrics, the accuracy-transfer bound, and the diagnostics that
//! motivate distillation: first-layer signal collapse and gradient mismatch.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::encoders::Encoder;
use crate::error::{D2eError, Result};
use crate::kernels;
use crate::network::{self, LayerParams, SpikingNetwork};
use crate::tape::{Tape, EPS};
use crate::tensor::Tensor;

/// Images handled per forward pass in dataset-wide evaluations. Results do
/// not depend on this; per-sample arithmetic never crosses the batch axis.
const EVAL_CHUNK: usize = 64;

// ── probabilities and accuracy ──

/// Class probabilities for every image: [N × classes].
pub fn eval_probs_dataset(
    net: &SpikingNetwork,
    images: &[Tensor],
    encoder: &Encoder,
    t_steps: usize,
) -> Result<Tensor> {
    if images.is_empty() {
        return Err(D2eError::EmptyDataset);
    }
    let classes = net.spec.classes;
    let mut data = Vec::with_capacity(images.len() * classes);
    for chunk in images.chunks(EVAL_CHUNK) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let steps = network::encoded_steps(encoder, &refs, t_steps)?;
        let probs = network::eval_probs(net, &steps)?;
        data.extend_from_slice(&probs.data);
    }
    Tensor::new(vec![images.len(), classes], data)
}

/// Mean probability assigned to the true class.
pub fn soft_accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_prob_rows(probs, labels)?;
    let classes = probs.shape[1];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| probs.data[i * classes + l])
        .sum();
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose argmax (first index on ties) is the true class.
pub fn hard_accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_prob_rows(probs, labels)?;
    let classes = probs.shape[1];
    let mut hits = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        let row = &probs.data[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

fn check_prob_rows(probs: &Tensor, labels: &[usize]) -> Result<()> {
    if probs.ndim() != 2 {
        return Err(D2eError::Dimension(format!("probs must be [N,C], got {:?}", probs.shape)));
    }
    if probs.shape[0] == 0 || labels.is_empty() {
        return Err(D2eError::EmptyDataset);
    }
    if probs.shape[0] != labels.len() {
        return Err(D2eError::Dimension(format!(
            "{} prob rows vs {} labels",
            probs.shape[0],
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.shape[1]) {
        return Err(D2eError::Contract(format!(
            "label {} out of range for {} classes",
            bad, probs.shape[1]
        )));
    }
    Ok(())
}

// ── divergences ──

/// KL(p_i || q_i) per [N×C] row, averaged over rows. Zero-mass p terms drop
/// out; q is clamped at EPS, matching the training-time divergence.
pub fn expected_kl(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape != q.shape || p.ndim() != 2 {
        return Err(D2eError::Dimension(format!(
            "expected_kl needs matching [N,C] tensors, got {:?} vs {:?}",
            p.shape, q.shape
        )));
    }
    if p.shape[0] == 0 {
        return Err(D2eError::EmptyDataset);
    }
    let total: f64 = p
        .data
        .iter()
        .zip(&q.data)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi.ln() - qi.max(EPS).ln()) } else { 0.0 })
        .sum();
    Ok(total / p.shape[0] as f64)
}

fn check_distribution(d: &[f64], name: &str) -> Result<()> {
    if d.is_empty() {
        return Err(D2eError::Contract(format!("{name} is empty")));
    }
    if d.iter().any(|&v| v < -1e-12) {
        return Err(D2eError::Contract(format!("{name} has a negative entry")));
    }
    let s: f64 = d.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(D2eError::Contract(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// KL divergence between two discrete distributions on the same support.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(D2eError::Dimension(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi.ln() - qi.max(EPS).ln()) } else { 0.0 })
        .sum())
}

/// Total variation distance: half the L1 distance.
pub fn tv_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(D2eError::Dimension(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(0.5 * p.iter().zip(q).map(|(&pi, &qi)| (pi - qi).abs()).sum::<f64>())
}

/// Pinsker's inequality gives TV <= sqrt(KL/2).
pub fn pinsker_tv_bound(kl: f64) -> f64 {
    (kl.max(0.0) / 2.0).sqrt()
}

// ── correlation ──

/// Pearson correlation. Constant series have no correlation and error out.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(D2eError::Dimension(format!("{} vs {} points", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(D2eError::UndefinedCorrelation("need at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(D2eError::UndefinedCorrelation("a series is constant".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

// ── code capacity ──

/// Bits carried by d pixels that each take one of T+1 first-spike symbols:
/// d * log2(T+1).
pub fn capacity_bound(d: usize, t_steps: usize) -> f64 {
    d as f64 * ((t_steps + 1) as f64).log2()
}

// ── exact total variation between code distributions ──

/// Exact TV between the empirical distributions of real-valued twin codes
/// and event codes over the dataset, computed by pushing both through a
/// shared byte representation. Requires every code value to sit exactly on
/// the 8-bit intensity grid (generated and file-loaded datasets do).
pub fn tv_exact(ds: &Dataset, event: &Encoder, t_steps: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(D2eError::EmptyDataset);
    }
    let direct = event.direct_twin();
    let mut mass: BTreeMap<Vec<u8>, (u64, u64)> = BTreeMap::new();
    for img in &ds.images {
        let d = byte_code(&direct.encode(img, t_steps)?)?;
        let e = byte_code(&event.encode(img, t_steps)?)?;
        mass.entry(d).or_insert((0, 0)).0 += 1;
        mass.entry(e).or_insert((0, 0)).1 += 1;
    }
    let diff: u64 = mass.values().map(|&(a, b)| a.abs_diff(b)).sum();
    Ok(diff as f64 / (2 * ds.len()) as f64)
}

fn byte_code(code: &Tensor) -> Result<Vec<u8>> {
    code.data
        .iter()
        .map(|&v| {
            let scaled = v * 255.0;
            let b = scaled.round();
            if (scaled - b).abs() > 1e-6 || !(0.0..=255.0).contains(&b) {
                Err(D2eError::UnsupportedMode(format!(
                    "exact TV needs code values on the 8-bit grid, got {v}"
                )))
            } else {
                Ok(b as u8)
            }
        })
        .collect()
}

// ── the transfer bound ──

/// One evaluation of |acc_ref - acc_student| <= sqrt(kl/2) + 2*tv, on soft
/// accuracies.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub acc_reference: f64,
    pub acc_student: f64,
    pub gap: f64,
    pub kl_mean: f64,
    pub tv: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn transfer_bound_report(
    acc_reference: f64,
    acc_student: f64,
    kl_mean: f64,
    tv: f64,
) -> BoundReport {
    let gap = (acc_reference - acc_student).abs();
    let rhs = pinsker_tv_bound(kl_mean) + 2.0 * tv;
    BoundReport {
        acc_reference,
        acc_student,
        gap,
        kl_mean,
        tv,
        rhs,
        holds: gap <= rhs + 1e-9,
    }
}

/// Smallest TV that would make the bound hold across a whole trajectory of
/// (gap, kl) pairs: max over epochs of (gap - sqrt(kl/2))/2, floored at 0.
pub fn fit_tv_from_trajectory(gaps: &[f64], kls: &[f64]) -> Result<f64> {
    if gaps.len() != kls.len() {
        return Err(D2eError::Dimension(format!(
            "{} gaps vs {} kl values",
            gaps.len(),
            kls.len()
        )));
    }
    if gaps.is_empty() {
        return Err(D2eError::EmptyDataset);
    }
    let worst = gaps
        .iter()
        .zip(kls)
        .map(|(&g, &k)| (g - pinsker_tv_bound(k)) / 2.0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(worst.max(0.0))
}

// ── first-layer signal collapse ──

/// Mean |pre-activation| of the first synaptic layer, bias removed: once for
/// the real-valued twin code (static over time) and per step for the event
/// code. With binary images and TTFS the ratio is exactly 1/T: every lit
/// pixel fires once, so the event drive is the direct drive split across T
/// steps.
#[derive(Debug, Clone, Serialize)]
pub struct CollapseStats {
    pub direct_mean_abs: f64,
    pub event_mean_abs_per_step: f64,
    pub ratio: f64,
}

pub fn layer1_collapse(
    net: &SpikingNetwork,
    images: &[Tensor],
    event: &Encoder,
    t_steps: usize,
) -> Result<CollapseStats> {
    if images.is_empty() {
        return Err(D2eError::EmptyDataset);
    }
    let direct = event.direct_twin();
    let mut dir_sum = 0.0;
    let mut dir_count = 0usize;
    let mut evt_sum = 0.0;
    let mut evt_count = 0usize;
    for chunk in images.chunks(EVAL_CHUNK) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        // The twin code repeats one frame, so step 0 stands for every step.
        let dir_steps = network::encoded_steps(&direct, &refs, t_steps)?;
        let z = first_synapse_preact(net, &dir_steps[0])?;
        dir_sum += z.data.iter().map(|v| v.abs()).sum::<f64>();
        dir_count += z.numel();
        for step in &network::encoded_steps(event, &refs, t_steps)? {
            let z = first_synapse_preact(net, step)?;
            evt_sum += z.data.iter().map(|v| v.abs()).sum::<f64>();
            evt_count += z.numel();
        }
    }
    let direct_mean_abs = dir_sum / dir_count as f64;
    let event_mean_abs_per_step = evt_sum / evt_count as f64;
    if direct_mean_abs <= 0.0 {
        return Err(D2eError::Contract(
            "direct drive is zero; collapse ratio undefined".into(),
        ));
    }
    Ok(CollapseStats {
        direct_mean_abs,
        event_mean_abs_per_step,
        ratio: event_mean_abs_per_step / direct_mean_abs,
    })
}

/// Weights-only pre-activation of the first conv or affine layer.
fn first_synapse_preact(net: &SpikingNetwork, batch: &Tensor) -> Result<Tensor> {
    let mut x = batch.clone();
    for layer in &net.layers {
        match layer {
            LayerParams::Flatten => {
                let b = x.shape[0];
                let rest: usize = x.shape[1..].iter().product();
                x = x.reshaped(vec![b, rest])?;
            }
            LayerParams::AvgPool { k } => x = kernels::avg_pool_forward(&x, *k)?,
            LayerParams::Conv { kernel, stride, padding, .. } => {
                return kernels::conv2d_forward(&x, kernel, *stride, *padding);
            }
            LayerParams::Affine { weight, .. } => {
                let zero_bias = Tensor::zeros(&[weight.shape[0]]);
                return kernels::affine_forward(&x, weight, &zero_bias);
            }
        }
    }
    Err(D2eError::Contract("network has no synaptic layer".into()))
}

// ── gradient mismatch ──

/// Dataset-mean cross-entropy gradient under the real-valued twin code
/// versus the event code, flattened across all parameters.
#[derive(Debug, Clone, Serialize)]
pub struct MismatchReport {
    pub direct_norm: f64,
    pub event_norm: f64,
    pub diff_norm: f64,
    pub cosine: f64,
}

pub fn gradient_mismatch(
    net: &SpikingNetwork,
    ds: &Dataset,
    event: &Encoder,
    t_steps: usize,
) -> Result<MismatchReport> {
    let g_dir = mean_ce_gradient(net, ds, &event.direct_twin(), t_steps)?;
    let g_evt = mean_ce_gradient(net, ds, event, t_steps)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let direct_norm = norm(&g_dir);
    let event_norm = norm(&g_evt);
    let diff: Vec<f64> = g_dir.iter().zip(&g_evt).map(|(a, b)| a - b).collect();
    if direct_norm == 0.0 || event_norm == 0.0 {
        return Err(D2eError::UndefinedCorrelation(
            "a gradient is identically zero; mismatch angle undefined".into(),
        ));
    }
    let dot: f64 = g_dir.iter().zip(&g_evt).map(|(a, b)| a * b).sum();
    Ok(MismatchReport {
        direct_norm,
        event_norm,
        diff_norm: norm(&diff),
        cosine: dot / (direct_norm * event_norm),
    })
}

/// Gradient of the dataset-mean cross-entropy, flattened over parameters in
/// `param_tensors` order.
pub fn mean_ce_gradient(
    net: &SpikingNetwork,
    ds: &Dataset,
    encoder: &Encoder,
    t_steps: usize,
) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(D2eError::EmptyDataset);
    }
    let mut acc = vec![0.0f64; net.param_count()];
    let n = ds.len() as f64;
    let mut cursor = 0usize;
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(ds.len());
        let refs: Vec<&Tensor> = ds.images[start..end].iter().collect();
        let labels = &ds.labels[start..end];
        let weight = (end - start) as f64 / n;

        let steps = network::encoded_steps(encoder, &refs, t_steps)?;
        let mut tape = Tape::new();
        let (probs, run) = network::forward_probs(net, &mut tape, &steps)?;
        let loss = tape.cross_entropy(probs, labels)?;
        let grads = tape.backward(loss)?;

        cursor = 0;
        for (&var, param) in run.param_vars.iter().zip(net.param_tensors()) {
            let len = param.numel();
            if let Some(g) = grads.wrt(var) {
                for (slot, &gi) in acc[cursor..cursor + len].iter_mut().zip(&g.data) {
                    *slot += weight * gi;
                }
            }
            cursor += len;
        }
    }
    debug_assert_eq!(cursor, acc.len());
    Ok(acc)
}

// ── firing rates ──

/// Mean spike rate of each spiking layer (stack order) over samples, steps,
/// and units.
pub fn firing_rates(
    net: &SpikingNetwork,
    images: &[Tensor],
    encoder: &Encoder,
    t_steps: usize,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(D2eError::EmptyDataset);
    }
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for chunk in images.chunks(EVAL_CHUNK) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let steps = network::encoded_steps(encoder, &refs, t_steps)?;
        let mut tape = Tape::new();
        let run = network::run_unrolled(net, &mut tape, &steps)?;
        if sums.is_empty() {
            sums = vec![0.0; run.layer_spikes.len()];
            counts = vec![0; run.layer_spikes.len()];
        }
        for (li, per_step) in run.layer_spikes.iter().enumerate() {
            for &spikes in per_step {
                let v = tape.value(spikes);
                sums[li] += v.sum();
                counts[li] += v.numel();
            }
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic;
    use crate::network::{build, ArchitectureSpec};
    use crate::neuron::LifParams;

    fn probs(rows: &[[f64; 2]]) -> Tensor {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn accuracies_hand_values() {
        let p = probs(&[[0.7, 0.3], [0.4, 0.6]]);
        let labels = [0usize, 0];
        assert!((soft_accuracy(&p, &labels).unwrap() - 0.55).abs() < 1e-15);
        assert!((hard_accuracy(&p, &labels).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hard_accuracy_tie_takes_first_index() {
        let p = probs(&[[0.5, 0.5]]);
        assert_eq!(hard_accuracy(&p, &[0]).unwrap(), 1.0);
        assert_eq!(hard_accuracy(&p, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_rejects_empty_and_bad_labels() {
        let p = Tensor::zeros(&[0, 2]);
        assert!(matches!(soft_accuracy(&p, &[]), Err(D2eError::EmptyDataset)));
        let p = probs(&[[1.0, 0.0]]);
        assert!(soft_accuracy(&p, &[2]).is_err());
    }

    #[test]
    fn kl_hand_values() {
        let p = probs(&[[1.0, 0.0]]);
        let q = probs(&[[0.5, 0.5]]);
        assert!((expected_kl(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(expected_kl(&p, &p).unwrap(), 0.0);

        let kl = kl_discrete(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        let expect = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((kl - expect).abs() < 1e-15);
    }

    #[test]
    fn tv_hand_values_and_pinsker() {
        assert!((tv_discrete(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let tv = tv_discrete(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((tv - 0.25).abs() < 1e-15);
        let kl = kl_discrete(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!(tv <= pinsker_tv_bound(kl));
    }

    #[test]
    fn distribution_validation_rejects_non_simplex() {
        assert!(kl_discrete(&[0.5, 0.3], &[0.5, 0.5]).is_err());
        assert!(tv_discrete(&[1.2, -0.2], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn pearson_hand_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(D2eError::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn capacity_known_points() {
        assert!((capacity_bound(3072, 8) - 3072.0 * 9.0f64.log2()).abs() < 1e-9);
        assert!((capacity_bound(3072, 8) - 9738.0096).abs() < 0.01);
        assert_eq!(capacity_bound(3072, 8).ceil() as u64, 9739);
        // d=2, T=3: 2*log2(4) = 4 bits, matching 16 enumerable codewords.
        assert!((capacity_bound(2, 3) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn tv_exact_zero_and_ones_images() {
        // Zero image: no spikes under TTFS and a zero twin code, so both
        // distributions share that atom. Ones image: codes differ. TV = 1/2.
        let ds = Dataset {
            images: vec![Tensor::zeros(&[1, 2, 2]), Tensor::full(&[1, 2, 2], 1.0)],
            labels: vec![0, 1],
            classes: 2,
        };
        let tv = tv_exact(&ds, &Encoder::Ttfs, 4).unwrap();
        assert!((tv - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tv_exact_identical_encoders_is_zero() {
        let ds = gen_synthetic("bars", 12, 3).unwrap();
        let tv = tv_exact(&ds, &Encoder::Direct, 4).unwrap();
        assert_eq!(tv, 0.0);
    }

    #[test]
    fn tv_exact_rejects_off_grid_pixels() {
        // 1/7 * 255 = 36.43..., between byte levels.
        let ds = Dataset {
            images: vec![Tensor::full(&[1, 2, 2], 1.0 / 7.0)],
            labels: vec![0],
            classes: 1,
        };
        assert!(matches!(
            tv_exact(&ds, &Encoder::Ttfs, 4),
            Err(D2eError::UnsupportedMode(_))
        ));
    }

    #[test]
    fn bound_report_hand_case() {
        let r = transfer_bound_report(0.9, 0.8, 0.02, 0.2);
        assert!((r.gap - 0.1).abs() < 1e-15);
        assert!((r.rhs - (0.1 + 0.4)).abs() < 1e-12);
        assert!(r.holds);
        assert!(!transfer_bound_report(0.9, 0.1, 0.02, 0.1).holds);
    }

    #[test]
    fn fit_tv_takes_worst_epoch() {
        let fit = fit_tv_from_trajectory(&[0.3, 0.1], &[0.02, 0.08]).unwrap();
        assert!((fit - 0.1).abs() < 1e-12);
        // All gaps explained by KL alone -> fitted TV clamps to zero.
        assert_eq!(fit_tv_from_trajectory(&[0.05], &[0.02]).unwrap(), 0.0);
    }

    fn tiny_net(seed: u64) -> SpikingNetwork {
        let spec = ArchitectureSpec::tiny_mlp((1, 4, 4), 2);
        build(&spec, LifParams::default(), seed).unwrap()
    }

    #[test]
    fn collapse_ratio_binary_images_is_one_over_t() {
        let net = tiny_net(11);
        // Binary images: every lit pixel fires exactly once under TTFS.
        let images = vec![
            Tensor::full(&[1, 4, 4], 1.0),
            Tensor::new(vec![1, 4, 4], (0..16).map(|i| (i % 2) as f64).collect()).unwrap(),
        ];
        for t in [1usize, 2, 5] {
            let stats = layer1_collapse(&net, &images, &Encoder::Ttfs, t).unwrap();
            assert!(
                (stats.ratio - 1.0 / t as f64).abs() < 1e-12,
                "T={t}: ratio {} != {}",
                stats.ratio,
                1.0 / t as f64
            );
        }
    }

    #[test]
    fn collapse_rejects_zero_drive() {
        let net = tiny_net(11);
        let images = vec![Tensor::zeros(&[1, 4, 4])];
        assert!(layer1_collapse(&net, &images, &Encoder::Ttfs, 4).is_err());
    }

    #[test]
    fn mismatch_zero_for_twin_vs_itself() {
        let net = tiny_net(3);
        let mut ds = gen_synthetic("two-blobs", 8, 5).unwrap();
        for img in &mut ds.images {
            *img = Tensor::new(vec![1, 4, 4], img.data[..16].to_vec()).unwrap();
        }
        let g1 = mean_ce_gradient(&net, &ds, &Encoder::Direct, 3).unwrap();
        let g2 = mean_ce_gradient(&net, &ds, &Encoder::Direct, 3).unwrap();
        assert_eq!(g1, g2);
        let report = gradient_mismatch(&net, &ds, &Encoder::Ttfs, 3).unwrap();
        assert!(report.diff_norm > 0.0);
        assert!(report.cosine <= 1.0 + 1e-12);
        assert!(report.direct_norm > 0.0 && report.event_norm > 0.0);
    }

    #[test]
    fn eval_probs_chunking_is_invisible() {
        let net = tiny_net(7);
        let mut images = Vec::new();
        for i in 0..5 {
            images.push(Tensor::full(&[1, 4, 4], i as f64 / 5.0));
        }
        let all = eval_probs_dataset(&net, &images, &Encoder::Ttfs, 3).unwrap();
        // Recompute each row alone; batching must not change any value.
        for (i, img) in images.iter().enumerate() {
            let one = eval_probs_dataset(&net, std::slice::from_ref(img), &Encoder::Ttfs, 3).unwrap();
            assert_eq!(one.data, all.data[i * 2..(i + 1) * 2].to_vec());
        }
    }

    #[test]
    fn firing_rates_zero_input_and_range() {
        let net = tiny_net(13);
        let zeros = vec![Tensor::zeros(&[1, 4, 4])];
        let rates = firing_rates(&net, &zeros, &Encoder::Direct, 3).unwrap();
        assert_eq!(rates.len(), 1);
        assert_eq!(rates[0], 0.0);

        let ones = vec![Tensor::full(&[1, 4, 4], 1.0)];
        let rates = firing_rates(&net, &ones, &Encoder::Direct, 3).unwrap();
        assert!((0.0..=1.0).contains(&rates[0]));
    }
}
