//! Training entry points: direct-code pretraining, plain event finetuning
//! (TSF), and soft knowledge distillation from the frozen direct twin (SKD).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{eval_probs_dataset, expected_kl, hard_accuracy, soft_accuracy};
use crate::dataset::Dataset;
use crate::encoders::Encoder;
use crate::error::{D2eError, Result};
use crate::network::{self, SpikingNetwork};
use crate::optim::{lr_schedule, Sgd};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

// ── distillation losses ──

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillLoss {
    ForwardKl,
    ReverseKl,
    JensenShannon,
    MseSoftmax,
    L1Softmax,
}

impl DistillLoss {
    pub const ALL: [DistillLoss; 5] = [
        DistillLoss::ForwardKl,
        DistillLoss::ReverseKl,
        DistillLoss::JensenShannon,
        DistillLoss::MseSoftmax,
        DistillLoss::L1Softmax,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistillLoss::ForwardKl => "forward_kl",
            DistillLoss::ReverseKl => "reverse_kl",
            DistillLoss::JensenShannon => "jensen_shannon",
            DistillLoss::MseSoftmax => "mse_softmax",
            DistillLoss::L1Softmax => "l1_softmax",
        }
    }

    pub fn parse(s: &str) -> Result<DistillLoss> {
        DistillLoss::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| {
                D2eError::config(
                    "transfer.loss",
                    format!(
                        "unknown loss `{s}` (known: {})",
                        DistillLoss::ALL.map(|l| l.name()).join(", ")
                    ),
                )
            })
    }
}

/// Distance from the teacher's class distribution to the student's, built on
/// the tape so gradients reach the student. Both inputs must be [B×C]
/// row-stochastic.
pub fn distillation_loss(
    tape: &mut Tape,
    teacher: Var,
    student: Var,
    kind: DistillLoss,
) -> Result<Var> {
    for (var, who) in [(teacher, "teacher"), (student, "student")] {
        let v = tape.value(var);
        if v.ndim() != 2 {
            return Err(D2eError::Contract(format!(
                "{who} probabilities must be [B,C], got {:?}",
                v.shape
            )));
        }
        let classes = v.shape[1];
        for (i, row) in v.data.chunks(classes).enumerate() {
            if row.iter().any(|&p| p < -1e-12) {
                return Err(D2eError::Contract(format!("{who} row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(D2eError::Contract(format!("{who} row {i} sums to {s}, not 1")));
            }
        }
    }
    match kind {
        DistillLoss::ForwardKl => tape.kl_divergence(teacher, student),
        DistillLoss::ReverseKl => tape.kl_divergence(student, teacher),
        DistillLoss::JensenShannon => {
            let sum = tape.add(teacher, student)?;
            let mid = tape.scale(sum, 0.5);
            let a = tape.kl_divergence(teacher, mid)?;
            let b = tape.kl_divergence(student, mid)?;
            let half_a = tape.scale(a, 0.5);
            let half_b = tape.scale(b, 0.5);
            tape.add(half_a, half_b)
        }
        DistillLoss::MseSoftmax => {
            let d = tape.sub(teacher, student)?;
            let sq = tape.mul(d, d)?;
            Ok(tape.mean_all(sq))
        }
        DistillLoss::L1Softmax => {
            let d = tape.sub(teacher, student)?;
            let a = tape.abs(d);
            Ok(tape.mean_all(a))
        }
    }
}

// ── configuration and logging ──

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Peak learning rate; the per-epoch value comes from `lr_schedule`.
    pub lr: f64,
    pub warmup: usize,
    pub momentum: f64,
    pub t_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch: 32,
            lr: 0.05,
            warmup: 2,
            momentum: 0.9,
            t_steps: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub distill: f64,
    pub acc_dir_soft: f64,
    pub acc_dir_hard: f64,
    pub acc_evt_soft: f64,
    pub acc_evt_hard: f64,
    pub kl_mean: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    pub const COLUMNS: &'static str =
        "epoch,loss,ce,distill,acc_dir_soft,acc_dir_hard,acc_evt_soft,acc_evt_hard,kl_mean,lr";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::COLUMNS);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.loss,
                r.ce,
                r.distill,
                r.acc_dir_soft,
                r.acc_dir_hard,
                r.acc_evt_soft,
                r.acc_evt_hard,
                r.kl_mean,
                r.lr
            ));
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }
}

// ── training internals ──

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    s[16] = 0x5a;
    ChaCha8Rng::from_seed(s)
}

struct DistillPlan<'a> {
    teacher: &'a SpikingNetwork,
    alpha: f64,
    kind: DistillLoss,
    /// Input format of the teacher: the real-valued twin of the event code.
    direct: Encoder,
}

/// One pass over the training set. Returns batch-weighted mean loss parts
/// (loss, ce, distill).
fn run_epoch(
    net: &mut SpikingNetwork,
    opt: &mut Sgd,
    train: &Dataset,
    encoder: &Encoder,
    distill: Option<&DistillPlan>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, f64, f64)> {
    let lr = lr_schedule(cfg.lr, epoch, cfg.warmup, cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut epoch_rng(cfg.seed, epoch));

    let mut loss_sum = 0.0;
    let mut ce_sum = 0.0;
    let mut distill_sum = 0.0;
    for batch_idx in order.chunks(cfg.batch.max(1)) {
        let images: Vec<&Tensor> = batch_idx.iter().map(|&i| &train.images[i]).collect();
        let labels: Vec<usize> = batch_idx.iter().map(|&i| train.labels[i]).collect();
        let steps = network::encoded_steps(encoder, &images, cfg.t_steps)?;

        let mut tape = Tape::new();
        let (probs, run) = network::forward_probs(net, &mut tape, &steps)?;
        let ce = tape.cross_entropy(probs, &labels)?;
        let (loss, distill_val) = match distill {
            Some(plan) if plan.alpha < 1.0 => {
                let teacher_steps = network::encoded_steps(&plan.direct, &images, cfg.t_steps)?;
                let teacher_probs = network::eval_probs(plan.teacher, &teacher_steps)?;
                let teacher_var = tape.leaf(teacher_probs);
                let d = distillation_loss(&mut tape, teacher_var, probs, plan.kind)?;
                let ce_part = tape.scale(ce, plan.alpha);
                let d_part = tape.scale(d, 1.0 - plan.alpha);
                (tape.add(ce_part, d_part)?, tape.value(d).item())
            }
            // alpha = 1 takes the exact plain-finetune path: no teacher pass,
            // no extra tape nodes, bit-identical arithmetic.
            _ => (ce, 0.0),
        };

        let loss_val = tape.value(loss).item();
        if !loss_val.is_finite() {
            return Err(D2eError::Divergence(format!(
                "non-finite loss {loss_val} at epoch {epoch}"
            )));
        }
        let w = batch_idx.len() as f64 / train.len() as f64;
        loss_sum += w * loss_val;
        ce_sum += w * tape.value(ce).item();
        distill_sum += w * distill_val;

        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = run
            .param_vars
            .iter()
            .zip(net.param_tensors())
            .map(|(&v, p)| match grads.wrt(v) {
                Some(g) => g.clone(),
                None => Tensor::zeros(&p.shape),
            })
            .collect();
        let mut params = net.param_tensors_mut();
        opt.step(&mut params, &grad_tensors, lr)?;
    }
    Ok((loss_sum, ce_sum, distill_sum))
}

/// Eval-set row: current net under the twin code and the event code, plus
/// KL from `reference_probs` (or the net's own twin-code output) to the
/// event-code output.
fn log_epoch(
    net: &SpikingNetwork,
    eval: &Dataset,
    event: &Encoder,
    reference_probs: Option<&Tensor>,
    cfg: &TrainConfig,
    epoch: usize,
    parts: (f64, f64, f64),
) -> Result<EpochRow> {
    let direct = event.direct_twin();
    let probs_dir = eval_probs_dataset(net, &eval.images, &direct, cfg.t_steps)?;
    let probs_evt = eval_probs_dataset(net, &eval.images, event, cfg.t_steps)?;
    let kl_mean = expected_kl(reference_probs.unwrap_or(&probs_dir), &probs_evt)?;
    Ok(EpochRow {
        epoch,
        loss: parts.0,
        ce: parts.1,
        distill: parts.2,
        acc_dir_soft: soft_accuracy(&probs_dir, &eval.labels)?,
        acc_dir_hard: hard_accuracy(&probs_dir, &eval.labels)?,
        acc_evt_soft: soft_accuracy(&probs_evt, &eval.labels)?,
        acc_evt_hard: hard_accuracy(&probs_evt, &eval.labels)?,
        kl_mean,
        lr: lr_schedule(cfg.lr, epoch, cfg.warmup, cfg.epochs),
    })
}

fn check_common(train: &Dataset, eval: &Dataset, cfg: &TrainConfig) -> Result<()> {
    train.validate()?;
    eval.validate()?;
    if cfg.t_steps == 0 {
        return Err(D2eError::config("T", "need at least one timestep"));
    }
    if cfg.batch == 0 {
        return Err(D2eError::config("train.batch", "batch must be positive"));
    }
    Ok(())
}

// ── entry points ──

/// Trains on the real-valued twin code. The log's event columns show how the
/// same weights behave on `event` input, and kl_mean is the gap between the
/// net's own twin-code and event-code outputs.
pub fn pretrain_direct(
    net: &mut SpikingNetwork,
    train: &Dataset,
    eval: &Dataset,
    event: &Encoder,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    check_common(train, eval, cfg)?;
    let direct = event.direct_twin();
    let mut opt = Sgd::new(cfg.momentum, net.param_tensors().len());
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let parts = run_epoch(net, &mut opt, train, &direct, None, cfg, epoch)?;
        log.rows.push(log_epoch(net, eval, event, None, cfg, epoch, parts)?);
    }
    Ok(log)
}

/// Plain event finetuning: cross-entropy on event codes, starting from the
/// pretrained weights. kl_mean tracks divergence from the frozen starting
/// point's twin-code predictions.
pub fn train_tsf(
    net: &mut SpikingNetwork,
    train: &Dataset,
    eval: &Dataset,
    event: &Encoder,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    check_common(train, eval, cfg)?;
    let reference = eval_probs_dataset(net, &eval.images, &event.direct_twin(), cfg.t_steps)?;
    let mut opt = Sgd::new(cfg.momentum, net.param_tensors().len());
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let parts = run_epoch(net, &mut opt, train, event, None, cfg, epoch)?;
        log.rows.push(log_epoch(net, eval, event, Some(&reference), cfg, epoch, parts)?);
    }
    Ok(log)
}

/// Soft knowledge distillation: alpha * CE + (1 - alpha) * distance from the
/// frozen teacher's twin-code predictions. alpha = 1 reproduces plain
/// finetuning exactly, bit for bit.
pub fn train_skd(
    net: &mut SpikingNetwork,
    teacher: &SpikingNetwork,
    train: &Dataset,
    eval: &Dataset,
    event: &Encoder,
    cfg: &TrainConfig,
    alpha: f64,
    kind: DistillLoss,
) -> Result<TrainLog> {
    check_common(train, eval, cfg)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(D2eError::config(
            "transfer.alpha",
            format!("alpha must be in [0,1], got {alpha}"),
        ));
    }
    let direct = event.direct_twin();
    let reference = eval_probs_dataset(teacher, &eval.images, &direct, cfg.t_steps)?;
    let plan = DistillPlan { teacher, alpha, kind, direct };
    let mut opt = Sgd::new(cfg.momentum, net.param_tensors().len());
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let parts = run_epoch(net, &mut opt, train, event, Some(&plan), cfg, epoch)?;
        log.rows.push(log_epoch(net, eval, event, Some(&reference), cfg, epoch, parts)?);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build, ArchitectureSpec};
    use crate::neuron::LifParams;

    fn dist(rows: &[[f64; 2]]) -> Tensor {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn distill_losses_zero_at_equality() {
        let p = dist(&[[0.3, 0.7], [0.9, 0.1]]);
        for kind in DistillLoss::ALL {
            let mut tape = Tape::new();
            let t = tape.leaf(p.clone());
            let s = tape.leaf(p.clone());
            let loss = distillation_loss(&mut tape, t, s, kind).unwrap();
            assert!(
                tape.value(loss).item().abs() < 1e-12,
                "{} not zero at p == q",
                kind.name()
            );
        }
    }

    #[test]
    fn distill_losses_hand_values() {
        let t = dist(&[[0.75, 0.25]]);
        let s = dist(&[[0.5, 0.5]]);
        let eval = |kind: DistillLoss| {
            let mut tape = Tape::new();
            let tv = tape.leaf(t.clone());
            let sv = tape.leaf(s.clone());
            let l = distillation_loss(&mut tape, tv, sv, kind).unwrap();
            tape.value(l).item()
        };
        let fkl = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((eval(DistillLoss::ForwardKl) - fkl).abs() < 1e-12);
        let rkl = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((eval(DistillLoss::ReverseKl) - rkl).abs() < 1e-12);
        let js = 0.5
            * (0.75 * (0.75f64 / 0.625).ln() + 0.25 * (0.25f64 / 0.375).ln())
            + 0.5 * (0.5 * (0.5f64 / 0.625).ln() + 0.5 * (0.5f64 / 0.375).ln());
        assert!((eval(DistillLoss::JensenShannon) - js).abs() < 1e-12);
        assert!((eval(DistillLoss::MseSoftmax) - 0.0625).abs() < 1e-15);
        assert!((eval(DistillLoss::L1Softmax) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn jensen_shannon_capped_at_ln2() {
        let mut tape = Tape::new();
        let t = tape.leaf(dist(&[[1.0, 0.0]]));
        let s = tape.leaf(dist(&[[0.0, 1.0]]));
        let loss = distillation_loss(&mut tape, t, s, DistillLoss::JensenShannon).unwrap();
        let v = tape.value(loss).item();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn distill_rejects_non_distribution() {
        let mut tape = Tape::new();
        let t = tape.leaf(dist(&[[0.6, 0.2]]));
        let s = tape.leaf(dist(&[[0.5, 0.5]]));
        assert!(distillation_loss(&mut tape, t, s, DistillLoss::ForwardKl).is_err());
    }

    #[test]
    fn distill_gradients_match_finite_differences() {
        // Perturb logits (not probabilities) so rows stay on the simplex.
        let teacher = dist(&[[0.7, 0.3], [0.2, 0.8]]);
        for kind in [DistillLoss::ForwardKl, DistillLoss::MseSoftmax, DistillLoss::JensenShannon] {
            let t = teacher.clone();
            let worst = crate::tape::grad_check(
                move |tape, params| {
                    let probs = tape.softmax(params[0])?;
                    let tvar = tape.leaf(t.clone());
                    distillation_loss(tape, tvar, probs, kind)
                },
                &[Tensor::new(vec![2, 2], vec![0.3, -0.2, 0.8, 0.1]).unwrap()],
                1e-5,
            )
            .unwrap();
            assert!(worst < 1e-6, "{}: worst rel err {}", kind.name(), worst);
        }
    }

    #[test]
    fn loss_name_round_trip_and_unknown() {
        for kind in DistillLoss::ALL {
            assert_eq!(DistillLoss::parse(kind.name()).unwrap(), kind);
        }
        assert!(DistillLoss::parse("hinge").is_err());
    }

    fn toy_data(n: usize, seed: u64) -> Dataset {
        crate::dataset::gen_synthetic("two-blobs", n, seed).unwrap()
    }

    fn toy_net(seed: u64) -> SpikingNetwork {
        let spec = ArchitectureSpec::tiny_mlp((1, 16, 16), 2);
        // Low threshold so the hidden layer fires on faint toy images.
        let lif = LifParams { v_threshold: 0.1, ..LifParams::default() };
        build(&spec, lif, seed).unwrap()
    }

    fn toy_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch: 8,
            lr: 0.2,
            warmup: 0,
            momentum: 0.9,
            t_steps: 2,
            seed: 42,
        }
    }

    #[test]
    fn pretrain_runs_and_logs() {
        let mut net = toy_net(1);
        let train = toy_data(32, 5);
        let eval = toy_data(16, 6);
        let log = pretrain_direct(&mut net, &train, &eval, &Encoder::Ttfs, &toy_cfg(4)).unwrap();
        assert_eq!(log.rows.len(), 4);
        let csv = log.to_csv();
        assert!(csv.starts_with(TrainLog::COLUMNS));
        assert_eq!(csv.lines().count(), 5);
        for row in &log.rows {
            assert!(row.loss.is_finite());
            assert_eq!(row.distill, 0.0);
            assert!(row.kl_mean >= 0.0);
        }
        // Two-blob classes are linearly separable; four epochs must help.
        assert!(log.rows[3].ce < log.rows[0].ce);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let train = toy_data(16, 7);
        let eval = toy_data(8, 8);
        let mut a = toy_net(3);
        let mut b = toy_net(3);
        let log_a = pretrain_direct(&mut a, &train, &eval, &Encoder::Ttfs, &toy_cfg(2)).unwrap();
        let log_b = pretrain_direct(&mut b, &train, &eval, &Encoder::Ttfs, &toy_cfg(2)).unwrap();
        assert_eq!(log_a.to_csv(), log_b.to_csv());
        for (pa, pb) in a.param_tensors().iter().zip(b.param_tensors()) {
            assert_eq!(pa.data, pb.data);
        }
    }

    #[test]
    fn skd_alpha_one_is_bitwise_tsf() {
        let train = toy_data(16, 9);
        let eval = toy_data(8, 10);
        let mut teacher = toy_net(4);
        let _ = pretrain_direct(&mut teacher, &train, &eval, &Encoder::Ttfs, &toy_cfg(1)).unwrap();

        let mut tsf_net = teacher.clone();
        let mut skd_net = teacher.clone();
        let cfg = toy_cfg(2);
        let tsf_log = train_tsf(&mut tsf_net, &train, &eval, &Encoder::Ttfs, &cfg).unwrap();
        let skd_log = train_skd(
            &mut skd_net,
            &teacher,
            &train,
            &eval,
            &Encoder::Ttfs,
            &cfg,
            1.0,
            DistillLoss::ForwardKl,
        )
        .unwrap();
        for (pa, pb) in tsf_net.param_tensors().iter().zip(skd_net.param_tensors()) {
            assert_eq!(pa.data, pb.data, "alpha=1 must not disturb the trajectory");
        }
        assert_eq!(tsf_log.to_csv(), skd_log.to_csv());
    }

    #[test]
    fn skd_blends_losses_and_validates_alpha() {
        let train = toy_data(16, 11);
        let eval = toy_data(8, 12);
        let teacher = toy_net(5);
        let mut student = teacher.clone();
        let cfg = toy_cfg(1);
        let log = train_skd(
            &mut student,
            &teacher,
            &train,
            &eval,
            &Encoder::Ttfs,
            &cfg,
            0.5,
            DistillLoss::ForwardKl,
        )
        .unwrap();
        let row = log.last().unwrap();
        assert!(row.distill > 0.0);
        assert!((row.loss - (0.5 * row.ce + 0.5 * row.distill)).abs() < 1e-9);

        let mut other = teacher.clone();
        let err = train_skd(
            &mut other,
            &teacher,
            &train,
            &eval,
            &Encoder::Ttfs,
            &cfg,
            1.5,
            DistillLoss::ForwardKl,
        );
        assert!(matches!(err, Err(D2eError::Config { .. })));
    }

    #[test]
    fn tsf_kl_column_tracks_frozen_reference() {
        let train = toy_data(16, 13);
        let eval = toy_data(8, 14);
        let mut net = toy_net(6);
        let cfg = toy_cfg(1);
        let reference =
            eval_probs_dataset(&net, &eval.images, &Encoder::Direct, cfg.t_steps).unwrap();
        let log = train_tsf(&mut net, &train, &eval, &Encoder::Ttfs, &cfg).unwrap();
        let probs_evt =
            eval_probs_dataset(&net, &eval.images, &Encoder::Ttfs, cfg.t_steps).unwrap();
        let expect = expected_kl(&reference, &probs_evt).unwrap();
        assert!((log.rows[0].kl_mean - expect).abs() < 1e-12);
    }
}
