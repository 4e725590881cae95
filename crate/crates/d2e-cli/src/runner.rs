//! Subcommand implementations: each builds datasets and networks from the
//! experiment config, runs the experiment, and writes CSV/JSON/SVG outputs
//! into the chosen directory.

use std::fs;
use std::path::{Path, PathBuf};

use d2e_core::analysis::{
    self, fit_tv_from_trajectory, firing_rates, gradient_mismatch, layer1_collapse, soft_accuracy,
    transfer_bound_report, tv_exact,
};
use d2e_core::config::Config;
use d2e_core::dataset::{self, Dataset};
use d2e_core::encoders::Encoder;
use d2e_core::energy::{estimate_energy, training_cost, EnergyParams};
use d2e_core::network::{self, ArchitectureSpec, SpikingNetwork};
use d2e_core::plot::{dual_axis_plot, line_plot, Series};
use d2e_core::transfer::{
    pretrain_direct, train_skd, train_tsf, DistillLoss, TrainConfig, TrainLog,
};
use d2e_core::{D2eError, Result};

/// Everything a subcommand needs: config plus materialized datasets, encoder,
/// and architecture.
pub struct Experiment {
    pub cfg: Config,
    pub train: Dataset,
    pub eval: Dataset,
    pub event: Encoder,
    pub arch: ArchitectureSpec,
}

impl Experiment {
    pub fn build(cfg: Config) -> Result<Experiment> {
        let train = match &cfg.train_path {
            Some(p) => Dataset::read_file(Path::new(p))?,
            None => dataset::gen_synthetic(&cfg.data_kind, cfg.n_train, cfg.data_seed())?,
        };
        let eval = match &cfg.eval_path {
            Some(p) => Dataset::read_file(Path::new(p))?,
            // A distinct stream so evaluation images never repeat training ones.
            None => dataset::gen_synthetic(&cfg.data_kind, cfg.n_eval, cfg.data_seed() + 1)?,
        };
        let event = cfg.encoder();
        let (c, h, w) = train.dims();
        let arch = cfg.arch((event.channels_out(c), h, w), train.classes)?;
        Ok(Experiment { cfg, train, eval, event, arch })
    }

    fn fresh_net(&self, seed: u64) -> Result<SpikingNetwork> {
        network::build(&self.arch, self.cfg.lif(), seed)
    }
}

// ── output helpers ──

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| D2eError::Contract(format!("cannot serialize {name}: {e}")))?;
    write_text(dir, name, &format!("{text}\n"))
}

fn epochs_axis(log: &TrainLog) -> Vec<f64> {
    log.rows.iter().map(|r| r.epoch as f64).collect()
}

fn column(log: &TrainLog, f: impl Fn(&d2e_core::transfer::EpochRow) -> f64) -> Vec<f64> {
    log.rows.iter().map(f).collect()
}

fn final_row(log: &TrainLog) -> Result<&d2e_core::transfer::EpochRow> {
    log.rows
        .last()
        .ok_or_else(|| D2eError::Contract("training produced no epochs".into()))
}

fn accuracy_plot(title: &str, log: &TrainLog) -> Result<String> {
    line_plot(
        title,
        "epoch",
        "value",
        &epochs_axis(log),
        &[
            Series { label: "loss".into(), ys: column(log, |r| r.loss) },
            Series { label: "acc_dir_hard".into(), ys: column(log, |r| r.acc_dir_hard) },
            Series { label: "acc_evt_hard".into(), ys: column(log, |r| r.acc_evt_hard) },
        ],
    )
}

// ── pretrain ──

#[derive(serde::Serialize)]
struct PretrainSummary {
    seed: u64,
    arch: String,
    params: usize,
    n_train: usize,
    n_eval: usize,
    encoder: &'static str,
    t_steps: usize,
    final_epoch: d2e_core::transfer::EpochRow,
}

pub fn pretrain(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let mut net = exp.fresh_net(exp.cfg.seed)?;
    let log = pretrain_direct(&mut net, &exp.train, &exp.eval, &exp.event, &exp.cfg.train())?;
    write_text(out, "pretrain.csv", &log.to_csv())?;
    write_json(
        out,
        "summary.json",
        &PretrainSummary {
            seed: exp.cfg.seed,
            arch: arch_label(&exp.cfg),
            params: net.param_count(),
            n_train: exp.train.len(),
            n_eval: exp.eval.len(),
            encoder: exp.event.name(),
            t_steps: exp.cfg.t_steps,
            final_epoch: final_row(&log)?.clone(),
        },
    )?;
    write_text(out, "pretrain.svg", &accuracy_plot("pretraining on the direct code", &log)?)?;
    let last = final_row(&log)?;
    println!(
        "pretrain done: acc_dir_hard={} acc_evt_hard={}",
        last.acc_dir_hard, last.acc_evt_hard
    );
    Ok(())
}

fn arch_label(cfg: &Config) -> String {
    cfg.arch_layers.clone().unwrap_or_else(|| cfg.arch_name.clone())
}

// ── transfer ──

#[derive(serde::Serialize)]
struct TransferSummary {
    method: String,
    alpha: Option<f64>,
    loss: Option<&'static str>,
    seed: u64,
    pretrain_final: d2e_core::transfer::EpochRow,
    transfer_final: d2e_core::transfer::EpochRow,
}

/// Pretrains a teacher on the direct code, then transfers to the event code
/// with the configured method. Returns (pretrain log, transfer log, student).
fn pretrain_and_transfer(exp: &Experiment, seed: u64) -> Result<(TrainLog, TrainLog, SpikingNetwork)> {
    let mut teacher = exp.fresh_net(seed)?;
    let pre_cfg = TrainConfig { seed, ..exp.cfg.pretrain_train() };
    let pre_log = pretrain_direct(&mut teacher, &exp.train, &exp.eval, &exp.event, &pre_cfg)?;
    let mut student = teacher.clone();
    let t_cfg = TrainConfig { seed, ..exp.cfg.train() };
    let log = match exp.cfg.method.as_str() {
        "skd" => train_skd(
            &mut student,
            &teacher,
            &exp.train,
            &exp.eval,
            &exp.event,
            &t_cfg,
            exp.cfg.alpha,
            exp.cfg.distill(),
        )?,
        _ => train_tsf(&mut student, &exp.train, &exp.eval, &exp.event, &t_cfg)?,
    };
    Ok((pre_log, log, student))
}

pub fn transfer(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let (pre_log, log, _student) = pretrain_and_transfer(&exp, exp.cfg.seed)?;
    write_text(out, "pretrain.csv", &pre_log.to_csv())?;
    write_text(out, "transfer.csv", &log.to_csv())?;
    let skd = exp.cfg.method == "skd";
    write_json(
        out,
        "summary.json",
        &TransferSummary {
            method: exp.cfg.method.clone(),
            alpha: skd.then_some(exp.cfg.alpha),
            loss: skd.then(|| exp.cfg.distill().name()),
            seed: exp.cfg.seed,
            pretrain_final: final_row(&pre_log)?.clone(),
            transfer_final: final_row(&log)?.clone(),
        },
    )?;
    write_text(out, "transfer.svg", &accuracy_plot("transfer to the event code", &log)?)?;
    let last = final_row(&log)?;
    println!(
        "transfer ({}) done: acc_evt_hard={} kl_mean={}",
        exp.cfg.method, last.acc_evt_hard, last.kl_mean
    );
    Ok(())
}

// ── sweep-alpha ──

pub fn sweep_alpha(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let alphas = exp.cfg.sweep_alphas.clone();
    let kind = exp.cfg.distill();

    let mut runs = String::from("alpha,seed,acc_evt_soft,acc_evt_hard,kl_mean\n");
    // mean accuracy per alpha, accumulated over seeds
    let mut soft_sum = vec![0.0; alphas.len()];
    let mut hard_sum = vec![0.0; alphas.len()];
    let mut kl_sum = vec![0.0; alphas.len()];

    for s in 0..exp.cfg.sweep_seeds {
        let seed = exp.cfg.seed + s as u64;
        let mut teacher = exp.fresh_net(seed)?;
        let pre_cfg = TrainConfig { seed, ..exp.cfg.pretrain_train() };
        pretrain_direct(&mut teacher, &exp.train, &exp.eval, &exp.event, &pre_cfg)?;
        let t_cfg = TrainConfig { seed, ..exp.cfg.train() };
        for (ai, &alpha) in alphas.iter().enumerate() {
            let mut student = teacher.clone();
            let log = train_skd(
                &mut student,
                &teacher,
                &exp.train,
                &exp.eval,
                &exp.event,
                &t_cfg,
                alpha,
                kind,
            )?;
            let last = final_row(&log)?;
            runs.push_str(&format!(
                "{alpha},{seed},{},{},{}\n",
                last.acc_evt_soft, last.acc_evt_hard, last.kl_mean
            ));
            soft_sum[ai] += last.acc_evt_soft;
            hard_sum[ai] += last.acc_evt_hard;
            kl_sum[ai] += last.kl_mean;
        }
    }

    let n = exp.cfg.sweep_seeds as f64;
    let mut mean = String::from("alpha,acc_evt_soft,acc_evt_hard,kl_mean\n");
    for (ai, &alpha) in alphas.iter().enumerate() {
        mean.push_str(&format!(
            "{alpha},{},{},{}\n",
            soft_sum[ai] / n,
            hard_sum[ai] / n,
            kl_sum[ai] / n
        ));
    }
    write_text(out, "sweep.csv", &mean)?;
    write_text(out, "sweep_runs.csv", &runs)?;
    let svg = line_plot(
        "loss mix versus final event accuracy",
        "alpha",
        "accuracy",
        &alphas,
        &[
            Series {
                label: "acc_evt_hard".into(),
                ys: hard_sum.iter().map(|v| v / n).collect(),
            },
            Series {
                label: "acc_evt_soft".into(),
                ys: soft_sum.iter().map(|v| v / n).collect(),
            },
        ],
    )?;
    write_text(out, "sweep.svg", &svg)?;
    println!("sweep done: {} alphas x {} seeds", alphas.len(), exp.cfg.sweep_seeds);
    Ok(())
}

// ── ablate-loss ──

#[derive(serde::Serialize)]
struct AblateRow {
    loss: &'static str,
    kl_mean: f64,
    acc_evt_soft: f64,
    acc_evt_hard: f64,
}

#[derive(serde::Serialize)]
struct AblateSummary {
    lowest_kl_loss: &'static str,
    rows: Vec<AblateRow>,
}

pub fn ablate_loss(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let mut teacher = exp.fresh_net(exp.cfg.seed)?;
    let pre_cfg = exp.cfg.pretrain_train();
    pretrain_direct(&mut teacher, &exp.train, &exp.eval, &exp.event, &pre_cfg)?;

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut axis = Vec::new();
    for kind in DistillLoss::ALL {
        let mut student = teacher.clone();
        let log = train_skd(
            &mut student,
            &teacher,
            &exp.train,
            &exp.eval,
            &exp.event,
            &exp.cfg.train(),
            exp.cfg.alpha,
            kind,
        )?;
        let last = final_row(&log)?;
        rows.push(AblateRow {
            loss: kind.name(),
            kl_mean: last.kl_mean,
            acc_evt_soft: last.acc_evt_soft,
            acc_evt_hard: last.acc_evt_hard,
        });
        axis = epochs_axis(&log);
        curves.push(Series { label: kind.name().into(), ys: column(&log, |r| r.kl_mean) });
    }

    let mut csv = String::from("loss,kl_mean,acc_evt_soft,acc_evt_hard\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.loss, r.kl_mean, r.acc_evt_soft, r.acc_evt_hard));
    }
    write_text(out, "ablate.csv", &csv)?;
    let lowest = rows
        .iter()
        .min_by(|a, b| a.kl_mean.total_cmp(&b.kl_mean))
        .map(|r| r.loss)
        .unwrap_or("none");
    write_json(out, "summary.json", &AblateSummary { lowest_kl_loss: lowest, rows })?;
    write_text(
        out,
        "ablate.svg",
        &line_plot("teacher-student divergence by distillation loss", "epoch", "forward KL", &axis, &curves)?,
    )?;
    println!("ablate done: lowest converged forward KL under `{lowest}`");
    Ok(())
}

// ── bound-trace ──

#[derive(serde::Serialize)]
struct BoundSummary {
    tv_mode: String,
    tv: f64,
    acc_reference: f64,
    holds_every_epoch: bool,
    final_epoch: analysis::BoundReport,
}

pub fn bound_trace(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let mut teacher = exp.fresh_net(exp.cfg.seed)?;
    let pre_cfg = exp.cfg.pretrain_train();
    let pre_log = pretrain_direct(&mut teacher, &exp.train, &exp.eval, &exp.event, &pre_cfg)?;
    write_text(out, "pretrain.csv", &pre_log.to_csv())?;

    // Reference soft accuracy: the pretrained net read out under the direct code.
    let direct = exp.event.direct_twin();
    let ref_probs =
        analysis::eval_probs_dataset(&teacher, &exp.eval.images, &direct, exp.cfg.t_steps)?;
    let acc_reference = soft_accuracy(&ref_probs, &exp.eval.labels)?;

    let mut student = teacher.clone();
    let t_cfg = exp.cfg.train();
    let log = match exp.cfg.method.as_str() {
        "skd" => train_skd(
            &mut student,
            &teacher,
            &exp.train,
            &exp.eval,
            &exp.event,
            &t_cfg,
            exp.cfg.alpha,
            exp.cfg.distill(),
        )?,
        _ => train_tsf(&mut student, &exp.train, &exp.eval, &exp.event, &t_cfg)?,
    };

    let gaps: Vec<f64> = log.rows.iter().map(|r| (acc_reference - r.acc_evt_soft).abs()).collect();
    let kls: Vec<f64> = column(&log, |r| r.kl_mean);
    let tv = match exp.cfg.tv_mode.as_str() {
        "exact" => tv_exact(&exp.eval, &exp.event, exp.cfg.t_steps)?,
        "fitted_constant" => exp.cfg.tv_constant,
        _ => fit_tv_from_trajectory(&gaps, &kls)?,
    };

    let mut csv = String::from("epoch,gap,kl_mean,tv,rhs,holds\n");
    let mut holds_all = true;
    let mut last_report = None;
    for (row, &gap) in log.rows.iter().zip(&gaps) {
        let report = transfer_bound_report(acc_reference, row.acc_evt_soft, row.kl_mean, tv);
        debug_assert!((report.gap - gap).abs() < 1e-15);
        holds_all &= report.holds;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch, report.gap, report.kl_mean, report.tv, report.rhs, report.holds
        ));
        last_report = Some(report);
    }
    write_text(out, "trace.csv", &csv)?;
    let final_epoch =
        last_report.ok_or_else(|| D2eError::Contract("training produced no epochs".into()))?;
    write_json(
        out,
        "summary.json",
        &BoundSummary {
            tv_mode: exp.cfg.tv_mode.clone(),
            tv,
            acc_reference,
            holds_every_epoch: holds_all,
            final_epoch,
        },
    )?;
    let svg = dual_axis_plot(
        "divergence versus accuracy gap",
        "epoch",
        "kl_mean",
        "gap",
        &epochs_axis(&log),
        &Series { label: "kl_mean".into(), ys: kls },
        &Series { label: "gap".into(), ys: gaps },
    )?;
    write_text(out, "bound.svg", &svg)?;
    println!("bound trace done: tv={tv} holds_every_epoch={holds_all}");
    Ok(())
}

// ── energy ──

#[derive(serde::Serialize)]
struct EnergySummary {
    t_steps: usize,
    rates: Vec<f64>,
    report: d2e_core::energy::EnergyReport,
}

pub fn energy(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let mut net = exp.fresh_net(exp.cfg.seed)?;
    // Rates are measured on a trained net so they reflect the deployed model.
    let pre_cfg = exp.cfg.pretrain_train();
    pretrain_direct(&mut net, &exp.train, &exp.eval, &exp.event, &pre_cfg)?;
    let rates = firing_rates(&net, &exp.eval.images, &exp.event, exp.cfg.t_steps)?;
    let params = EnergyParams { e_mac: exp.cfg.e_mac, e_ac: exp.cfg.e_ac };
    let report = estimate_energy(&exp.arch, &rates, exp.cfg.t_steps, &params)?;
    println!(
        "energy: direct={:.3e} J event={:.3e} J ratio={:.4}",
        report.direct_j, report.event_j, report.ratio
    );
    write_json(
        out,
        "energy.json",
        &EnergySummary { t_steps: exp.cfg.t_steps, rates, report },
    )?;
    Ok(())
}

// ── cost ──

pub fn cost(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let ledger = training_cost(&exp.arch, exp.cfg.t_steps)?;
    println!(
        "cost: overhead={:.2}% skd/tsf={:.3}",
        ledger.overhead_pct, ledger.skd_tsf_ratio
    );
    write_json(out, "cost.json", &ledger)?;
    Ok(())
}

// ── capacity ──

#[derive(serde::Serialize)]
struct CapacitySummary {
    d: usize,
    t_steps: usize,
    alphabet: usize,
    bits: f64,
    bits_ceil: f64,
    /// Total codeword count, only when the code space is small enough to count.
    codewords: Option<f64>,
}

pub fn capacity(d: usize, t_steps: usize, out: &Path) -> Result<()> {
    if d == 0 {
        return Err(D2eError::config("--d", "pixel count must be positive"));
    }
    if t_steps == 0 {
        return Err(D2eError::config("--T", "time steps must be positive"));
    }
    let bits = analysis::capacity_bound(d, t_steps);
    let codewords = (bits <= 40.0).then(|| ((t_steps + 1) as f64).powi(d as i32));
    println!("capacity: {bits:.2} bits (ceil {})", bits.ceil());
    if let Some(c) = codewords {
        println!("codewords: {c}");
    }
    write_json(
        out,
        "capacity.json",
        &CapacitySummary {
            d,
            t_steps,
            alphabet: t_steps + 1,
            bits,
            bits_ceil: bits.ceil(),
            codewords,
        },
    )?;
    Ok(())
}

// ── collapse ──

#[derive(serde::Serialize)]
struct CollapseSummary {
    t_steps: usize,
    uniform_reference: f64,
    stats: analysis::CollapseStats,
}

pub fn collapse(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let net = exp.fresh_net(exp.cfg.seed)?;
    let stats = layer1_collapse(&net, &exp.eval.images, &exp.event, exp.cfg.t_steps)?;
    println!(
        "collapse: ratio={} (1/T={})",
        stats.ratio,
        1.0 / exp.cfg.t_steps as f64
    );
    write_json(
        out,
        "collapse.json",
        &CollapseSummary {
            t_steps: exp.cfg.t_steps,
            uniform_reference: 1.0 / exp.cfg.t_steps as f64,
            stats,
        },
    )?;
    Ok(())
}

// ── mismatch ──

pub fn mismatch(cfg: Config, out: &Path) -> Result<()> {
    let exp = Experiment::build(cfg)?;
    let mut net = exp.fresh_net(exp.cfg.seed)?;
    // Measure at a trained point: the interesting question is how far the two
    // codes' gradients diverge where the direct model actually lives.
    let pre_cfg = exp.cfg.pretrain_train();
    pretrain_direct(&mut net, &exp.train, &exp.eval, &exp.event, &pre_cfg)?;
    let report = gradient_mismatch(&net, &exp.eval, &exp.event, exp.cfg.t_steps)?;
    println!("mismatch: cosine={} diff_norm={}", report.cosine, report.diff_norm);
    write_json(out, "mismatch.json", &report)?;
    Ok(())
}
