//! Flat key=value run configuration. `#` starts a comment, blank lines are
//! skipped, later `--set key=value` overrides win. `seed` is the one
//! required key; any key this module does not know is an error.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::encoders::{DvsParams, Encoder, MotionPath};
use crate::error::{D2eError, Result};
use crate::network::ArchitectureSpec;
use crate::neuron::LifParams;
use crate::optim::base_lr_for_batch;
use crate::transfer::{DistillLoss, TrainConfig};

#[derive(Debug, Clone)]
pub struct Config {
    pub seed: u64,
    pub arch_name: String,
    pub arch_layers: Option<String>,
    pub data_kind: String,
    pub n_train: usize,
    pub n_eval: usize,
    pub data_seed: Option<u64>,
    pub event: String,
    pub dvs_threshold: f64,
    pub dvs_path: String,
    pub dvs_amplitude: f64,
    pub dvs_dx: i64,
    pub dvs_dy: i64,
    pub t_steps: usize,
    pub epochs: usize,
    pub pretrain_epochs: Option<usize>,
    pub batch: usize,
    pub lr: Option<f64>,
    pub warmup: usize,
    pub momentum: f64,
    pub method: String,
    pub alpha: f64,
    pub loss: String,
    pub train_path: Option<String>,
    pub eval_path: Option<String>,
    pub lif_tau: f64,
    pub lif_v_threshold: f64,
    pub lif_v_reset: f64,
    pub lif_surrogate_alpha: f64,
    pub lif_detach_reset: bool,
    pub sweep_alphas: Vec<f64>,
    pub sweep_seeds: usize,
    pub tv_mode: String,
    pub tv_constant: f64,
    pub e_mac: f64,
    pub e_ac: f64,
}

fn parse_num<T: FromStr>(field: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse::<T>()
        .map_err(|e| D2eError::config(field, format!("cannot parse `{raw}`: {e}")))
}

fn parse_bool(field: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(D2eError::config(field, format!("expected true/false, got `{other}`"))),
    }
}

impl Config {
    /// Parses file text plus `--set` overrides (applied in order, after the
    /// file).
    pub fn parse(text: &str, sets: &[(String, String)]) -> Result<Config> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(i) => &raw_line[..i],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                D2eError::config(
                    "config",
                    format!("line {}: expected key=value, got `{line}`", lineno + 1),
                )
            })?;
            let key = k.trim().to_string();
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(D2eError::config(&key, "duplicate key"));
            }
        }
        for (k, v) in sets {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Config::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Config> {
        let mut take = |key: &str| map.remove(key);

        let seed = match take("seed") {
            Some(raw) => parse_num::<u64>("seed", &raw)?,
            None => return Err(D2eError::config("seed", "required key is missing")),
        };

        macro_rules! num {
            ($key:expr, $ty:ty, $default:expr) => {
                match take($key) {
                    Some(raw) => parse_num::<$ty>($key, &raw)?,
                    None => $default,
                }
            };
        }
        macro_rules! text {
            ($key:expr, $default:expr) => {
                take($key).unwrap_or_else(|| $default.to_string())
            };
        }

        let batch = num!("train.batch", usize, 32);
        let lr = match take("train.lr") {
            Some(raw) => Some(parse_num::<f64>("train.lr", &raw)?),
            None => None,
        };
        let data_seed = match take("data.seed") {
            Some(raw) => Some(parse_num::<u64>("data.seed", &raw)?),
            None => None,
        };
        let pretrain_epochs = match take("pretrain.epochs") {
            Some(raw) => Some(parse_num::<usize>("pretrain.epochs", &raw)?),
            None => None,
        };
        let sweep_alphas = match take("sweep.alphas") {
            Some(raw) => raw
                .split(',')
                .map(|tok| parse_num::<f64>("sweep.alphas", tok))
                .collect::<Result<Vec<f64>>>()?,
            None => vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        };

        let cfg = Config {
            seed,
            arch_name: text!("arch.name", "tiny-mlp"),
            arch_layers: take("arch.layers"),
            data_kind: text!("data.kind", "two-blobs"),
            n_train: num!("data.n_train", usize, 128),
            n_eval: num!("data.n_eval", usize, 64),
            data_seed,
            event: text!("encoder.event", "ttfs"),
            dvs_threshold: num!("dvs.threshold", f64, 0.15),
            dvs_path: text!("dvs.path", "triangle"),
            dvs_amplitude: num!("dvs.amplitude", f64, 2.0),
            dvs_dx: num!("dvs.dx", i64, 1),
            dvs_dy: num!("dvs.dy", i64, 0),
            t_steps: num!("T", usize, 4),
            epochs: num!("train.epochs", usize, 10),
            pretrain_epochs,
            batch,
            lr,
            warmup: num!("train.warmup", usize, 2),
            momentum: num!("train.momentum", f64, 0.9),
            method: text!("transfer.method", "tsf"),
            alpha: num!("transfer.alpha", f64, 0.5),
            loss: text!("transfer.loss", "forward_kl"),
            train_path: take("data.train_path"),
            eval_path: take("data.eval_path"),
            lif_tau: num!("lif.tau", f64, 2.0),
            lif_v_threshold: num!("lif.v_threshold", f64, 1.0),
            lif_v_reset: num!("lif.v_reset", f64, 0.0),
            lif_surrogate_alpha: num!("lif.surrogate_alpha", f64, 2.0),
            lif_detach_reset: match take("lif.detach_reset") {
                Some(raw) => parse_bool("lif.detach_reset", &raw)?,
                None => false,
            },
            sweep_alphas,
            sweep_seeds: num!("sweep.seeds", usize, 3),
            tv_mode: text!("bound.tv_mode", "exact"),
            tv_constant: num!("bound.tv_constant", f64, 0.10),
            e_mac: num!("energy.e_mac", f64, 4.6e-12),
            e_ac: num!("energy.e_ac", f64, 0.9e-12),
        };

        if let Some(unknown) = map.keys().next() {
            return Err(D2eError::config(unknown, "unknown key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.event.as_str(), "ttfs" | "dvs") {
            return Err(D2eError::config(
                "encoder.event",
                format!("expected ttfs or dvs, got `{}`", self.event),
            ));
        }
        if !matches!(self.method.as_str(), "tsf" | "skd") {
            return Err(D2eError::config(
                "transfer.method",
                format!("expected tsf or skd, got `{}`", self.method),
            ));
        }
        if !matches!(
            self.tv_mode.as_str(),
            "exact" | "fitted_constant" | "fit_from_trajectory"
        ) {
            return Err(D2eError::config(
                "bound.tv_mode",
                format!(
                    "expected exact, fitted_constant, or fit_from_trajectory, got `{}`",
                    self.tv_mode
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.tv_constant) {
            return Err(D2eError::config("bound.tv_constant", "TV must be in [0,1]"));
        }
        if !matches!(self.dvs_path.as_str(), "triangle" | "linear" | "zero") {
            return Err(D2eError::config(
                "dvs.path",
                format!("expected triangle, linear, or zero, got `{}`", self.dvs_path),
            ));
        }
        DistillLoss::parse(&self.loss)?;
        if self.t_steps == 0 {
            return Err(D2eError::config("T", "need at least one timestep"));
        }
        if self.batch == 0 {
            return Err(D2eError::config("train.batch", "batch must be positive"));
        }
        if self.lif_tau <= 0.0 {
            return Err(D2eError::config("lif.tau", "tau must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(D2eError::config("transfer.alpha", "alpha must be in [0,1]"));
        }
        if let Some(&bad) = self.sweep_alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(D2eError::config("sweep.alphas", format!("alpha {bad} outside [0,1]")));
        }
        if self.sweep_seeds == 0 {
            return Err(D2eError::config("sweep.seeds", "need at least one seed"));
        }
        if self.e_mac <= 0.0 || self.e_ac <= 0.0 {
            return Err(D2eError::config("energy.e_mac", "energy costs must be positive"));
        }
        Ok(())
    }

    // ── typed views ──

    pub fn encoder(&self) -> Encoder {
        match self.event.as_str() {
            "dvs" => Encoder::Dvs(DvsParams {
                c_log: self.dvs_threshold,
                path: match self.dvs_path.as_str() {
                    "linear" => MotionPath::Linear { dx: self.dvs_dx as f64, dy: self.dvs_dy as f64 },
                    "zero" => MotionPath::Zero,
                    _ => MotionPath::Triangle { amplitude: self.dvs_amplitude },
                },
            }),
            _ => Encoder::Ttfs,
        }
    }

    pub fn lif(&self) -> LifParams {
        LifParams {
            tau: self.lif_tau,
            v_threshold: self.lif_v_threshold,
            v_reset: self.lif_v_reset,
            surrogate_alpha: self.lif_surrogate_alpha,
            detach_reset: self.lif_detach_reset,
            smooth: false,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr.unwrap_or_else(|| base_lr_for_batch(self.batch)),
            warmup: self.warmup,
            momentum: self.momentum,
            t_steps: self.t_steps,
            seed: self.seed,
        }
    }

    pub fn distill(&self) -> DistillLoss {
        DistillLoss::parse(&self.loss).expect("validated at parse time")
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Epoch budget for the direct-code pretraining phase inside `transfer`
    /// and friends; falls back to the main epoch count.
    pub fn pretrain_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain_epochs.unwrap_or(self.epochs),
            ..self.train()
        }
    }

    /// Architecture for the given image shape; the encoder's channel
    /// expansion is already applied by the caller.
    pub fn arch(&self, input: (usize, usize, usize), classes: usize) -> Result<ArchitectureSpec> {
        match &self.arch_layers {
            Some(dsl) => ArchitectureSpec::parse_layers(dsl, input, classes),
            None => ArchitectureSpec::by_name(&self.arch_name, input, classes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = Config::parse("seed = 7\n", &[]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.t_steps, 4);
        assert_eq!(cfg.batch, 32);
        assert_eq!(cfg.event, "ttfs");
        assert_eq!(cfg.method, "tsf");
        // Peak lr defaults to the batch-scaled reference rate.
        assert!((cfg.train().lr - 0.0125).abs() < 1e-15);
        assert_eq!(cfg.sweep_alphas, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    }

    #[test]
    fn seed_is_required() {
        let err = Config::parse("T = 4\n", &[]).unwrap_err();
        match err {
            D2eError::Config { field, .. } => assert_eq!(field, "seed"),
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = Config::parse("seed=1\ntrain.lr_decay=0.1\n", &[]).unwrap_err();
        match err {
            D2eError::Config { field, message } => {
                assert_eq!(field, "train.lr_decay");
                assert!(message.contains("unknown"));
            }
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn comments_blanks_and_inline_comments() {
        let text = "# run config\n\nseed = 3   # rng\nT = 6\n";
        let cfg = Config::parse(text, &[]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.t_steps, 6);
    }

    #[test]
    fn set_overrides_file_values() {
        let sets = vec![
            ("T".to_string(), "8".to_string()),
            ("transfer.alpha".to_string(), "0.25".to_string()),
        ];
        let cfg = Config::parse("seed=1\nT=2\n", &sets).unwrap();
        assert_eq!(cfg.t_steps, 8);
        assert!((cfg.alpha - 0.25).abs() < 1e-15);
    }

    #[test]
    fn duplicate_file_key_errors() {
        assert!(Config::parse("seed=1\nseed=2\n", &[]).is_err());
    }

    #[test]
    fn bad_values_name_their_field() {
        for (text, field) in [
            ("seed=1\nT=zero\n", "T"),
            ("seed=1\nencoder.event=rate\n", "encoder.event"),
            ("seed=1\ntransfer.alpha=1.5\n", "transfer.alpha"),
            ("seed=1\ntransfer.loss=hinge\n", "transfer.loss"),
            ("seed=1\nlif.detach_reset=maybe\n", "lif.detach_reset"),
            ("seed=1\nsweep.alphas=0.1,oops\n", "sweep.alphas"),
        ] {
            match Config::parse(text, &[]).unwrap_err() {
                D2eError::Config { field: f, .. } => assert_eq!(f, field, "for {text}"),
                other => panic!("wrong error {other:?} for {text}"),
            }
        }
    }

    #[test]
    fn pretrain_epochs_fall_back_to_train_epochs() {
        let cfg = Config::parse("seed=1\ntrain.epochs=7\n", &[]).unwrap();
        assert_eq!(cfg.pretrain_train().epochs, 7);
        let cfg = Config::parse("seed=1\ntrain.epochs=7\npretrain.epochs=2\n", &[]).unwrap();
        assert_eq!(cfg.pretrain_train().epochs, 2);
        assert_eq!(cfg.train().epochs, 7);
    }

    #[test]
    fn sweep_alphas_parse() {
        let cfg = Config::parse("seed=1\nsweep.alphas=0,0.5,1\n", &[]).unwrap();
        assert_eq!(cfg.sweep_alphas, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn dvs_encoder_view() {
        let cfg =
            Config::parse("seed=1\nencoder.event=dvs\ndvs.path=linear\ndvs.dx=2\n", &[]).unwrap();
        match cfg.encoder() {
            Encoder::Dvs(p) => match p.path {
                MotionPath::Linear { dx, dy } => {
                    assert_eq!(dx, 2.0);
                    assert_eq!(dy, 0.0);
                }
                other => panic!("wrong path {other:?}"),
            },
            other => panic!("wrong encoder {other:?}"),
        }
        assert_eq!(cfg.lif().tau, 2.0);
    }

    #[test]
    fn missing_equals_is_an_error() {
        assert!(Config::parse("seed 1\n", &[]).is_err());
    }
}
