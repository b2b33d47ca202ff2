//! Run configuration: `key=value` lines with `#` comments, overridable from
//! the command line.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use pip_core::model::{Mode, ModelConfig};
use pip_core::trainer::{EvalConfig, EvalEvery, PretrainConfig, Scheduler, TrainConfig};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,

    pub l_enc: usize,
    pub l_dec: usize,
    pub dim_h: usize,
    pub n_heads: usize,
    pub dim_ff: usize,
    pub max_len: usize,
    pub prefix_len: usize,

    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks the mode's default.
    pub lr: Option<f64>,
    /// Learning rate for prefix, pip-direct and pip-indirect; wins over `lr`.
    pub prefix_lr: Option<f64>,
    pub clip_norm: f64,
    pub pel_weight: f64,
    /// `None` picks the mode's default.
    pub scheduler: Option<Scheduler>,
    pub reparameterize_prefix: bool,
    pub reparam_dim: Option<usize>,
    pub eval_every: EvalEvery,
    pub verify_direct: bool,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,

    pub beam_width: usize,
    pub max_decode_len: usize,
    pub template_height: usize,

    /// Zero disables backbone pretraining.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch_size: usize,
    pub pretrain_mask: f64,
    pub pretrain_scramble: f64,
    pub pretrain_window: f64,
    /// Also denoise the training split's linearized parses.
    pub pretrain_parses: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::toy(0);
        let t = TrainConfig::for_mode(Mode::Prefix);
        let e = EvalConfig::default();
        let p = PretrainConfig::default();
        RunConfig {
            seed: 0,
            n_train: 3000,
            n_dev: 640,
            n_test: 640,
            l_enc: m.l_enc,
            l_dec: m.l_dec,
            dim_h: m.dim_h,
            n_heads: m.n_heads,
            dim_ff: m.dim_ff,
            max_len: m.max_len,
            prefix_len: m.prefix_len,
            mode: t.mode,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: None,
            prefix_lr: None,
            clip_norm: t.clip_norm,
            pel_weight: t.pel_weight,
            scheduler: None,
            reparameterize_prefix: t.reparameterize_prefix,
            reparam_dim: t.reparam_dim,
            eval_every: t.eval_every,
            verify_direct: t.verify_direct,
            weight_decay: t.optimizer.weight_decay,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            adam_eps: t.optimizer.eps,
            beam_width: e.beam_width,
            max_decode_len: e.max_decode_len,
            template_height: e.template_height,
            pretrain_epochs: p.epochs,
            pretrain_lr: p.lr,
            pretrain_batch_size: p.batch_size,
            pretrain_mask: p.mask_prob,
            pretrain_scramble: p.scramble_prob,
            pretrain_window: p.shuffle_window,
            pretrain_parses: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| LabError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "default" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_eval_every(value: &str) -> Result<EvalEvery> {
    match value {
        "never" => Ok(EvalEvery::Never),
        "epoch" => Ok(EvalEvery::Epoch),
        v => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(EvalEvery::Steps(n)),
            _ => Err(LabError::Config(format!(
                "invalid value {v:?} for eval_every (never, epoch or a positive step count)"
            ))),
        },
    }
}

fn show_optional<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("default".into(), |x| x.to_string())
}

impl RunConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_dev", self.n_dev.to_string()),
            ("n_test", self.n_test.to_string()),
            ("l_enc", self.l_enc.to_string()),
            ("l_dec", self.l_dec.to_string()),
            ("dim_h", self.dim_h.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("dim_ff", self.dim_ff.to_string()),
            ("max_len", self.max_len.to_string()),
            ("prefix_len", self.prefix_len.to_string()),
            ("mode", self.mode.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", show_optional(&self.lr)),
            ("prefix_lr", show_optional(&self.prefix_lr)),
            ("clip_norm", self.clip_norm.to_string()),
            ("pel_weight", self.pel_weight.to_string()),
            ("scheduler", show_optional(&self.scheduler.map(Scheduler::name))),
            ("reparameterize_prefix", self.reparameterize_prefix.to_string()),
            ("reparam_dim", show_optional(&self.reparam_dim)),
            (
                "eval_every",
                match self.eval_every {
                    EvalEvery::Never => "never".into(),
                    EvalEvery::Epoch => "epoch".into(),
                    EvalEvery::Steps(n) => n.to_string(),
                },
            ),
            ("verify_direct", self.verify_direct.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("beam_width", self.beam_width.to_string()),
            ("max_decode_len", self.max_decode_len.to_string()),
            ("template_height", self.template_height.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("pretrain_batch_size", self.pretrain_batch_size.to_string()),
            ("pretrain_mask", self.pretrain_mask.to_string()),
            ("pretrain_scramble", self.pretrain_scramble.to_string()),
            ("pretrain_window", self.pretrain_window.to_string()),
            ("pretrain_parses", self.pretrain_parses.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "n_train" => self.n_train = parse(key, value)?,
            "n_dev" => self.n_dev = parse(key, value)?,
            "n_test" => self.n_test = parse(key, value)?,
            "l_enc" => self.l_enc = parse(key, value)?,
            "l_dec" => self.l_dec = parse(key, value)?,
            "dim_h" => self.dim_h = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "dim_ff" => self.dim_ff = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "prefix_len" => self.prefix_len = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse_optional(key, value)?,
            "prefix_lr" => self.prefix_lr = parse_optional(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "pel_weight" => self.pel_weight = parse(key, value)?,
            "scheduler" => self.scheduler = parse_optional(key, value)?,
            "reparameterize_prefix" => self.reparameterize_prefix = parse(key, value)?,
            "reparam_dim" => self.reparam_dim = parse_optional(key, value)?,
            "eval_every" => self.eval_every = parse_eval_every(value)?,
            "verify_direct" => self.verify_direct = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "beam_width" => self.beam_width = parse(key, value)?,
            "max_decode_len" => self.max_decode_len = parse(key, value)?,
            "template_height" => self.template_height = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, value)?,
            "pretrain_batch_size" => self.pretrain_batch_size = parse(key, value)?,
            "pretrain_mask" => self.pretrain_mask = parse(key, value)?,
            "pretrain_scramble" => self.pretrain_scramble = parse(key, value)?,
            "pretrain_window" => self.pretrain_window = parse(key, value)?,
            "pretrain_parses" => self.pretrain_parses = parse(key, value)?,
            _ => return Err(LabError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies config text on top of `self`; `source` labels errors.
    pub fn merge_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line)
                .map_err(|e| LabError::Config(format!("{source}:{}: {}", i + 1, strip(e))))?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then overrides (which win).
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
            cfg.merge_text(&text, &path.display().to_string())?;
        }
        for o in overrides {
            cfg.assign(o)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let c = ModelConfig {
            l_enc: self.l_enc,
            l_dec: self.l_dec,
            dim_h: self.dim_h,
            n_heads: self.n_heads,
            dim_ff: self.dim_ff,
            vocab_size,
            max_len: self.max_len,
            prefix_len: self.prefix_len,
        };
        c.validate().map_err(|e| LabError::Config(strip_core(e)))?;
        Ok(c)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            beam_width: self.beam_width,
            max_decode_len: self.max_decode_len,
            template_height: self.template_height,
        }
    }

    pub fn train_config(&self, mode: Mode, seed: u64) -> Result<TrainConfig> {
        let mut t = TrainConfig::for_mode(mode);
        t.seed = seed;
        t.epochs = self.epochs;
        t.batch_size = self.batch_size;
        let lr = if mode.uses_prefix() {
            self.prefix_lr.or(self.lr)
        } else {
            self.lr
        };
        if let Some(lr) = lr {
            t.lr = lr;
        }
        t.clip_norm = self.clip_norm;
        t.pel_weight = self.pel_weight;
        if let Some(s) = self.scheduler {
            t.scheduler = s;
        }
        t.reparameterize_prefix = self.reparameterize_prefix && mode.uses_prefix();
        t.reparam_dim = self.reparam_dim;
        t.eval_every = self.eval_every;
        t.verify_direct = self.verify_direct;
        t.optimizer.weight_decay = self.weight_decay;
        t.optimizer.beta1 = self.beta1;
        t.optimizer.beta2 = self.beta2;
        t.optimizer.eps = self.adam_eps;
        t.eval = self.eval_config();
        t.validate().map_err(|e| LabError::Config(strip_core(e)))?;
        Ok(t)
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        let p = PretrainConfig {
            epochs: self.pretrain_epochs.max(1),
            lr: self.pretrain_lr,
            batch_size: self.pretrain_batch_size,
            mask_prob: self.pretrain_mask,
            shuffle_window: self.pretrain_window,
            scramble_prob: self.pretrain_scramble,
        };
        p.validate().map_err(|e| LabError::Config(strip_core(e)))?;
        Ok(p)
    }
}

fn strip(e: LabError) -> String {
    match e {
        LabError::Config(m) => m,
        other => other.to_string(),
    }
}

fn strip_core(e: pip_core::Error) -> String {
    match e {
        pip_core::Error::Contract(m) => m,
        other => other.to_string(),
    }
}
