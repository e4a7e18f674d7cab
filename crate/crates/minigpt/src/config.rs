//! Run configuration files: one `key = value` per line, `#` starts a comment.
//!
//! Every model, optimization, schedule and sampling knob has a key; keys that
//! are absent take the baseline values. Unknown or repeated keys are errors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::{AdamWConfig, LrSchedule, ScheduleConfig};
use crate::sampler::SampleConfig;
use crate::trainer::TrainConfig;

pub const KEYS: &[&str] = &[
    "data_path",
    "out_dir",
    "train_fraction",
    "vocab_size",
    "block_size",
    "n_layer",
    "n_head",
    "n_embd",
    "dropout",
    "tie_weights",
    "batch_size",
    "max_iters",
    "eval_interval",
    "eval_iters",
    "seed",
    "checkpoint_policy",
    "lr_schedule",
    "lr",
    "max_lr",
    "min_lr",
    "warmup_steps",
    "decay_steps",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "param_grouping",
    "clip_norm",
    "max_new_tokens",
    "temperature",
    "top_k",
    "sample_seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_path: PathBuf,
    pub out_dir: PathBuf,
    pub train_fraction: f64,
    /// Architecture; `vocab_size` is taken from the corpus unless pinned.
    pub model: ModelConfig,
    pub vocab_size: Option<usize>,
    pub train: TrainConfig,
    pub sample: SampleConfig,
}

impl RunConfig {
    pub fn baseline() -> Self {
        RunConfig {
            data_path: PathBuf::from("data/input.txt"),
            out_dir: PathBuf::from("runs/baseline"),
            train_fraction: 0.9,
            model: ModelConfig::baseline(0),
            vocab_size: None,
            train: TrainConfig::baseline(),
            sample: SampleConfig::default(),
        }
    }

    pub fn stronger() -> Self {
        RunConfig {
            out_dir: PathBuf::from("runs/stronger"),
            model: ModelConfig::stronger(0),
            train: TrainConfig::stronger(),
            ..RunConfig::baseline()
        }
    }

    /// Architecture for a corpus with `vocab_size` symbols.
    pub fn model_for(&self, vocab_size: usize) -> Result<ModelConfig> {
        if let Some(pinned) = self.vocab_size {
            if pinned != vocab_size {
                return Err(Error::InvalidConfig(format!(
                    "config pins vocab_size = {pinned} but the corpus has {vocab_size} symbols"
                )));
            }
        }
        let cfg = ModelConfig { vocab_size, ..self.model.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::ConfigFile { path: origin.to_path_buf(), line, message };
        let mut entries: HashMap<&str, (usize, &str)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) =
                content.split_once('=').ok_or_else(|| err(line, format!("expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(line, format!("unknown key {key:?}")));
            }
            if value.is_empty() {
                return Err(err(line, format!("missing value for {key}")));
            }
            if let Some((first, _)) = entries.insert(key, (line, value)) {
                return Err(err(line, format!("{key} already set on line {first}")));
            }
        }

        let mut f = Fields { entries, err: &err };
        let mut cfg = RunConfig::baseline();
        let base_train = TrainConfig::baseline();

        f.set("data_path", &mut cfg.data_path)?;
        f.set("out_dir", &mut cfg.out_dir)?;
        f.set("train_fraction", &mut cfg.train_fraction)?;
        cfg.vocab_size = f.get("vocab_size")?;
        let m = &mut cfg.model;
        f.set("block_size", &mut m.block_size)?;
        f.set("n_layer", &mut m.n_layer)?;
        f.set("n_head", &mut m.n_head)?;
        f.set("n_embd", &mut m.n_embd)?;
        f.set("dropout", &mut m.dropout)?;
        f.set("tie_weights", &mut m.tie_weights)?;

        let t = &mut cfg.train;
        f.set("batch_size", &mut t.batch_size)?;
        f.set("max_iters", &mut t.max_iters)?;
        f.set("eval_interval", &mut t.eval_interval)?;
        f.set("eval_iters", &mut t.eval_iters)?;
        f.set("seed", &mut t.seed)?;
        f.set("checkpoint_policy", &mut t.checkpoint_policy)?;
        t.clip_norm = f.optional("clip_norm", base_train.clip_norm)?;

        let kind = f.get::<String>("lr_schedule")?.unwrap_or_else(|| "fixed".into());
        t.schedule = match kind.as_str() {
            "fixed" => {
                f.reject_unless("fixed", &["max_lr", "min_lr", "warmup_steps", "decay_steps"])?;
                let LrSchedule::Fixed(default) = base_train.schedule else { unreachable!("baseline is fixed") };
                LrSchedule::Fixed(f.get("lr")?.unwrap_or(default))
            }
            "warmup_cosine" => {
                f.reject_unless("warmup_cosine", &["lr"])?;
                LrSchedule::WarmupCosine(ScheduleConfig {
                    max_lr: f.require("max_lr")?,
                    min_lr: f.require("min_lr")?,
                    warmup_steps: f.require("warmup_steps")?,
                    decay_steps: f.require("decay_steps")?,
                })
            }
            other => {
                let line = f.line("lr_schedule");
                return Err(err(line, format!("unknown lr_schedule {other:?} (expected fixed or warmup_cosine)")));
            }
        };

        let o: &mut AdamWConfig = &mut t.optimizer;
        f.set("beta1", &mut o.beta1)?;
        f.set("beta2", &mut o.beta2)?;
        f.set("eps", &mut o.eps)?;
        f.set("weight_decay", &mut o.weight_decay)?;
        f.set("param_grouping", &mut o.grouped)?;

        let s = &mut cfg.sample;
        f.set("max_new_tokens", &mut s.max_new_tokens)?;
        f.set("temperature", &mut s.temperature)?;
        s.top_k = f.optional("top_k", s.top_k)?;
        f.set("sample_seed", &mut s.seed)?;

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("train_fraction must be in (0, 1), got {}", self.train_fraction)));
        }
        self.model_for(self.vocab_size.unwrap_or(1))?;
        self.train.validate()?;
        self.sample.validate()
    }
}

struct Fields<'a, E> {
    entries: HashMap<&'a str, (usize, &'a str)>,
    err: &'a E,
}

impl<'a, E: Fn(usize, String) -> Error> Fields<'a, E> {
    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.0)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(&(line, value)) => {
                value.parse().map(Some).map_err(|_| (self.err)(line, format!("invalid value {value:?} for {key}")))
            }
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let line = self.line("lr_schedule");
        self.get(key)?.ok_or_else(|| (self.err)(line, format!("{key} is required by this lr_schedule")))
    }

    /// `none` disables the setting.
    fn optional<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<Option<T>> {
        match self.entries.get(key) {
            Some(&(_, "none")) => Ok(None),
            Some(_) => self.get(key),
            None => Ok(default),
        }
    }

    fn reject_unless(&self, kind: &str, keys: &[&str]) -> Result<()> {
        for k in keys {
            if let Some(&(line, _)) = self.entries.get(k) {
                return Err((self.err)(line, format!("{k} does not apply to lr_schedule = {kind}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("test.cfg"))
    }

    #[test]
    fn empty_file_is_baseline() {
        assert_eq!(parse("# nothing\n\n").unwrap(), RunConfig::baseline());
    }

    #[test]
    fn unknown_key_names_its_line() {
        match parse("n_layer = 2\nblocksize = 64\n") {
            Err(Error::ConfigFile { line: 2, message, .. }) => assert!(message.contains("blocksize")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse("n_layer 2"), Err(Error::ConfigFile { line: 1, .. })));
        assert!(matches!(parse("n_layer = two"), Err(Error::ConfigFile { line: 1, .. })));
        assert!(matches!(parse("n_layer = 2\nn_layer = 3"), Err(Error::ConfigFile { line: 2, .. })));
        assert!(matches!(parse("dropout ="), Err(Error::ConfigFile { line: 1, .. })));
        assert!(matches!(parse("lr_schedule = step"), Err(Error::ConfigFile { line: 1, .. })));
        assert!(matches!(parse("max_lr = 1e-3"), Err(Error::ConfigFile { line: 1, .. })));
        assert!(parse("lr_schedule = warmup_cosine\nmax_lr = 1e-3").is_err());
        assert!(parse("n_head = 3").is_err());
    }

    #[test]
    fn optional_values() {
        let c = parse("clip_norm = 0.5\ntop_k = none  # keep everything").unwrap();
        assert_eq!(c.train.clip_norm, Some(0.5));
        assert_eq!(c.sample.top_k, None);
        let c = parse("clip_norm = none").unwrap();
        assert_eq!(c.train.clip_norm, None);
    }

    #[test]
    fn pinned_vocab_must_match() {
        let c = parse("vocab_size = 65").unwrap();
        assert_eq!(c.model_for(65).unwrap().param_count(), 826_433);
        assert!(c.model_for(63).is_err());
    }
}
