//! The training loop, periodic loss estimation, best-validation selection and
//! the CSV loss log.
//!
//! One [`RandomState`] seeded from the run config drives everything, consumed
//! in this order: parameter init, then per step (evaluation draws for the
//! train and val estimates on evaluation steps, the training batch, dropout
//! masks).

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Split, TokenStore};
use crate::error::{Error, Result};
use crate::model::{Gpt, GptParams, ModelConfig};
use crate::optim::{clip_grad_global_norm, AdamW, AdamWConfig, LrSchedule, ScheduleConfig};
use crate::rng::RandomState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointPolicy {
    Final,
    BestVal,
}

impl CheckpointPolicy {
    pub fn name(self) -> &'static str {
        match self {
            CheckpointPolicy::Final => "final",
            CheckpointPolicy::BestVal => "best_val",
        }
    }
}

impl std::str::FromStr for CheckpointPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(CheckpointPolicy::Final),
            "best_val" => Ok(CheckpointPolicy::BestVal),
            other => {
                Err(Error::InvalidConfig(format!("unknown checkpoint policy {other:?} (expected final or best_val)")))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iters: usize,
    pub eval_interval: usize,
    pub eval_iters: usize,
    pub schedule: LrSchedule,
    pub optimizer: AdamWConfig,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub checkpoint_policy: CheckpointPolicy,
}

impl TrainConfig {
    /// B = 32, 3000 steps at a fixed 3e-4, keep the final model.
    pub fn baseline() -> Self {
        TrainConfig {
            batch_size: 32,
            max_iters: 3000,
            eval_interval: 250,
            eval_iters: 20,
            schedule: LrSchedule::Fixed(3e-4),
            optimizer: AdamWConfig::baseline(),
            clip_norm: None,
            seed: 42,
            checkpoint_policy: CheckpointPolicy::Final,
        }
    }

    /// B = 64, 5000 steps of warmup + cosine, clipping at 1, keep the best model.
    pub fn stronger() -> Self {
        TrainConfig {
            batch_size: 64,
            max_iters: 5000,
            eval_interval: 250,
            eval_iters: 20,
            schedule: LrSchedule::WarmupCosine(ScheduleConfig {
                max_lr: 1e-3,
                min_lr: 1e-4,
                warmup_steps: 100,
                decay_steps: 5000,
            }),
            optimizer: AdamWConfig::stronger(),
            clip_norm: Some(1.0),
            seed: 42,
            checkpoint_policy: CheckpointPolicy::BestVal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 || self.eval_iters == 0 || self.eval_interval == 0 {
            return bad("batch_size, eval_interval and eval_iters must be >= 1".into());
        }
        if self.eval_interval > self.max_iters {
            return bad(format!("eval_interval {} exceeds max_iters {}", self.eval_interval, self.max_iters));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        self.schedule.validate()?;
        self.optimizer.validate()
    }
}

/// One evaluation point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

/// Best-so-far validation point. Only strict improvements replace it, so ties
/// keep the earliest step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BestSelector {
    best: Option<(usize, f64)>,
}

impl BestSelector {
    /// Returns whether `(step, val_loss)` became the new best.
    pub fn offer(&mut self, step: usize, val_loss: f64) -> bool {
        let better = self.best.is_none_or(|(_, v)| val_loss < v);
        if better {
            self.best = Some((step, val_loss));
        }
        better
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct BestCheckpoint {
    pub step: usize,
    pub val_loss: f64,
    pub params: GptParams<f32>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Gpt<f32>,
    /// Present under the best-validation policy.
    pub best: Option<BestCheckpoint>,
    pub log: Vec<LossRecord>,
    /// Global gradient norm per step before and after clipping; equal when
    /// clipping is off.
    pub grad_norms: Vec<(f64, f64)>,
    /// Loss of each optimizer step's training minibatch.
    pub batch_losses: Vec<f64>,
}

/// Hooks invoked as training progresses; an error aborts the run.
pub trait TrainObserver {
    fn on_eval(&mut self, _record: &LossRecord) -> Result<()> {
        Ok(())
    }

    /// Called right after a new best snapshot is taken.
    fn on_best(&mut self, _best: &BestCheckpoint, _config: &ModelConfig) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Mean loss over `eval_iters` freshly sampled batches, without dropout or
/// gradient recording.
pub fn estimate_loss(
    model: &Gpt<f32>,
    store: &TokenStore,
    split: Split,
    eval_iters: usize,
    batch_size: usize,
    rng: &mut RandomState,
) -> Result<f64> {
    if eval_iters == 0 {
        return Err(Error::InvalidArgument("eval_iters must be at least 1".into()));
    }
    let mut total = 0.0;
    for _ in 0..eval_iters {
        let batch = store.sample_batch(split, batch_size, rng)?;
        let out = model.forward(&batch.x, Some(&batch.y), None)?;
        total += out.loss.expect("targets given");
    }
    Ok(total / eval_iters as f64)
}

pub fn perplexity(loss: f64) -> f64 {
    loss.exp()
}

/// Trains a freshly initialized model. Evaluates at step 0, every
/// `eval_interval` steps and at `max_iters`.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    store: &TokenStore,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if store.block_size() != model_cfg.block_size {
        return Err(Error::InvalidConfig(format!(
            "data block size {} differs from model block size {}",
            store.block_size(),
            model_cfg.block_size
        )));
    }
    let mut rng = RandomState::new(cfg.seed);
    let mut model = Gpt::<f32>::new(model_cfg.clone(), &mut rng)?;
    let mut opt = AdamW::new(&model.params.tensors(), cfg.optimizer)?;
    let mut selector = BestSelector::default();
    let mut best = None;
    let mut log = Vec::new();
    let mut grad_norms = Vec::with_capacity(cfg.max_iters);
    let mut batch_losses = Vec::with_capacity(cfg.max_iters);
    let start = Instant::now();

    for step in 0..=cfg.max_iters {
        if step % cfg.eval_interval == 0 || step == cfg.max_iters {
            let train_loss = estimate_loss(&model, store, Split::Train, cfg.eval_iters, cfg.batch_size, &mut rng)?;
            let val_loss = estimate_loss(&model, store, Split::Val, cfg.eval_iters, cfg.batch_size, &mut rng)?;
            if !(train_loss.is_finite() && val_loss.is_finite()) {
                let loss = if train_loss.is_finite() { val_loss } else { train_loss };
                return Err(Error::Divergence { step, loss });
            }
            let record = LossRecord {
                step,
                train_loss,
                val_loss,
                lr: cfg.schedule.lr_at(step),
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            log.push(record);
            observer.on_eval(&record)?;
            if cfg.checkpoint_policy == CheckpointPolicy::BestVal && selector.offer(step, val_loss) {
                let snapshot = BestCheckpoint { step, val_loss, params: model.params.clone() };
                observer.on_best(&snapshot, model_cfg)?;
                best = Some(snapshot);
            }
        }
        if step == cfg.max_iters {
            break;
        }

        let batch = store.sample_batch(Split::Train, cfg.batch_size, &mut rng)?;
        let (loss, mut grads) = model.loss_and_grads(&batch.x, &batch.y, Some(&mut rng))?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let diverged = |_| Error::Divergence { step, loss };
        let norms = match cfg.clip_norm {
            Some(c) => {
                let pre = clip_grad_global_norm(&mut grads, c).map_err(diverged)?;
                (pre, global_norm(&grads))
            }
            None => {
                let n = global_norm(&grads);
                (n, n)
            }
        };
        grad_norms.push(norms);
        batch_losses.push(loss);
        let lr = cfg.schedule.lr_at(step);
        opt.step(&mut model.params.tensors_mut(), &grads, lr).map_err(diverged)?;
    }
    Ok(TrainOutcome { model, best, log, grad_norms, batch_losses })
}

fn global_norm(grads: &[Vec<f32>]) -> f64 {
    grads.iter().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt()
}

pub const LOSS_LOG_HEADER: [&str; 5] = ["step", "train_loss", "val_loss", "lr", "wall_time_s"];

/// `%g`-style rendering with 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (5 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Appends loss rows to a CSV file, flushing after each so a partial log
/// survives an aborted run.
pub struct LossLogWriter {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl LossLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = LossLogWriter { writer: csv::Writer::from_writer(file), path: path.to_path_buf() };
        w.write_row(LOSS_LOG_HEADER.map(String::from))?;
        Ok(w)
    }

    pub fn append(&mut self, r: &LossRecord) -> Result<()> {
        self.write_row([
            r.step.to_string(),
            format_sig6(r.train_loss),
            format_sig6(r.val_loss),
            format_sig6(r.lr),
            format_sig6(r.wall_time_s),
        ])
    }

    fn write_row(&mut self, row: [String; 5]) -> Result<()> {
        let path = &self.path;
        self.writer.write_record(&row).map_err(|e| Error::io(path, e.into()))?;
        self.writer.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = LossLogWriter::create(path)?;
    records.iter().try_for_each(|r| w.append(r))
}

/// Renders a loss log to any writer (the same bytes `write_loss_log` produces).
pub fn render_loss_log(records: &[LossRecord], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{}", LOSS_LOG_HEADER.join(","))?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            format_sig6(r.train_loss),
            format_sig6(r.val_loss),
            format_sig6(r.lr),
            format_sig6(r.wall_time_s)
        )?;
    }
    Ok(())
}

/// Parses a loss log; errors carry the 1-based line number.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_loss_log(file)
}

pub fn parse_loss_log<R: std::io::Read>(input: R) -> Result<Vec<LossRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::LossLog {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(i + 1, |p| p.line() as usize);
        let fail = |message: String| Error::LossLog { line, message };
        if i == 0 {
            if row.iter().ne(LOSS_LOG_HEADER) {
                return Err(fail(format!("expected header {}", LOSS_LOG_HEADER.join(","))));
            }
            continue;
        }
        if row.len() != 5 {
            return Err(fail(format!("expected 5 fields, found {}", row.len())));
        }
        let num = |k: usize| -> Result<f64> {
            row[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| fail(format!("{} is not a number: {:?}", LOSS_LOG_HEADER[k], &row[k])))
        };
        let step =
            row[0].trim().parse::<usize>().map_err(|_| fail(format!("step is not an integer: {:?}", &row[0])))?;
        if out.last().is_some_and(|r: &LossRecord| r.step >= step) {
            return Err(fail(format!("step {step} does not increase")));
        }
        out.push(LossRecord { step, train_loss: num(1)?, val_loss: num(2)?, lr: num(3)?, wall_time_s: num(4)? });
    }
    if out.is_empty() && reader.position().line() <= 1 {
        return Err(Error::LossLog { line: 1, message: "missing header".into() });
    }
    Ok(out)
}
