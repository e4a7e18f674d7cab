//! Command-line front end: `train`, `sample`, `eval` and `plot`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or file
//! format error, 3 numerical divergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_corpus, Split, TokenStore};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::plot::render_svg;
use crate::rng::RandomState;
use crate::sampler::{generate, SampleConfig};
use crate::tokenizer::Vocabulary;
use crate::trainer::{
    estimate_loss, perplexity, read_loss_log, train, BestCheckpoint, CheckpointPolicy, LossLogWriter, LossRecord,
    TrainObserver, TrainOutcome,
};

#[derive(Debug, Parser)]
#[command(name = "minigpt", version, about = "Train and sample a character-level GPT")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a run config; writes the loss log and checkpoints to its out_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Corpus path, overriding the config's data_path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory, overriding the config's out_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Number of optimizer steps, overriding the config's max_iters.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Generate text from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text to continue; empty starts from a newline.
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, default_value_t = 800)]
        max_new_tokens: usize,
        #[arg(long, default_value_t = 0.8)]
        temperature: f64,
        /// Keep only the k most likely characters; 0 disables the filter.
        #[arg(long, default_value_t = 200)]
        top_k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Estimate the loss of a checkpoint on one split of a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long, default_value_t = 20)]
        eval_iters: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
    },
    /// Render a loss log as an SVG chart.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_)
        | Error::ConfigFile { .. }
        | Error::InvalidArgument(_)
        | Error::UnknownChar { .. }
        | Error::SplitTooSmall { .. } => 1,
        Error::Divergence { .. } | Error::NonFinite(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = write!(err, "{}", e.render());
            return 1;
        }
        Err(e) => {
            // --help and --version
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train { config, data, out_dir, max_iters } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(d) = data {
                cfg.data_path = d;
            }
            if let Some(o) = out_dir {
                cfg.out_dir = o;
            }
            if let Some(m) = max_iters {
                cfg.train.max_iters = m;
                cfg.train.eval_interval = cfg.train.eval_interval.min(m.max(1));
                cfg.validate()?;
            }
            cmd_train(&cfg, out).map(|_| ())
        }
        Command::Sample { checkpoint, prompt, max_new_tokens, temperature, top_k, seed } => {
            let top_k = (top_k > 0).then_some(top_k);
            let cfg = SampleConfig { max_new_tokens, temperature, top_k, seed };
            cmd_sample(&checkpoint, &prompt, &cfg, out)
        }
        Command::Eval { checkpoint, data, split, eval_iters, seed, batch_size, train_fraction } => {
            let opts = EvalOptions { split, eval_iters, seed, batch_size, train_fraction };
            cmd_eval(&checkpoint, &data, &opts, out).map(|_| ())
        }
        Command::Plot { log, out: svg } => cmd_plot(&log, &svg, out),
    }
}

/// `826433` → `826,433`.
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

struct CliObserver<'a> {
    out: &'a mut dyn Write,
    log: LossLogWriter,
    vocab: &'a Vocabulary,
    best_path: PathBuf,
}

impl TrainObserver for CliObserver<'_> {
    fn on_eval(&mut self, r: &LossRecord) -> Result<()> {
        self.log.append(r)?;
        writeln!(self.out, "step {}: train {:.4}, val {:.4}, lr {:.3e}", r.step, r.train_loss, r.val_loss, r.lr)
            .map_err(io_out)
    }

    fn on_best(&mut self, best: &BestCheckpoint, config: &ModelConfig) -> Result<()> {
        let ck = Checkpoint {
            config: config.clone(),
            vocab: self.vocab.clone(),
            step: best.step,
            val_loss: Some(best.val_loss),
            params: best.params.clone(),
        };
        ck.save(&self.best_path)
    }
}

/// Trains per `cfg`, writing `loss_log.csv`, `final.mgpt` and (best-validation
/// policy) `best.mgpt` into `cfg.out_dir`.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let (vocab, ids) = load_corpus(&cfg.data_path)?;
    let model_cfg = cfg.model_for(vocab.size())?;
    let store = TokenStore::split(&ids, cfg.train_fraction, model_cfg.block_size)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    writeln!(
        out,
        "corpus: {} ({} characters, vocabulary {}; {} train / {} val tokens)",
        cfg.data_path.display(),
        ids.len(),
        vocab.size(),
        store.tokens(Split::Train).len(),
        store.tokens(Split::Val).len()
    )
    .map_err(io_out)?;
    writeln!(out, "parameters: {}", group_thousands(model_cfg.param_count())).map_err(io_out)?;

    let log = LossLogWriter::create(&cfg.out_dir.join("loss_log.csv"))?;
    let mut observer = CliObserver { out: &mut *out, log, vocab: &vocab, best_path: cfg.out_dir.join("best.mgpt") };
    let outcome = train(&model_cfg, &cfg.train, &store, &mut observer)?;

    let last = *outcome.log.last().expect("the final step is always evaluated");
    Checkpoint::new(&outcome.model, &vocab, last.step, Some(last.val_loss)).save(&cfg.out_dir.join("final.mgpt"))?;
    let elapsed = started.elapsed().as_secs_f64();
    writeln!(
        out,
        "done: {} steps in {elapsed:.1} s, {} parameters; final train {:.4}, val {:.4} (perplexity {:.2})",
        last.step,
        group_thousands(outcome.model.param_count()),
        last.train_loss,
        last.val_loss,
        perplexity(last.val_loss)
    )
    .map_err(io_out)?;
    if cfg.train.checkpoint_policy == CheckpointPolicy::BestVal {
        if let Some(b) = &outcome.best {
            writeln!(out, "best: val {:.4} (perplexity {:.2}) at step {}", b.val_loss, perplexity(b.val_loss), b.step)
                .map_err(io_out)?;
        }
    }
    writeln!(out, "wrote {}", cfg.out_dir.display()).map_err(io_out)?;
    Ok(outcome)
}

pub fn cmd_sample(checkpoint: &Path, prompt: &str, cfg: &SampleConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let text = generate(&ck.model(), &ck.vocab, prompt, cfg)?;
    writeln!(out, "{text}").map_err(io_out)
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub split: Split,
    pub eval_iters: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub train_fraction: f64,
}

/// `loss <x> perplexity <exp(x)>`, four decimals each.
pub fn format_eval_line(loss: f64) -> String {
    format!("loss {loss:.4} perplexity {:.4}", perplexity(loss))
}

/// Encodes the corpus with the checkpoint's vocabulary and reports the mean
/// loss over `eval_iters` batches of one split.
pub fn cmd_eval(checkpoint: &Path, data: &Path, opts: &EvalOptions, out: &mut dyn Write) -> Result<f64> {
    let ck = Checkpoint::load(checkpoint)?;
    let text = std::fs::read_to_string(data).map_err(|e| Error::io(data, e))?;
    let ids = ck.vocab.encode(&text)?;
    let store = TokenStore::split(&ids, opts.train_fraction, ck.config.block_size)?;
    let model = ck.into_model();
    let mut rng = RandomState::new(opts.seed);
    let loss = estimate_loss(&model, &store, opts.split, opts.eval_iters, opts.batch_size, &mut rng)?;
    writeln!(out, "{}", format_eval_line(loss)).map_err(io_out)?;
    Ok(loss)
}

pub fn cmd_plot(log: &Path, svg_path: &Path, out: &mut dyn Write) -> Result<()> {
    let records = read_loss_log(log)?;
    let svg = render_svg(&records)?;
    std::fs::write(svg_path, svg).map_err(|e| Error::io(svg_path, e))?;
    writeln!(out, "wrote {} ({} points)", svg_path.display(), records.len()).map_err(io_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands() {
        assert_eq!(group_thousands(826_433), "826,433");
        assert_eq!(group_thousands(10_770_881), "10,770,881");
        assert_eq!(group_thousands(18), "18");
        assert_eq!(group_thousands(100), "100");
        assert_eq!(group_thousands(1000), "1,000");
    }

    #[test]
    fn eval_line() {
        // exp(1.478) = 4.384169 (independently evaluated)
        assert_eq!(format_eval_line(1.4780), "loss 1.4780 perplexity 4.3842");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 1);
        assert_eq!(exit_code(&Error::Divergence { step: 3, loss: f64::NAN }), 3);
        assert_eq!(exit_code(&Error::LossLog { line: 2, message: "x".into() }), 2);
        let io = Error::io("x", std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(exit_code(&io), 2);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(main_with_args(["minigpt", "fly"], &mut out, &mut err), 1);
        assert_eq!(main_with_args(["minigpt", "sample"], &mut out, &mut err), 1);
        assert_eq!(main_with_args(["minigpt", "--help"], &mut out, &mut err), 0);
    }
}
