//! Trains the baseline (or, with `--stronger`, the larger) configuration on
//! the Shakespeare corpus and writes the loss log, checkpoints and a chart.
//!
//! ```text
//! cargo run --release --example train_shakespeare -- [--stronger] [--steps N] [--out DIR]
//! ```

use std::path::{Path, PathBuf};

use minigpt::cli::{cmd_plot, cmd_train};
use minigpt::dataset::find_corpus;
use minigpt::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize()?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let flag = |name: &str| args.iter().position(|a| a == name).and_then(|i| args.get(i + 1)).cloned();

    let mut cfg = if args.iter().any(|a| a == "--stronger") { RunConfig::stronger() } else { RunConfig::baseline() };
    let (data, source) = find_corpus(&root).ok_or("no corpus: run scripts/fetch_tinyshakespeare.sh")?;
    println!("using {source}: {}", data.display());
    cfg.data_path = data;
    cfg.out_dir = flag("--out").map(PathBuf::from).unwrap_or_else(|| root.join(&cfg.out_dir));
    if let Some(steps) = flag("--steps") {
        cfg.train.max_iters = steps.parse()?;
        cfg.train.eval_interval = cfg.train.eval_interval.min(cfg.train.max_iters);
    }

    let mut stdout = std::io::stdout();
    cmd_train(&cfg, &mut stdout)?;
    cmd_plot(&cfg.out_dir.join("loss_log.csv"), &cfg.out_dir.join("loss.svg"), &mut stdout)?;
    Ok(())
}
