//! Generates text from a checkpoint. Defaults to the baseline run's final
//! checkpoint; train one first with the `train_shakespeare` example.
//!
//! ```text
//! cargo run --release --example sample -- [CHECKPOINT] [PROMPT]
//! ```

use std::path::{Path, PathBuf};

use minigpt::sampler::generate;
use minigpt::{Checkpoint, SampleConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize()?;
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| root.join("runs/baseline/final.mgpt"));
    let prompt = args.next().unwrap_or_else(|| "ROMEO:".into());

    let ck = Checkpoint::load(&path)?;
    println!("{}: step {}, {} parameters", path.display(), ck.step, ck.config.param_count());
    let model = ck.model();
    for (temperature, top_k) in [(0.8, Some(200)), (0.5, Some(10)), (1.2, None)] {
        let cfg = SampleConfig { max_new_tokens: 200, temperature, top_k, seed: 42 };
        println!("--- temperature {temperature}, top-k {top_k:?}");
        println!("{}", generate(&model, &ck.vocab, &prompt, &cfg)?);
    }
    Ok(())
}
