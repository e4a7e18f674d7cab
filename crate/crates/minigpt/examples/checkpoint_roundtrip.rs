//! Saves a freshly initialized model, reloads it and checks that the logits
//! and the re-encoded bytes are unchanged. Also shows how a config mismatch
//! is reported.
//!
//! ```text
//! cargo run --example checkpoint_roundtrip
//! ```

use minigpt::{Checkpoint, Gpt, ModelConfig, RandomState, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::build("ROMEO:\nO, she doth teach the torches to burn bright!")?;
    let cfg = ModelConfig { block_size: 16, n_layer: 2, n_head: 2, n_embd: 32, ..ModelConfig::baseline(vocab.size()) };
    let model = Gpt::<f32>::new(cfg.clone(), &mut RandomState::new(1))?;

    let path = std::env::temp_dir().join("minigpt_roundtrip.mgpt");
    let ck = Checkpoint::new(&model, &vocab, 0, None);
    ck.save(&path)?;
    let bytes = std::fs::read(&path)?;
    println!("wrote {} ({} bytes, {} parameters)", path.display(), bytes.len(), cfg.param_count());

    let loaded = Checkpoint::load(&path)?;
    assert_eq!(loaded.to_bytes(), bytes);
    let ctx = vocab.encode("ROMEO:")?;
    assert_eq!(loaded.model().logits_last(&ctx)?, model.logits_last(&ctx)?);
    println!("reloaded: identical bytes and logits");

    let other = ModelConfig { n_layer: 3, ..cfg };
    match Checkpoint::load_expecting(&path, &other) {
        Err(e) => println!("loading as a 3-layer model fails: {e}"),
        Ok(_) => println!("unexpected: mismatched config accepted"),
    }
    Ok(())
}
