//! Trains a tiny model to memorize a repeating 11-symbol sequence, which
//! exercises batching, backpropagation, AdamW and evaluation in under a second.
//!
//! ```text
//! cargo run --release --example train_tiny
//! ```

use minigpt::trainer::train;
use minigpt::{AdamWConfig, CheckpointPolicy, LrSchedule, ModelConfig, TokenStore, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ModelConfig {
        block_size: 4,
        vocab_size: 11,
        n_layer: 1,
        n_head: 2,
        n_embd: 8,
        dropout: 0.0,
        tie_weights: false,
    };
    let cycle = [7, 2, 9, 4, 0, 10, 5, 1, 8, 3, 6];
    let ids: Vec<usize> = (0..32).map(|i| cycle[i % cycle.len()]).collect();
    let store = TokenStore::split(&ids, 0.75, model.block_size)?;
    let cfg = TrainConfig {
        batch_size: 16,
        max_iters: 500,
        eval_interval: 50,
        eval_iters: 4,
        schedule: LrSchedule::Fixed(1e-2),
        optimizer: AdamWConfig { weight_decay: 0.0, ..AdamWConfig::baseline() },
        clip_norm: None,
        seed: 42,
        checkpoint_policy: CheckpointPolicy::BestVal,
    };
    let out = train(&model, &cfg, &store, &mut ())?;
    for r in &out.log {
        println!("step {:>3}: train {:.4}, val {:.4}", r.step, r.train_loss, r.val_loss);
    }
    if let Some(best) = &out.best {
        println!("best val {:.4} at step {}", best.val_loss, best.step);
    }
    Ok(())
}
