//! Parameter tensors and counts of the two shipped architectures, and how
//! AdamW splits them into decayed and non-decayed groups.
//!
//! ```text
//! cargo run --example param_counts
//! ```

use minigpt::optim::partition_params;
use minigpt::{ModelConfig, Tensor};

fn describe(name: &str, cfg: &ModelConfig) {
    let layout = cfg.param_layout();
    let tensors: Vec<Tensor<f32>> = layout.iter().map(|(_, shape)| Tensor::zeros(shape)).collect();
    let groups = partition_params(&tensors.iter().collect::<Vec<_>>());
    println!(
        "{name}: {} parameters in {} tensors ({} decayed, {} not)",
        cfg.param_count(),
        layout.len(),
        groups.decay.len(),
        groups.no_decay.len()
    );
}

fn main() {
    let base = ModelConfig::baseline(65);
    for (name, shape) in base.param_layout().iter().take(20) {
        let n: usize = shape.iter().product();
        println!("  {name:<24} {shape:?} = {n}");
    }
    println!("  ...");
    describe("baseline", &base);
    let strong = ModelConfig::stronger(65);
    describe("stronger", &strong);
    let untied = ModelConfig { tie_weights: false, ..strong };
    println!(
        "tying the head to the token embedding saves {}",
        untied.param_count() - ModelConfig::stronger(65).param_count()
    );
}
