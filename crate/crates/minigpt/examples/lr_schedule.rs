//! Prints the warmup-plus-cosine learning rate at a few milestones.
//!
//! ```text
//! cargo run --example lr_schedule
//! ```

use minigpt::optim::lr_at;
use minigpt::ScheduleConfig;

fn main() {
    let s = ScheduleConfig { max_lr: 1e-3, min_lr: 1e-4, warmup_steps: 100, decay_steps: 5000 };
    println!("{:>6}  {:>10}", "step", "lr");
    for step in [0, 1, 49, 99, 100, 1000, 1750, 2550, 4000, 4999, 5000, 6000] {
        println!("{step:>6}  {:>10.4e}", lr_at(step, &s));
    }
}
