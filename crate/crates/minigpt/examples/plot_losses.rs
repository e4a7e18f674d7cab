//! Renders a loss log as an SVG chart. Without arguments it plots a synthetic
//! log so the output can be inspected without training first.
//!
//! ```text
//! cargo run --example plot_losses -- [LOSS_LOG.csv] [OUT.svg]
//! ```

use std::path::PathBuf;

use minigpt::plot::render_svg;
use minigpt::trainer::{read_loss_log, render_loss_log};
use minigpt::LossRecord;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let records = match args.next() {
        Some(log) => read_loss_log(&PathBuf::from(log))?,
        None => (0..=20)
            .map(|i| {
                let step = i * 250;
                let train = 1.2 + 3.0 * (-(step as f64) / 900.0).exp();
                // validation bottoms out and then drifts up, as when overfitting
                let val = train + 0.05 + (step as f64 / 5000.0).powi(2) * 0.5;
                LossRecord { step, train_loss: train, val_loss: val, lr: 1e-3, wall_time_s: i as f64 * 3.0 }
            })
            .collect(),
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("loss.svg"));
    render_loss_log(&records[..records.len().min(4)], &mut std::io::stdout())?;
    println!("...");
    std::fs::write(&out, render_svg(&records)?)?;
    println!("wrote {} ({} rows)", out.display(), records.len());
    Ok(())
}
