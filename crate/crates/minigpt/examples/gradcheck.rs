//! Compares the tape's gradients for a whole small model against central
//! finite differences, tensor by tensor, in double precision.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use minigpt::gradcheck::{max_relative_error, numerical_gradients, DEFAULT_STEP};
use minigpt::{Gpt, GptParams, IdTensor, ModelConfig, RandomState, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig {
        block_size: 4,
        vocab_size: 11,
        n_layer: 1,
        n_head: 2,
        n_embd: 8,
        dropout: 0.0,
        tie_weights: false,
    };
    let mut rng = RandomState::new(7);
    let init = GptParams::<f64>::init(&cfg, &mut rng)?;
    // nudge every tensor off its structured init so all gradients are informative
    let mut tensors: Vec<Tensor<f64>> = init
        .tensors()
        .into_iter()
        .map(|t| Tensor::new(t.shape(), t.data().iter().map(|&v| v + rng.normal(0.0, 0.3)).collect()))
        .collect::<Result<_, _>>()?;
    let model = |ts: &[Tensor<f64>]| Gpt::from_params(cfg.clone(), GptParams::from_tensors(&cfg, ts.to_vec())?);

    let x = IdTensor::new(&[2, 4], vec![1, 5, 10, 3, 0, 7, 7, 2])?;
    let y = IdTensor::new(&[2, 4], vec![5, 10, 3, 9, 7, 7, 2, 4])?;
    let (loss, analytic) = model(&tensors)?.loss_and_grads(&x, &y, None)?;
    let numeric = numerical_gradients(&mut tensors, DEFAULT_STEP, |ts| {
        model(ts).and_then(|m| m.forward(&x, Some(&y), None)).map(|o| o.loss.unwrap_or(f64::NAN)).unwrap_or(f64::NAN)
    });

    println!("loss {loss:.6}");
    let mut worst = 0.0f64;
    for ((name, _), (a, n)) in cfg.param_layout().iter().zip(analytic.iter().zip(&numeric)) {
        let err = max_relative_error(a, n);
        worst = worst.max(err);
        println!("  {name:<26} max relative error {err:.2e}");
    }
    println!("worst {worst:.2e}");
    Ok(())
}
