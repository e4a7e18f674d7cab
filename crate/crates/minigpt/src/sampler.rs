//! Autoregressive character generation with temperature and top-k filtering.

use crate::error::{Error, Result};
use crate::model::Gpt;
use crate::rng::RandomState;
use crate::tokenizer::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl Default for SampleConfig {
    /// 800 characters at temperature 0.8 with top-k 200, seed 42.
    fn default() -> Self {
        SampleConfig { max_new_tokens: 800, temperature: 0.8, top_k: Some(200), seed: 42 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if let Some(k) = self.top_k {
            check_top_k(k)?;
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")))
    }
}

fn check_top_k(k: usize) -> Result<()> {
    if k >= 1 {
        Ok(())
    } else {
        Err(Error::InvalidArgument("top_k must be at least 1".into()))
    }
}

pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    Ok(logits.iter().map(|&l| l / temperature).collect())
}

/// Sets every logit below the k-th largest to -inf; values tied with the k-th
/// largest survive. `k >= len` returns the input unchanged.
pub fn apply_top_k(logits: &[f64], k: usize) -> Result<Vec<f64>> {
    check_top_k(k)?;
    if k >= logits.len() {
        return Ok(logits.to_vec());
    }
    let mut sorted = logits.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    Ok(logits.iter().map(|&l| if l < threshold { f64::NEG_INFINITY } else { l }).collect())
}

/// Max-shifted softmax; -inf entries get probability 0.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inverse-CDF draw over `probs` in index order.
pub fn sample_categorical(probs: &[f64], rng: &mut RandomState) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the total just under u; fall back to the last supported id
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Next-token distribution for the last position of `context`.
pub fn next_token_probs(
    model: &Gpt<f32>,
    context: &[usize],
    temperature: f64,
    top_k: Option<usize>,
) -> Result<Vec<f64>> {
    let crop = context.len().saturating_sub(model.config.block_size);
    let logits: Vec<f64> = model.logits_last(&context[crop..])?.iter().map(|&l| l as f64).collect();
    let mut scaled = apply_temperature(&logits, temperature)?;
    if let Some(k) = top_k {
        scaled = apply_top_k(&scaled, k)?;
    }
    Ok(softmax(&scaled))
}

/// Extends `context` by `cfg.max_new_tokens` ids, returning only the new ids.
pub fn generate_ids(
    model: &Gpt<f32>,
    context: &[usize],
    cfg: &SampleConfig,
    rng: &mut RandomState,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if context.is_empty() {
        return Err(Error::InvalidArgument("generation needs at least one context token".into()));
    }
    let mut ids = context.to_vec();
    for _ in 0..cfg.max_new_tokens {
        let probs = next_token_probs(model, &ids, cfg.temperature, cfg.top_k)?;
        ids.push(sample_categorical(&probs, rng));
    }
    Ok(ids.split_off(context.len()))
}

/// Returns `prompt` followed by the sampled continuation. An empty prompt is
/// seeded with a newline, which is not echoed.
pub fn generate(model: &Gpt<f32>, vocab: &Vocabulary, prompt: &str, cfg: &SampleConfig) -> Result<String> {
    if vocab.size() != model.config.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "vocabulary has {} symbols but the model expects {}",
            vocab.size(),
            model.config.vocab_size
        )));
    }
    let context = if prompt.is_empty() {
        let nl = vocab
            .id_of('\n')
            .ok_or_else(|| Error::InvalidArgument("empty prompt needs a newline in the vocabulary".into()))?;
        vec![nl]
    } else {
        vocab.encode(prompt)?
    };
    let mut rng = RandomState::new(cfg.seed);
    let new = generate_ids(model, &context, cfg, &mut rng)?;
    Ok(format!("{prompt}{}", vocab.decode(&new)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temperature_examples() {
        let l = [2.0, 0.0];
        assert_eq!(apply_temperature(&l, 1.0).unwrap(), l);
        let p1 = softmax(&apply_temperature(&l, 1.0).unwrap());
        let p05 = softmax(&apply_temperature(&l, 0.5).unwrap());
        assert!((p1[0] - 0.880797).abs() < 1e-6);
        assert!((p05[0] - 0.982014).abs() < 1e-6);
        assert!(apply_temperature(&l, 0.0).is_err());
        assert!(apply_temperature(&l, -1.0).is_err());
    }

    #[test]
    fn top_k_examples() {
        let inf = f64::NEG_INFINITY;
        assert_eq!(apply_top_k(&[1.0, 2.0, 3.0], 1).unwrap(), [inf, inf, 3.0]);
        assert_eq!(apply_top_k(&[1.0, 3.0, 3.0, 2.0], 1).unwrap(), [inf, 3.0, 3.0, inf]);
        assert_eq!(apply_top_k(&[1.0, 2.0, 2.0, 0.0], 2).unwrap(), [inf, 2.0, 2.0, inf]);
        assert_eq!(apply_top_k(&[1.0, 2.0], 5).unwrap(), [1.0, 2.0]);
        assert!(apply_top_k(&[1.0], 0).is_err());
    }

    #[test]
    fn categorical_edges() {
        let mut rng = RandomState::new(0);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
        let p = softmax(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]);
        assert_eq!(p, [0.0, 1.0, 0.0]);
    }
}
