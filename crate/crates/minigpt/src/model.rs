//! Decoder-only transformer: token + position embeddings, pre-LayerNorm
//! blocks of causal multi-head attention and a GELU MLP, a final LayerNorm and
//! a language-model head that may share its weight with the token embedding.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RandomState;
use crate::tensor::{IdTensor, Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub block_size: usize,
    pub vocab_size: usize,
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    pub dropout: f64,
    pub tie_weights: bool,
}

impl ModelConfig {
    /// 4 layers, 4 heads, width 128, context 128, untied head, no dropout.
    pub fn baseline(vocab_size: usize) -> Self {
        ModelConfig {
            block_size: 128,
            vocab_size,
            n_layer: 4,
            n_head: 4,
            n_embd: 128,
            dropout: 0.0,
            tie_weights: false,
        }
    }

    /// 6 layers, 6 heads, width 384, context 256, tied head, dropout 0.2.
    pub fn stronger(vocab_size: usize) -> Self {
        ModelConfig { block_size: 256, vocab_size, n_layer: 6, n_head: 6, n_embd: 384, dropout: 0.2, tie_weights: true }
    }

    pub fn head_dim(&self) -> usize {
        self.n_embd / self.n_head
    }

    /// `n_layer` may be zero (embeddings straight into the head); every other
    /// count must be positive and the width must split evenly across heads.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.block_size == 0 || self.vocab_size == 0 || self.n_head == 0 || self.n_embd == 0 {
            return bad(format!("block_size, vocab_size, n_head and n_embd must be >= 1: {self:?}"));
        }
        if !self.n_embd.is_multiple_of(self.n_head) {
            return bad(format!("n_embd {} is not divisible by n_head {}", self.n_embd, self.n_head));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in enumeration order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (v, t, d) = (self.vocab_size, self.block_size, self.n_embd);
        let mut out = vec![("tok_emb".to_string(), vec![v, d]), ("pos_emb".to_string(), vec![t, d])];
        for b in 0..self.n_layer {
            let p = |s: &str| format!("blocks.{b}.{s}");
            out.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.q.weight"), vec![d, d]),
                (p("attn.q.bias"), vec![d]),
                (p("attn.k.weight"), vec![d, d]),
                (p("attn.k.bias"), vec![d]),
                (p("attn.v.weight"), vec![d, d]),
                (p("attn.v.bias"), vec![d]),
                (p("attn.proj.weight"), vec![d, d]),
                (p("attn.proj.bias"), vec![d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("mlp.fc.weight"), vec![d, 4 * d]),
                (p("mlp.fc.bias"), vec![4 * d]),
                (p("mlp.proj.weight"), vec![4 * d, d]),
                (p("mlp.proj.bias"), vec![d]),
            ]);
        }
        out.push(("ln_f.gain".to_string(), vec![d]));
        out.push(("ln_f.bias".to_string(), vec![d]));
        out.push(("head.bias".to_string(), vec![v]));
        if !self.tie_weights {
            out.push(("head.weight".to_string(), vec![v, d]));
        }
        out
    }

    /// Closed-form parameter count (a tied head weight counted once).
    pub fn param_count(&self) -> usize {
        let (v, t, d, l) = (self.vocab_size, self.block_size, self.n_embd, self.n_layer);
        let per_block = 4 * (d * d + d) + 4 * d + (4 * d * d + 4 * d) + (4 * d * d + d);
        let head = if self.tie_weights { v } else { v * d + v };
        v * d + t * d + l * per_block + 2 * d + head
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<S> {
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
}

/// `y = x @ weight + bias`, `weight: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<S> {
    pub ln1: LayerNormParams<S>,
    pub q: LinearParams<S>,
    pub k: LinearParams<S>,
    pub v: LinearParams<S>,
    pub proj: LinearParams<S>,
    pub ln2: LayerNormParams<S>,
    pub fc: LinearParams<S>,
    pub mlp_proj: LinearParams<S>,
}

/// All trainable tensors. With tied weights `head_weight` is `None` and the
/// head reads `tok_emb`.
#[derive(Clone, Debug, PartialEq)]
pub struct GptParams<S> {
    pub tok_emb: Tensor<S>,
    pub pos_emb: Tensor<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub ln_f: LayerNormParams<S>,
    pub head_bias: Tensor<S>,
    pub head_weight: Option<Tensor<S>>,
}

impl<S: Scalar> GptParams<S> {
    /// Normal(0, 0.02) matrices, zero biases, unit LayerNorm gains; draws are
    /// taken in enumeration order, one per matrix element.
    pub fn init(config: &ModelConfig, rng: &mut RandomState) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .param_layout()
            .into_iter()
            .map(|(name, shape)| {
                if shape.len() >= 2 {
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| S::from_f64(rng.normal(0.0, INIT_STD))).collect();
                    Tensor::new(&shape, data)
                } else if name.ends_with(".gain") {
                    Ok(Tensor::ones(&shape))
                } else {
                    Ok(Tensor::zeros(&shape))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_tensors(config, tensors)
    }

    /// Reassembles parameters from tensors in enumeration order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<S>>) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked against layout");
        let tok_emb = next();
        let pos_emb = next();
        let mut blocks = Vec::with_capacity(config.n_layer);
        for _ in 0..config.n_layer {
            let ln1 = LayerNormParams { gain: next(), bias: next() };
            let q = LinearParams { weight: next(), bias: next() };
            let k = LinearParams { weight: next(), bias: next() };
            let v = LinearParams { weight: next(), bias: next() };
            let proj = LinearParams { weight: next(), bias: next() };
            let ln2 = LayerNormParams { gain: next(), bias: next() };
            let fc = LinearParams { weight: next(), bias: next() };
            let mlp_proj = LinearParams { weight: next(), bias: next() };
            blocks.push(BlockParams { ln1, q, k, v, proj, ln2, fc, mlp_proj });
        }
        let ln_f = LayerNormParams { gain: next(), bias: next() };
        let head_bias = next();
        let head_weight = (!config.tie_weights).then(&mut next);
        Ok(GptParams { tok_emb, pos_emb, blocks, ln_f, head_bias, head_weight })
    }

    /// Every tensor in enumeration order.
    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for b in &self.blocks {
            out.extend([
                &b.ln1.gain,
                &b.ln1.bias,
                &b.q.weight,
                &b.q.bias,
                &b.k.weight,
                &b.k.bias,
                &b.v.weight,
                &b.v.bias,
                &b.proj.weight,
                &b.proj.bias,
                &b.ln2.gain,
                &b.ln2.bias,
                &b.fc.weight,
                &b.fc.bias,
                &b.mlp_proj.weight,
                &b.mlp_proj.bias,
            ]);
        }
        out.extend([&self.ln_f.gain, &self.ln_f.bias, &self.head_bias]);
        out.extend(self.head_weight.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1.gain,
                &mut b.ln1.bias,
                &mut b.q.weight,
                &mut b.q.bias,
                &mut b.k.weight,
                &mut b.k.bias,
                &mut b.v.weight,
                &mut b.v.bias,
                &mut b.proj.weight,
                &mut b.proj.bias,
                &mut b.ln2.gain,
                &mut b.ln2.bias,
                &mut b.fc.weight,
                &mut b.fc.bias,
                &mut b.mlp_proj.weight,
                &mut b.mlp_proj.bias,
            ]);
        }
        out.extend([&mut self.ln_f.gain, &mut self.ln_f.bias, &mut self.head_bias]);
        out.extend(self.head_weight.as_mut());
        out
    }

    pub fn into_tensors(self) -> Vec<Tensor<S>> {
        // cheap enough: only used for checkpointing and tests
        self.tensors().into_iter().cloned().collect()
    }

    /// Element count over distinct storages.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self, config: &ModelConfig) -> GptParams<T> {
        let tensors = self.tensors().into_iter().map(|t| t.cast()).collect();
        GptParams::from_tensors(config, tensors).expect("same layout")
    }
}

/// Vars of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    /// Parameter leaves in enumeration order.
    pub params: Vec<Var>,
    /// Output of the final LayerNorm, `[B, T, d]`.
    pub hidden: Var,
    /// `[B, T, V]`.
    pub logits: Var,
    pub loss: Option<Var>,
}

/// Result of an untracked forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput<S> {
    pub logits: Tensor<S>,
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gpt<S: Scalar = f32> {
    pub config: ModelConfig,
    pub params: GptParams<S>,
}

impl<S: Scalar> Gpt<S> {
    pub fn new(config: ModelConfig, rng: &mut RandomState) -> Result<Self> {
        let params = GptParams::init(&config, rng)?;
        Ok(Gpt { config, params })
    }

    pub fn from_params(config: ModelConfig, params: GptParams<S>) -> Result<Self> {
        let tensors = params.into_tensors();
        let params = GptParams::from_tensors(&config, tensors)?;
        Ok(Gpt { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Records the forward pass on `tape`. Dropout is active iff `dropout_rng`
    /// is given; masks are drawn after the embedding sum, then per block after
    /// the attention projection and at the MLP output.
    pub fn record<'p>(
        &'p self,
        tape: &mut Tape<'p, S>,
        idx: &IdTensor,
        targets: Option<&IdTensor>,
        mut dropout_rng: Option<&mut RandomState>,
    ) -> Result<Recorded> {
        let cfg = &self.config;
        let shape = idx.shape();
        if shape.len() != 2 {
            return Err(Error::InvalidArgument(format!("token ids must have shape (B, T), got {shape:?}")));
        }
        let (b, t) = (shape[0], shape[1]);
        if t == 0 || t > cfg.block_size {
            return Err(Error::InvalidArgument(format!(
                "sequence length {t} must be between 1 and the block size {}",
                cfg.block_size
            )));
        }
        if let Some(y) = targets {
            if y.shape() != shape {
                return Err(Error::ShapeMismatch { op: "targets", lhs: shape.to_vec(), rhs: y.shape().to_vec() });
            }
        }
        let params: Vec<Var> = self.params.tensors().into_iter().map(|p| tape.param(p)).collect();
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("layout");
        let (tok_emb, pos_emb) = (next(), next());
        let p = cfg.dropout;
        let mut drop = |tape: &mut Tape<'p, S>, x: Var| -> Result<Var> {
            match dropout_rng.as_deref_mut() {
                Some(rng) => tape.dropout(x, p, true, rng),
                None => Ok(x),
            }
        };

        let tok = tape.embedding(tok_emb, idx)?;
        let positions = IdTensor::new(&[t], (0..t).collect())?;
        let pos = tape.embedding(pos_emb, &positions)?;
        let mut x = tape.add(tok, pos)?;
        x = drop(tape, x)?;

        let (heads, hd) = (cfg.n_head, cfg.head_dim());
        for _ in 0..cfg.n_layer {
            let (ln1_g, ln1_b) = (next(), next());
            let (wq, bq, wk, bk, wv, bv) = (next(), next(), next(), next(), next(), next());
            let (wp, bp) = (next(), next());
            let (ln2_g, ln2_b) = (next(), next());
            let (wfc, bfc, wmp, bmp) = (next(), next(), next(), next());

            let h = tape.layer_norm(x, ln1_g, ln1_b, LAYER_NORM_EPS)?;
            let q = tape.linear(h, wq, bq)?;
            let k = tape.linear(h, wk, bk)?;
            let v = tape.linear(h, wv, bv)?;
            let q = tape.split_heads(q, heads)?;
            let k = tape.split_heads(k, heads)?;
            let v = tape.split_heads(v, heads)?;
            let kt = tape.transpose_last_two(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
            let scores = tape.masked_fill_causal(scores)?;
            let att = tape.softmax_lastdim(scores)?;
            let y = tape.matmul(att, v)?;
            let y = tape.merge_heads(y)?;
            let y = tape.linear(y, wp, bp)?;
            let y = drop(tape, y)?;
            x = tape.add(x, y)?;

            let h = tape.layer_norm(x, ln2_g, ln2_b, LAYER_NORM_EPS)?;
            let h = tape.linear(h, wfc, bfc)?;
            let h = tape.gelu(h);
            let h = tape.linear(h, wmp, bmp)?;
            let h = drop(tape, h)?;
            x = tape.add(x, h)?;
        }

        let (lnf_g, lnf_b, head_bias) = (next(), next(), next());
        let head_weight = if cfg.tie_weights { tok_emb } else { next() };
        let hidden = tape.layer_norm(x, lnf_g, lnf_b, LAYER_NORM_EPS)?;
        let wt = tape.transpose_last_two(head_weight)?;
        let logits = tape.matmul(hidden, wt)?;
        let logits = tape.add(logits, head_bias)?;

        let loss = match targets {
            Some(y) => {
                let flat = tape.reshape(logits, &[b * t, cfg.vocab_size])?;
                Some(tape.cross_entropy_mean(flat, y.ids())?)
            }
            None => None,
        };
        Ok(Recorded { params, hidden, logits, loss })
    }

    /// Forward pass without gradient tracking.
    pub fn forward(
        &self,
        idx: &IdTensor,
        targets: Option<&IdTensor>,
        dropout_rng: Option<&mut RandomState>,
    ) -> Result<ForwardOutput<S>> {
        let mut tape = Tape::no_grad();
        let rec = self.record(&mut tape, idx, targets, dropout_rng)?;
        Ok(ForwardOutput {
            logits: tape.value(rec.logits).clone(),
            loss: rec.loss.map(|l| tape.value(l).data()[0].to_f64()),
        })
    }

    /// Loss and gradients (enumeration order) for one batch.
    pub fn loss_and_grads(
        &self,
        idx: &IdTensor,
        targets: &IdTensor,
        dropout_rng: Option<&mut RandomState>,
    ) -> Result<(f64, Vec<Vec<S>>)> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, idx, Some(targets), dropout_rng)?;
        let loss_var = rec.loss.expect("targets given");
        let loss = tape.value(loss_var).data()[0].to_f64();
        let mut grads = tape.backward(loss_var)?;
        let out =
            rec.params.iter().map(|&v| grads.take(v).unwrap_or_else(|| vec![S::ZERO; tape.value(v).numel()])).collect();
        Ok((loss, out))
    }

    /// Logits at the last position of a single context, dropout off.
    pub fn logits_last(&self, context: &[usize]) -> Result<Vec<S>> {
        let idx = IdTensor::row(context.to_vec());
        let out = self.forward(&idx, None, None)?;
        let v = self.config.vocab_size;
        let data = out.logits.data();
        Ok(data[data.len() - v..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(tie: bool) -> ModelConfig {
        ModelConfig { block_size: 4, vocab_size: 11, n_layer: 1, n_head: 2, n_embd: 8, dropout: 0.0, tie_weights: tie }
    }

    #[test]
    fn preset_parameter_counts() {
        assert_eq!(ModelConfig::baseline(65).param_count(), 826_433);
        assert_eq!(ModelConfig::stronger(65).param_count(), 10_770_881);
        assert_eq!(ModelConfig::stronger(65).param_count() + 65 * 384, {
            let mut c = ModelConfig::stronger(65);
            c.tie_weights = false;
            c.param_count()
        });
    }

    #[test]
    fn degenerate_zero_layer_count() {
        let cfg = ModelConfig {
            block_size: 2,
            vocab_size: 2,
            n_layer: 0,
            n_head: 1,
            n_embd: 2,
            dropout: 0.0,
            tie_weights: false,
        };
        assert_eq!(cfg.param_count(), 18);
        let mut rng = RandomState::new(0);
        let params = GptParams::<f32>::init(&cfg, &mut rng).unwrap();
        assert_eq!(params.param_count(), 18);
    }

    #[test]
    fn layout_matches_closed_form() {
        for cfg in [tiny(true), tiny(false), ModelConfig::baseline(65), ModelConfig::stronger(65)] {
            let n: usize = cfg.param_layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum();
            assert_eq!(n, cfg.param_count());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(false);
        c.n_head = 3;
        assert!(c.validate().is_err());
        let mut c = tiny(false);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny(false);
        c.vocab_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_values() {
        let mut rng = RandomState::new(42);
        let p = GptParams::<f32>::init(&tiny(false), &mut rng).unwrap();
        assert!(p.blocks[0].ln1.gain.data().iter().all(|&g| g == 1.0));
        assert!(p.blocks[0].q.bias.data().iter().all(|&b| b == 0.0));
        assert!(p.head_bias.data().iter().all(|&b| b == 0.0));
        assert!(p.head_weight.is_some());
        let again = GptParams::<f32>::init(&tiny(false), &mut RandomState::new(42)).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let model = Gpt::<f32>::new(tiny(true), &mut RandomState::new(0)).unwrap();
        let too_long = IdTensor::new(&[1, 5], vec![0; 5]).unwrap();
        assert!(model.forward(&too_long, None, None).is_err());
        let bad_id = IdTensor::new(&[1, 2], vec![0, 11]).unwrap();
        assert!(matches!(model.forward(&bad_id, None, None), Err(Error::IdOutOfRange { id: 11, vocab_size: 11 })));
    }
}
