use minigpt::optim::{clip_grad_global_norm, lr_at, partition_params};
use minigpt::{AdamW, AdamWConfig, GptParams, ModelConfig, RandomState, ScheduleConfig, Tensor};
use proptest::prelude::*;

fn groups(cfg: &ModelConfig) -> (Vec<String>, Vec<String>) {
    let params = GptParams::<f32>::init(cfg, &mut RandomState::new(0)).unwrap();
    let g = partition_params(&params.tensors());
    let names = cfg.param_layout();
    let pick = |ix: &[usize]| ix.iter().map(|&i| names[i].0.clone()).collect::<Vec<_>>();
    let mut all: Vec<usize> = g.decay.iter().chain(&g.no_decay).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..names.len()).collect::<Vec<_>>(), "groups must be a disjoint cover");
    (pick(&g.decay), pick(&g.no_decay))
}

#[test]
fn stronger_grouping() {
    let (decay, no_decay) = groups(&ModelConfig::stronger(65));
    assert_eq!((decay.len(), no_decay.len()), (38, 63));
}

#[test]
fn baseline_grouping() {
    // 2 embeddings + 6 matrices per block + untied head; 10 vectors per block + ln_f pair + head bias
    let (decay, no_decay) = groups(&ModelConfig::baseline(65));
    assert_eq!((decay.len(), no_decay.len()), (27, 43));
}

#[test]
fn zero_layer_grouping() {
    let cfg = ModelConfig {
        block_size: 2,
        vocab_size: 2,
        n_layer: 0,
        n_head: 1,
        n_embd: 2,
        dropout: 0.0,
        tie_weights: false,
    };
    let (decay, no_decay) = groups(&cfg);
    assert_eq!(decay, ["tok_emb", "pos_emb", "head.weight"]);
    assert_eq!(no_decay, ["ln_f.gain", "ln_f.bias", "head.bias"]);
}

fn stronger_schedule() -> ScheduleConfig {
    ScheduleConfig { max_lr: 1e-3, min_lr: 1e-4, warmup_steps: 100, decay_steps: 5000 }
}

#[test]
fn schedule_continuity_and_monotonicity() {
    let s = stronger_schedule();
    let (last_warm, first_cos) = (lr_at(99, &s), lr_at(100, &s));
    assert!((last_warm - first_cos).abs() / first_cos < 1e-6);
    for step in 100..6000 {
        assert!(lr_at(step + 1, &s) <= lr_at(step, &s));
    }
    for step in 0..99 {
        assert!(lr_at(step + 1, &s) > lr_at(step, &s));
    }
}

/// Textbook bias-corrected Adam for a single scalar, no decay.
fn scalar_adam(mut theta: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let (mut m, mut v) = (0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        theta -= lr * mh / (vh.sqrt() + eps);
    }
    theta
}

#[test]
fn adam_matches_scalar_oracle() {
    let cfg = AdamWConfig { beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 0.0, grouped: true };
    let mut rng = RandomState::new(11);
    let init: Vec<f64> = (0..6).map(|_| rng.normal(0.0, 1.0)).collect();
    let history: Vec<Vec<f64>> = (0..25).map(|_| (0..6).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
    let mut p = Tensor::<f64>::from_f64(&[2, 3], &init).unwrap();
    let mut opt = AdamW::new(&[&p], cfg).unwrap();
    for g in &history {
        opt.step(&mut [&mut p], std::slice::from_ref(g), 0.01).unwrap();
    }
    assert_eq!(opt.step_count(), 25);
    for (i, &got) in p.data().iter().enumerate() {
        let gi: Vec<f64> = history.iter().map(|g| g[i]).collect();
        let want = scalar_adam(init[i], &gi, 0.01, 0.9, 0.99, 1e-8);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn grouped_decay_skips_vectors() {
    let mut w = Tensor::<f64>::from_f64(&[1, 1], &[1.0]).unwrap();
    let mut b = Tensor::<f64>::from_f64(&[1], &[1.0]).unwrap();
    let mut opt = AdamW::new(&[&w, &b], AdamWConfig::stronger()).unwrap();
    opt.step(&mut [&mut w, &mut b], &[vec![0.0], vec![0.0]], 0.1).unwrap();
    assert!((w.data()[0] - 0.99).abs() < 1e-15);
    assert_eq!(b.data()[0], 1.0);
}

#[test]
fn quadratic_bowl_converges() {
    // f(x, y) = x^2 + 10 y^2
    let loss = |p: &[f64]| p[0] * p[0] + 10.0 * p[1] * p[1];
    let mut p = Tensor::<f64>::from_f64(&[2], &[3.0, -2.0]).unwrap();
    let start = loss(p.data());
    let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::stronger() };
    let mut opt = AdamW::new(&[&p], cfg).unwrap();
    for _ in 0..200 {
        let g = vec![2.0 * p.data()[0], 20.0 * p.data()[1]];
        opt.step(&mut [&mut p], &[g], 0.1).unwrap();
    }
    let end = loss(p.data());
    assert!(end * 100.0 <= start, "loss {start} -> {end}");
}

proptest! {
    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        grads in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..6), 1..5),
        max_norm in 0.01f64..20.0,
    ) {
        let before: Vec<f64> = grads.iter().flatten().copied().collect();
        let mut clipped = grads.clone();
        let norm = clip_grad_global_norm(&mut clipped, max_norm).unwrap();
        let after: Vec<f64> = clipped.iter().flatten().copied().collect();
        let after_norm = after.iter().map(|g| g * g).sum::<f64>().sqrt();
        prop_assert!(after_norm <= max_norm + 1e-6 || after == before);
        prop_assert!((norm - before.iter().map(|g| g * g).sum::<f64>().sqrt()).abs() < 1e-9);
        if norm > 1e-9 {
            let dot: f64 = before.iter().zip(&after).map(|(a, b)| a * b).sum();
            let cos = dot / (norm * after_norm);
            prop_assert!((cos - 1.0).abs() < 1e-6);
        }
    }
}
