use std::path::{Path, PathBuf};
use std::process::Command;

use minigpt::cli::main_with_args;
use minigpt::config::RunConfig;
use minigpt::trainer::read_loss_log;
use minigpt::{CheckpointPolicy, LrSchedule, ScheduleConfig};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with_args(std::iter::once("minigpt").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// A period-11 character cycle: each character fixes its successor.
const CYCLE: &str = "ROMEO:\nab c";

fn toy_run(dir: &Path, extra: &str) -> PathBuf {
    let data = dir.join("toy.txt");
    std::fs::write(&data, CYCLE.repeat(6)).unwrap();
    let cfg = dir.join("toy.cfg");
    std::fs::write(
        &cfg,
        format!(
            "data_path = {}\nout_dir = {}\ntrain_fraction = 0.75\n\
             block_size = 4\nn_layer = 1\nn_head = 2\nn_embd = 8\n\
             batch_size = 16\nmax_iters = 400\neval_interval = 100\neval_iters = 4\n\
             lr = 1e-2\nweight_decay = 0\n{extra}",
            data.display(),
            dir.join("out").display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn shipped_presets() {
    let base = RunConfig::load(&repo_root().join("configs/baseline.cfg")).unwrap();
    let m = base.model_for(65).unwrap();
    assert_eq!((m.block_size, m.n_layer, m.n_head, m.n_embd, m.dropout, m.tie_weights), (128, 4, 4, 128, 0.0, false));
    assert_eq!(m.param_count(), 826_433);
    let t = &base.train;
    assert_eq!((t.batch_size, t.max_iters, t.seed, t.clip_norm), (32, 3000, 42, None));
    assert_eq!(t.schedule, LrSchedule::Fixed(3e-4));
    assert_eq!(t.checkpoint_policy, CheckpointPolicy::Final);
    assert_eq!(base, RunConfig::baseline());

    let strong = RunConfig::load(&repo_root().join("configs/stronger.cfg")).unwrap();
    let m = strong.model_for(65).unwrap();
    assert_eq!((m.block_size, m.n_layer, m.n_head, m.n_embd, m.dropout, m.tie_weights), (256, 6, 6, 384, 0.2, true));
    assert_eq!(m.param_count(), 10_770_881);
    let t = &strong.train;
    assert_eq!((t.batch_size, t.max_iters, t.seed, t.clip_norm), (64, 5000, 42, Some(1.0)));
    let sched = ScheduleConfig { max_lr: 1e-3, min_lr: 1e-4, warmup_steps: 100, decay_steps: 5000 };
    assert_eq!(t.schedule, LrSchedule::WarmupCosine(sched));
    let o = t.optimizer;
    assert_eq!((o.beta1, o.beta2, o.weight_decay, o.grouped), (0.9, 0.99, 0.1, true));
    assert_eq!(t.checkpoint_policy, CheckpointPolicy::BestVal);
    assert_eq!(strong, RunConfig::stronger());
}

#[test]
fn train_sample_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_run(dir.path(), "checkpoint_policy = best_val\n");
    let (code, out, err) = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("step 0: train "), "{out}");
    assert!(out.contains("step 400: train "));
    assert!(out.contains("parameters: "));

    let out_dir = dir.path().join("out");
    let csv = std::fs::read_to_string(out_dir.join("loss_log.csv")).unwrap();
    assert!(csv.starts_with("step,train_loss,val_loss,lr,wall_time_s\n"));
    let log = read_loss_log(&out_dir.join("loss_log.csv")).unwrap();
    assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), [0, 100, 200, 300, 400]);
    for f in ["final.mgpt", "best.mgpt"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    let ck = out_dir.join("final.mgpt");
    let ck = ck.to_str().unwrap();
    let sample = ["sample", "--checkpoint", ck, "--prompt", "ROMEO:", "--max-new-tokens", "30"];
    let (code, first, _) = run(&sample);
    assert_eq!(code, 0);
    assert!(first.starts_with("ROMEO:"));
    assert_eq!(first.trim_end_matches('\n').chars().count(), 36);
    assert_eq!(run(&sample).1, first);

    let data = dir.path().join("toy.txt");
    let eval = ["eval", "--checkpoint", ck, "--data", data.to_str().unwrap(), "--split", "train", "--eval-iters", "1"];
    let (code, line, _) = run(&eval);
    assert_eq!(code, 0);
    let loss: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(loss < 0.2, "memorized model should be near-certain: {line}");
    assert_eq!(run(&eval).1, line);

    let svg = dir.path().join("loss.svg");
    let log_path = out_dir.join("loss_log.csv");
    let (code, _, err) = run(&["plot", "--log", log_path.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let svg = std::fs::read_to_string(svg).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let bad_key = dir.path().join("bad.cfg");
    std::fs::write(&bad_key, "blocksize = 64\n").unwrap();
    let (code, _, err) = run(&["train", "--config", bad_key.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("blocksize"), "{err}");

    let missing = dir.path().join("nope.cfg");
    assert_eq!(run(&["train", "--config", missing.to_str().unwrap()]).0, 2);

    let junk = dir.path().join("junk.mgpt");
    std::fs::write(&junk, b"NOPE\x01\0\0\0").unwrap();
    let (code, _, err) = run(&["sample", "--checkpoint", junk.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("magic"), "{err}");

    let log = dir.path().join("bad.csv");
    std::fs::write(&log, "step,train_loss,val_loss,lr,wall_time_s\n0,1,1,1,1\n5,x,1,1,1\n").unwrap();
    let (code, _, err) =
        run(&["plot", "--log", log.to_str().unwrap(), "--out", dir.path().join("x.svg").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("line 3"), "{err}");

    let cfg = toy_run(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("lr = 1e-2", "lr = 1e30");
    std::fs::write(&cfg, text).unwrap();
    let (code, _, err) = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("diverged"));
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_minigpt");
    let status = Command::new(bin).arg("--help").output().unwrap();
    assert!(status.status.success());
    assert!(String::from_utf8_lossy(&status.stdout).contains("sample"));
    let status = Command::new(bin).args(["eval", "--checkpoint", "/nonexistent.mgpt", "--data", "x"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = Command::new(bin).arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(1));
}
