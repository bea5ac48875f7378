// Per-stay predictions with top-k codes, including a stay that has no
// notes before the earliest cutoff.

use std::path::Path;

use lahst::cli::{gen_data, predict_run, train_run};
use lahst::config::RunConfig;
use lahst::training::TrainConfig;

fn config(root: &Path) -> lahst::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.synth.patients = 30;
    cfg.model.dim = 16;
    cfg.train = TrainConfig { nmax: 8, peak_lr: 1e-3, max_epochs: 2, patience: 1, ..TrainConfig::default() };
    cfg.eval.cutoffs = ["0.01", "full"].map(String::from).to_vec();
    cfg.eval.topk = 3;
    cfg.data.dir = root.join("data");
    cfg.out = root.join("run");
    cfg.finalize()
}

pub fn run_example() -> lahst::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = config(dir.path())?;
    gen_data(&RunConfig { out: cfg.data.dir.clone(), ..cfg.clone() }, false)?;
    train_run(&cfg, false, None)?;

    let preds = predict_run(&cfg, &cfg.out.join("checkpoint.bin"), &cfg.data.dir.join("test.jsonl"))?;
    for p in preds.iter().take(6) {
        let top: Vec<String> = p.top_k.iter().map(|t| format!("{}:{:.3}", t.label, t.probability)).collect();
        println!("{:<10} {:<6} prior={:<5} top {}", p.stay_id, p.cutoff, p.used_prior, top.join(" "));
    }
    assert!(preds.iter().filter(|p| p.cutoff == "full").all(|p| !p.used_prior));
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
