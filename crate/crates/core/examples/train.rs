// Train a small model end to end and read the per-epoch log.

use std::path::Path;

use lahst::cli::{gen_data, train_run};
use lahst::config::RunConfig;
use lahst::training::TrainConfig;

fn config(root: &Path) -> lahst::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.synth.patients = 40;
    cfg.model.dim = 16;
    cfg.train = TrainConfig { nmax: 8, peak_lr: 1e-3, max_epochs: 4, patience: 3, ..TrainConfig::default() };
    cfg.data.dir = root.join("data");
    cfg.out = root.join("run");
    cfg.finalize()
}

pub fn run_example() -> lahst::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = config(dir.path())?;
    gen_data(&RunConfig { out: cfg.data.dir.clone(), ..cfg.clone() }, false)?;

    // Two epochs now, the rest after a resume.
    let paused = train_run(&cfg, false, Some(2))?;
    println!("paused after {} epochs", paused.epochs);
    let done = train_run(&cfg, true, None)?;
    println!("finished: {} epochs, best epoch {}, best dev Micro-F1 {:?}", done.epochs, done.best_epoch, done.best_dev);
    print!("{}", done.dev_report.expect("finished run has a dev report").to_table());

    let log = std::fs::read_to_string(cfg.out.join("train_log.jsonl"))?;
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line)?;
        println!("epoch {} loss {:.4} lr {:.2e}", v["epoch"], v["train_loss"].as_f64().unwrap_or(f64::NAN), v["lr"].as_f64().unwrap_or(f64::NAN));
    }
    assert!(cfg.out.join("checkpoint.bin").exists());
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
