// Mean label-attention weight per note category at two cutoffs.

use std::path::Path;

use lahst::cli::{gen_data, inspect_attention_run, train_run};
use lahst::config::RunConfig;
use lahst::training::TrainConfig;

fn config(root: &Path) -> lahst::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.synth.patients = 30;
    cfg.model.dim = 16;
    cfg.train = TrainConfig { nmax: 8, peak_lr: 1e-3, max_epochs: 2, patience: 1, ..TrainConfig::default() };
    cfg.eval.cutoffs = ["p25", "full"].map(String::from).to_vec();
    cfg.data.dir = root.join("data");
    cfg.out = root.join("run");
    cfg.finalize()
}

pub fn run_example() -> lahst::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = config(dir.path())?;
    gen_data(&RunConfig { out: cfg.data.dir.clone(), ..cfg.clone() }, false)?;
    train_run(&cfg, false, None)?;

    let summaries = inspect_attention_run(&cfg, &cfg.out.join("checkpoint.bin"), &cfg.data.dir.join("test.jsonl"))?;
    for s in &summaries {
        println!("# {}", s.cutoff);
        print!("{}", s.to_csv());
        let total: f64 = s.rows.iter().map(|r| r.mean).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    assert!(cfg.out.join("attention_full.csv").exists());
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
