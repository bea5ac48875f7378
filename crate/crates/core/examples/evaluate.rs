// Evaluate a trained checkpoint at hour, percentile and keyword cutoffs,
// with the inference context grid.

use std::path::Path;

use lahst::cli::{eval_run, gen_data, train_run};
use lahst::config::RunConfig;
use lahst::training::TrainConfig;

fn config(root: &Path) -> lahst::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.synth.patients = 40;
    cfg.model.dim = 16;
    cfg.train = TrainConfig { nmax: 8, peak_lr: 1e-3, max_epochs: 3, patience: 2, ..TrainConfig::default() };
    cfg.eval.cutoffs = ["24", "48", "p50", "excl-ds", "full"].map(String::from).to_vec();
    cfg.data.dir = root.join("data");
    cfg.out = root.join("run");
    cfg.finalize()
}

pub fn run_example() -> lahst::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = config(dir.path())?;
    gen_data(&RunConfig { out: cfg.data.dir.clone(), ..cfg.clone() }, false)?;
    train_run(&cfg, false, None)?;

    let (report, grid) = eval_run(&cfg, &cfg.out.join("checkpoint.bin"), "test", true)?;
    print!("{}", report.to_table());
    println!();
    print!("{}", grid.expect("ablation requested").to_table());
    assert_eq!(report.rows.len(), 5);
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
