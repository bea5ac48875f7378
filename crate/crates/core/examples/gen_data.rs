// Generate a small synthetic corpus and look at what was written.

use lahst::cli::gen_data;
use lahst::config::RunConfig;
use lahst::corpus::io::read_corpus;
use lahst::corpus::Category;

pub fn run_example() -> lahst::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut cfg = RunConfig::default();
    cfg.synth.patients = 30;
    cfg.out = dir.path().to_path_buf();
    let cfg = cfg.finalize()?;

    let manifest = gen_data(&cfg, false)?;
    println!("counts: {:?}", manifest.counts);
    println!("synth config hash: {}", manifest.config_hash);

    let train = read_corpus(&dir.path().join("train.jsonl"), cfg.model.vocab_size, cfg.model.num_labels)?;
    let stay = &train[0];
    println!("stay {} has {} notes and labels {:?}", stay.stay_id, stay.notes.len(), stay.labels);
    for c in Category::ALL {
        let n = stay.notes.iter().filter(|n| n.category == c).count();
        println!("  {:<18} {n}", c.name());
    }

    // Files are never overwritten silently.
    assert!(gen_data(&cfg, false).is_err());
    gen_data(&cfg, true)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
