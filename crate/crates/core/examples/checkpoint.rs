// Save a model to the binary checkpoint format and load it back.

use lahst::checkpoint::Checkpoint;
use lahst::corpus::{chunk_stay, generate_corpus, SynthConfig};
use lahst::model::{Lahst, ModelConfig};

pub fn run_example() -> lahst::Result<()> {
    let dir = tempfile::tempdir()?;
    let model = Lahst::new(ModelConfig { dim: 16, ..ModelConfig::default() }, 9)?;
    let prior = vec![0.1; model.config.num_labels];

    let path = dir.path().join("model.bin");
    let mut ck = Checkpoint::from_model(&model, &prior);
    ck.metadata.insert("note".into(), "example".into());
    ck.save(&path)?;
    println!("{} bytes, {} parameter scalars", std::fs::metadata(&path)?.len(), model.params.scalar_count());

    let back = Checkpoint::load(&path)?;
    let restored = back.model()?;
    assert_eq!(back.prior()?, prior);
    assert_eq!(back.metadata["note"], "example");

    let stay = &generate_corpus(&SynthConfig { patients: 1, ..SynthConfig::default() }, 1)?[0];
    let seq = chunk_stay(stay, model.config.chunk_tokens)?;
    let a = model.forward(&seq.last(8))?.predictions.probs;
    let b = restored.forward(&seq.last(8))?.predictions.probs;
    assert_eq!(a, b);
    println!("restored model reproduces predictions bit for bit");

    // Corruption is detected rather than silently loaded.
    let mut bytes = std::fs::read(&path)?;
    bytes.truncate(bytes.len() - 3);
    assert!(Checkpoint::from_bytes(&bytes).is_err());
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
