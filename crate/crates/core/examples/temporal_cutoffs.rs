// Turn a stay into chunks and cut it at hours, volume percentiles and the
// keyword cutoffs.

use lahst::corpus::{chunk_stay, generate_corpus, truncate_to_cutoff, SynthConfig, VolumeWeighting};
use lahst::evaluation::{resolve_cutoffs, CutoffRequest};

pub fn run_example() -> lahst::Result<()> {
    let corpus = generate_corpus(&SynthConfig { patients: 20, ..SynthConfig::default() }, 2)?;
    let requests = CutoffRequest::parse_list("24,48,p25,p50,p75,excl-ds,full")?;
    let cutoffs = resolve_cutoffs(&requests, &corpus, VolumeWeighting::NoteCount)?;

    let seq = chunk_stay(&corpus[0], 32)?;
    println!("stay {}: {} notes, {} chunks", seq.stay_id, corpus[0].notes.len(), seq.len());
    for c in &cutoffs {
        let cut = truncate_to_cutoff(&seq, c.spec);
        let last = cut.chunks.last().map_or("-", |ch| ch.category.name());
        println!("{:<8} {:>4} chunks visible, last category {last}", c.name, cut.len());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
