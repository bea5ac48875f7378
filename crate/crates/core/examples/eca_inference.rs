// Windowed inference over a stay longer than the training window, and how
// far each stage drifts from a single full-length pass.

use lahst::corpus::{chunk_stay, generate_corpus, SynthConfig};
use lahst::inference::{eca_infer, exactness_check, CausalScope, InferenceConfig};
use lahst::model::{Lahst, ModelConfig};

pub fn run_example() -> lahst::Result<()> {
    let corpus = generate_corpus(&SynthConfig { patients: 3, ..SynthConfig::default() }, 5)?;
    let model = Lahst::new(ModelConfig { dim: 16, ..ModelConfig::default() }, 5)?;
    let seq = chunk_stay(&corpus[0], model.config.chunk_tokens)?;
    println!("stay {} has {} chunks", seq.stay_id, seq.len());

    for nmax in [8, 16, 32] {
        let r = exactness_check(&model, &seq, nmax)?;
        println!(
            "nmax {nmax:>2}: label stage {:.1e}, causal stage {:.1e}, predictions {:.1e}",
            r.label_stage_max_abs_diff, r.causal_stage_max_abs_diff, r.prediction_max_abs_diff
        );
    }

    let local = eca_infer(&model, &seq, InferenceConfig { nmax: 8, causal_scope: CausalScope::WindowLocal })?;
    let full = eca_infer(&model, &seq, InferenceConfig { nmax: 8, causal_scope: CausalScope::FullPrefix })?;
    let last = |p: &lahst::model::TemporalPredictions| p.last_row().unwrap().iter().take(5).map(|x| format!("{x:.3}")).collect::<Vec<_>>();
    println!("window-local, first labels at the last position: {:?}", last(&local.predictions));
    println!("full-prefix,  first labels at the last position: {:?}", last(&full.predictions));
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
