// The evaluation metrics on a hand-sized score matrix.

use lahst::evaluation::{macro_auc, macro_f1, micro_auc, micro_f1, precision_at_k};
use lahst::numerics::Tensor;

pub fn run_example() -> lahst::Result<()> {
    let scores = Tensor::from_rows(&[
        vec![0.9, 0.2, 0.6, 0.1, 0.4, 0.7],
        vec![0.3, 0.8, 0.5, 0.5, 0.2, 0.1],
        vec![0.6, 0.4, 0.1, 0.9, 0.3, 0.2],
    ]);
    let gold = Tensor::from_rows(&[
        vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
    ]);
    println!("Micro-F1  {:.4}", micro_f1(&scores, &gold, 0.5)?);
    println!("Macro-F1  {:.4}", macro_f1(&scores, &gold, 0.5)?);
    println!("Micro-AUC {:.4}", micro_auc(&scores, &gold)?.unwrap());
    let m = macro_auc(&scores, &gold)?;
    println!("Macro-AUC {:.4} ({} labels skipped)", m.value.unwrap(), m.skipped);
    println!("P@5       {:.4}", precision_at_k(&scores, &gold, 5)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> lahst::Result<()> {
    run_example()
}
