//! Mode weights for a hand-sized confusion matrix, and what they do to the
//! bias/class mutual information.

use dbforge::fgccdb::derive_weights;
use dbforge::modes::{
    compute_weights, estimate_statistics, mutual_information, reweighted_joint, ConfusionMatrix,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // rows: discovered bias label, columns: class
    let m = ConfusionMatrix::from_rows(&[vec![90, 20], vec![10, 80]])?;
    let stats = estimate_statistics(&m);
    let table = compute_weights(&stats, &m);

    println!("counts M      {:?}", m.to_rows());
    println!("joint J       {}", stats.joint);
    println!("P(b | y)      {}", stats.conditional);
    println!("bias marginal {}", stats.marginal);
    println!("mode weight W {}", table.mode_weights);
    println!("sample w=W/M  {}", table.sample_weights);
    println!("max/min W     {:.3}", table.max_min_weight_ratio());

    let before = mutual_information(&stats.joint)?;
    let after = mutual_information(&reweighted_joint(&stats, &table)?)?;
    println!("MI(bias; class): {before:.6} nats -> {after:.2e} after reweighting");

    // the same numbers straight from per-sample labels
    let (mut bias, mut class) = (Vec::new(), Vec::new());
    for (b, y, n) in [(0, 0, 90), (0, 1, 20), (1, 0, 10), (1, 1, 80)] {
        bias.extend(std::iter::repeat_n(b, n));
        class.extend(std::iter::repeat_n(y, n));
    }
    let d = derive_weights(&bias, &class, 2)?;
    println!("per-sample derivation agrees: {}", d.table == table);
    println!(
        "residual class-conditional mismatch {:?}",
        d.residual_mismatch()
    );
    Ok(())
}
