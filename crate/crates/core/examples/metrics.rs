//! Confusion counts, per-class scores and averages for a batch of
//! predictions. COVID is the positive class; the threshold is 0.5.

use xray_vit::train::{compute_metrics, confusion_from_predictions, f1_score};
use xray_vit::Result;

fn main() -> Result<()> {
    let probs = [0.91, 0.12, 0.66, 0.40, 0.55, 0.08, 0.97, 0.51, 0.30, 0.77];
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let report = compute_metrics(confusion_from_predictions(&probs, &labels)?)?;
    print!("{}", report.to_text());

    // the reported precision and recall imply the reported F1
    println!(
        "f1(0.9534, 0.9384) = {:.4}",
        f1_score(0.9534, 0.9384).unwrap_or(0.0)
    );
    Ok(())
}
