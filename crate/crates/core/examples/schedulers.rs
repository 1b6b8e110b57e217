//! Feeds a validation-accuracy trace through the plateau scheduler and
//! early stopping, printing the learning rate each epoch.

use xray_vit::optim::{EarlyStopState, PlateauState};
use xray_vit::Result;

fn main() -> Result<()> {
    let trace = [
        0.62, 0.71, 0.78, 0.80, 0.80, 0.79, 0.80, 0.80, 0.81, 0.81, 0.80, 0.81, 0.80, 0.81, 0.81,
    ];
    let mut plateau = PlateauState::default();
    let mut early = EarlyStopState::default();
    let mut lr = 1e-4;
    for (i, &acc) in trace.iter().enumerate() {
        let epoch = i + 1;
        let used = lr;
        lr = plateau.step(acc, lr)?;
        let stop = early.step(acc)?;
        let note = if lr < used { "  lr reduced" } else { "" };
        println!("epoch {epoch:2}  val_acc {acc:.2}  lr {used:.1e}{note}");
        if stop {
            println!("early stop after epoch {epoch}");
            break;
        }
    }
    Ok(())
}
