//! Adam versus RectifiedAdam on the same gradient stream. The first four
//! RAdam steps are plain momentum; afterwards the rectification term climbs
//! toward 1 and the two updates converge.

use xray_vit::optim::{rectification, rho, OptimState, OptimizerKind};
use xray_vit::Result;

fn main() -> Result<()> {
    let lr = 1e-3;
    let mut adam = OptimState::new(OptimizerKind::Adam, lr, &[1]);
    let mut radam = OptimState::new(OptimizerKind::RectifiedAdam, lr, &[1]);

    println!(
        "{:>6} {:>9} {:>12} {:>12} {:>8}",
        "t", "rho_t", "adam", "radam", "r_t"
    );
    for t in 1..=10_000u64 {
        let g = 1.0 + 0.5 * (t as f64 * 0.7).sin();
        let a = adam.updates(&[&[g]])?[0][0];
        let b = radam.updates(&[&[g]])?[0][0];
        if t <= 6 || [10, 100, 1000, 10_000].contains(&t) {
            let r = rectification(t, 0.999).map_or("-".to_string(), |r| format!("{r:.4}"));
            println!("{t:>6} {:>9.3} {a:>12.3e} {b:>12.3e} {r:>8}", rho(t, 0.999));
        }
    }
    Ok(())
}
