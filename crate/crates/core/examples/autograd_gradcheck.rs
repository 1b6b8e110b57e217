//! Builds a small attention-shaped graph, backpropagates, and compares every
//! gradient against central finite differences.

use xray_vit::tensor::Tensor;
use xray_vit::Result;

fn graph(x: &Tensor, w: &Tensor, v: &Tensor) -> Result<Tensor> {
    let attn = x.matmul(w)?.softmax_lastdim();
    Ok(attn.matmul(v)?.gelu().sum())
}

fn main() -> Result<()> {
    let x = Tensor::param((0..12).map(|i| (i as f64 * 0.37).sin()).collect(), &[3, 4])?;
    let w = Tensor::param(
        (0..12).map(|i| (i as f64 * 0.53).cos() * 0.5).collect(),
        &[4, 3],
    )?;
    let v = Tensor::param((0..12).map(|i| 0.1 * i as f64 - 0.6).collect(), &[3, 4])?;

    let loss = graph(&x, &w, &v)?;
    loss.backward()?;
    println!("loss = {:.6}", loss.item());

    let h = 1e-5;
    for (name, t) in [("x", &x), ("w", &w), ("v", &v)] {
        let analytic = t.grad().expect("leaf gradient");
        let mut worst: f64 = 0.0;
        for i in 0..t.numel() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + h;
            let up = graph(&x.detach(), &w.detach(), &v.detach())?.item();
            t.data_mut()[i] = orig - h;
            let down = graph(&x.detach(), &w.detach(), &v.detach())?.item();
            t.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((numeric - analytic[i]).abs() / numeric.abs().max(1e-8));
        }
        println!("{name}: worst relative error {worst:.2e}");
    }
    Ok(())
}
