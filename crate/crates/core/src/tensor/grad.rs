//! Vector-Jacobian products for every recorded operation.

use super::ops::{matmul_dims, permute_data, std_normal_cdf, std_normal_pdf, BCE_CLAMP};
use super::{Op, Tensor};

/// Gradients with respect to each input of `node`, in `Op::inputs` order.
/// `None` marks inputs that do not track gradients.
pub(super) fn vjp(node: &Tensor, upstream: &[f64]) -> Vec<Option<Vec<f64>>> {
    let want = |t: &Tensor| t.requires_grad();
    match node.op() {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let d = matmul_dims(a.shape(), b.shape()).expect("validated in forward");
            let (ad, bd) = (a.data(), b.data());
            let da = want(a).then(|| {
                let mut da = vec![0.0; ad.len()];
                for bi in 0..d.batch {
                    let boff = if d.b_batched { bi * d.k * d.n } else { 0 };
                    let g = &upstream[bi * d.m * d.n..(bi + 1) * d.m * d.n];
                    let out = &mut da[bi * d.m * d.k..(bi + 1) * d.m * d.k];
                    // dA[i,p] += sum_j dC[i,j] * B[p,j]
                    for i in 0..d.m {
                        for p in 0..d.k {
                            let brow = &bd[boff + p * d.n..boff + (p + 1) * d.n];
                            out[i * d.k + p] += g[i * d.n..(i + 1) * d.n]
                                .iter()
                                .zip(brow)
                                .map(|(x, y)| x * y)
                                .sum::<f64>();
                        }
                    }
                }
                da
            });
            let db = want(b).then(|| {
                let mut db = vec![0.0; bd.len()];
                for bi in 0..d.batch {
                    let aoff = bi * d.m * d.k;
                    let g = &upstream[bi * d.m * d.n..(bi + 1) * d.m * d.n];
                    let boff = if d.b_batched { bi * d.k * d.n } else { 0 };
                    let out = &mut db[boff..boff + d.k * d.n];
                    // dB[p,j] += sum_i A[i,p] * dC[i,j]
                    for i in 0..d.m {
                        let grow = &g[i * d.n..(i + 1) * d.n];
                        for p in 0..d.k {
                            let aip = ad[aoff + i * d.k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, gv) in out[p * d.n..(p + 1) * d.n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                }
                db
            });
            vec![da, db]
        }
        Op::Add(a, b) => vec![
            want(a).then(|| upstream.to_vec()),
            want(b).then(|| upstream.to_vec()),
        ],
        Op::AddTrailing(x, b) => {
            let db = want(b).then(|| {
                let block = b.numel();
                let mut db = vec![0.0; block];
                for (i, g) in upstream.iter().enumerate() {
                    db[i % block] += g;
                }
                db
            });
            vec![want(x).then(|| upstream.to_vec()), db]
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (a.data(), b.data());
            vec![
                want(a).then(|| upstream.iter().zip(bd.iter()).map(|(g, y)| g * y).collect()),
                want(b).then(|| upstream.iter().zip(ad.iter()).map(|(g, x)| g * x).collect()),
            ]
        }
        Op::Scale(_, c) => vec![Some(upstream.iter().map(|g| g * c).collect())],
        Op::Reshape(_) => vec![Some(upstream.to_vec())],
        Op::Permute(x, axes) => {
            let mut inverse = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
            vec![Some(permute_data(upstream, &out_shape, &inverse))]
        }
        Op::NarrowLast { input, start } => {
            let last = *input.shape().last().unwrap();
            let len = *node.shape().last().unwrap();
            let mut dx = vec![0.0; input.numel()];
            for (row, g) in dx.chunks_mut(last).zip(upstream.chunks(len)) {
                row[*start..start + len].copy_from_slice(g);
            }
            vec![Some(dx)]
        }
        Op::Softmax(_) => {
            let y = node.data();
            let last = *node.shape().last().unwrap();
            let mut dx = vec![0.0; y.len()];
            for ((dxr, yr), gr) in dx
                .chunks_mut(last)
                .zip(y.chunks(last))
                .zip(upstream.chunks(last))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..last {
                    dxr[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(dx)]
        }
        Op::LayerNorm {
            input,
            gamma,
            beta,
            normalized,
            inv_std,
        } => {
            let d = gamma.numel();
            let g = gamma.data();
            let mut dgamma = vec![0.0; d];
            let mut dbeta = vec![0.0; d];
            let mut dx = vec![0.0; normalized.len()];
            for (r, &is) in inv_std.iter().enumerate() {
                let xh = &normalized[r * d..(r + 1) * d];
                let gy = &upstream[r * d..(r + 1) * d];
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                for j in 0..d {
                    dgamma[j] += gy[j] * xh[j];
                    dbeta[j] += gy[j];
                    let dxh = gy[j] * g[j];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[j];
                }
                let n = d as f64;
                for j in 0..d {
                    let dxh = gy[j] * g[j];
                    dx[r * d + j] = is / n * (n * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                }
            }
            vec![
                want(input).then_some(dx),
                want(gamma).then_some(dgamma),
                want(beta).then_some(dbeta),
            ]
        }
        Op::Gelu(x) => {
            let xd = x.data();
            vec![Some(
                upstream
                    .iter()
                    .zip(xd.iter())
                    .map(|(g, &v)| g * (std_normal_cdf(v) + v * std_normal_pdf(v)))
                    .collect(),
            )]
        }
        Op::Sigmoid(_) => {
            let y = node.data();
            vec![Some(
                upstream
                    .iter()
                    .zip(y.iter())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect(),
            )]
        }
        Op::PrependToken(x, token) => {
            let d = token.numel();
            let seq = node.shape()[1];
            let mut dtok = vec![0.0; d];
            let mut dx = Vec::with_capacity(x.numel());
            for sample in upstream.chunks(seq * d) {
                dtok.iter_mut().zip(&sample[..d]).for_each(|(a, b)| *a += b);
                dx.extend_from_slice(&sample[d..]);
            }
            vec![want(x).then_some(dx), want(token).then_some(dtok)]
        }
        Op::SelectToken(x, index) => {
            let (s, d) = (x.shape()[1], x.shape()[2]);
            let mut dx = vec![0.0; x.numel()];
            for (bi, g) in upstream.chunks(d).enumerate() {
                let off = (bi * s + index) * d;
                dx[off..off + d].copy_from_slice(g);
            }
            vec![Some(dx)]
        }
        Op::Sum(x) => vec![Some(vec![upstream[0]; x.numel()])],
        Op::Mean(x) => vec![Some(vec![upstream[0] / x.numel() as f64; x.numel()])],
        Op::Bce { prob, targets } => {
            let n = targets.len() as f64;
            let pd = prob.data();
            vec![Some(
                pd.iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        if p < BCE_CLAMP || p > 1.0 - BCE_CLAMP {
                            0.0
                        } else {
                            upstream[0] * (-(y / p) + (1.0 - y) / (1.0 - p)) / n
                        }
                    })
                    .collect(),
            )]
        }
    }
}
