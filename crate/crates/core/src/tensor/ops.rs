use super::{Op, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `out[b] += a[b] · b[b]` for row-major `(m,k)·(k,n)` blocks.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// Layout of a supported matmul: `(batch, m, k, n, a_batched, b_batched)`.
pub(crate) struct MatMulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    let err = || Error::shape("matmul", a, b);
    let dims = match (a, b) {
        ([m, k], [k2, n]) if k == k2 => MatMulDims {
            batch: 1,
            m: *m,
            k: *k,
            n: *n,
            a_batched: false,
            b_batched: false,
        },
        ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => MatMulDims {
            batch: *ba,
            m: *m,
            k: *k,
            n: *n,
            a_batched: true,
            b_batched: true,
        },
        ([ba, m, k], [k2, n]) if k == k2 => MatMulDims {
            batch: *ba,
            m: *m,
            k: *k,
            n: *n,
            a_batched: true,
            b_batched: false,
        },
        _ => return Err(err()),
    };
    Ok(dims)
}

impl Tensor {
    /// Matrix product. Supports `(m,k)·(k,n)`, batched `(b,m,k)·(b,k,n)`, and
    /// `(b,m,k)·(k,n)` with the right operand shared across the batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let d = matmul_dims(self.shape(), other.shape())?;
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; d.batch * d.m * d.n];
        for bi in 0..d.batch {
            let ab = if d.a_batched { bi * d.m * d.k } else { 0 };
            let bb = if d.b_batched { bi * d.k * d.n } else { 0 };
            gemm_acc(
                &a[ab..ab + d.m * d.k],
                &b[bb..bb + d.k * d.n],
                &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n],
                d.m,
                d.k,
                d.n,
            );
        }
        let shape = if d.a_batched {
            vec![d.batch, d.m, d.n]
        } else {
            vec![d.m, d.n]
        };
        drop((a, b));
        Ok(Tensor::from_op(
            out,
            shape,
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add", self.shape(), other.shape()));
        }
        let out = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::Add(self.clone(), other.clone()),
        ))
    }

    /// Adds `other` to every trailing block of `self` whose shape equals
    /// `other`'s shape (bias over the last dimension, position table over the
    /// last two).
    pub fn add_trailing(&self, other: &Tensor) -> Result<Tensor> {
        let (xs, bs) = (self.shape(), other.shape());
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(Error::shape("add_trailing", xs, bs));
        }
        let b = other.data();
        let block = b.len();
        let out = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % block])
            .collect();
        drop(b);
        Ok(Tensor::from_op(
            out,
            xs.to_vec(),
            Op::AddTrailing(self.clone(), other.clone()),
        ))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::shape("mul", self.shape(), other.shape()));
        }
        let out = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let out = self.data().iter().map(|x| x * factor).collect();
        Tensor::from_op(out, self.shape().to_vec(), Op::Scale(self.clone(), factor))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::InvalidArgument(format!(
                "permutation {axes:?} is not valid for shape {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = permute_data(&self.data(), shape, axes);
        Ok(Tensor::from_op(
            out,
            out_shape,
            Op::Permute(self.clone(), axes.to_vec()),
        ))
    }

    /// Slice `[start, start + len)` of the last dimension.
    pub fn narrow_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        let last = *shape.last().expect("tensors have rank >= 1");
        if len == 0 || start + len > last {
            return Err(Error::InvalidArgument(format!(
                "narrow [{start}, {}) out of range for last extent {last}",
                start + len
            )));
        }
        let out: Vec<f64> = self
            .data()
            .chunks(last)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = len;
        Ok(Tensor::from_op(
            out,
            out_shape,
            Op::NarrowLast {
                input: self.clone(),
                start,
            },
        ))
    }

    /// Softmax over the last dimension, computed with max subtraction.
    pub fn softmax_lastdim(&self) -> Tensor {
        let last = *self.shape().last().unwrap();
        let mut out = self.to_vec();
        for row in out.chunks_mut(last) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        Tensor::from_op(out, self.shape().to_vec(), Op::Softmax(self.clone()))
    }

    /// Standardizes each last-dimension slice, then applies `gamma`/`beta`.
    pub fn layernorm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().unwrap();
        if gamma.shape() != [d] {
            return Err(Error::shape("layernorm", self.shape(), gamma.shape()));
        }
        if beta.shape() != [d] {
            return Err(Error::shape("layernorm", self.shape(), beta.shape()));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "layernorm eps must be positive, got {eps}"
            )));
        }
        let x = self.data();
        let (g, b) = (gamma.data(), beta.data());
        let rows = x.len() / d;
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        drop((x, g, b));
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::LayerNorm {
                input: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                normalized,
                inv_std,
            },
        ))
    }

    /// `x · Φ(x)` with the exact Gaussian CDF.
    pub fn gelu(&self) -> Tensor {
        let out = self.data().iter().map(|&x| x * std_normal_cdf(x)).collect();
        Tensor::from_op(out, self.shape().to_vec(), Op::Gelu(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor {
        let out = self.data().iter().map(|&x| sigmoid(x)).collect();
        Tensor::from_op(out, self.shape().to_vec(), Op::Sigmoid(self.clone()))
    }

    /// Prepends `token` (shape `[d]`) to every sequence of a `(b, n, d)`
    /// tensor, giving `(b, n + 1, d)`.
    pub fn prepend_token(&self, token: &Tensor) -> Result<Tensor> {
        let (b, n, d) = match *self.shape() {
            [b, n, d] if token.shape() == [d] => (b, n, d),
            _ => return Err(Error::shape("prepend_token", self.shape(), token.shape())),
        };
        let x = self.data();
        let t = token.data();
        let mut out = Vec::with_capacity(b * (n + 1) * d);
        for s in x.chunks(n * d) {
            out.extend_from_slice(&t);
            out.extend_from_slice(s);
        }
        drop((x, t));
        Ok(Tensor::from_op(
            out,
            vec![b, n + 1, d],
            Op::PrependToken(self.clone(), token.clone()),
        ))
    }

    /// Row `index` of every sequence in a `(b, s, d)` tensor, giving `(b, d)`.
    pub fn select_token(&self, index: usize) -> Result<Tensor> {
        let (b, s, d) = match *self.shape() {
            [b, s, d] if index < s => (b, s, d),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "cannot select token {index} from shape {:?}",
                    self.shape()
                )))
            }
        };
        let x = self.data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            let off = (bi * s + index) * d;
            out.extend_from_slice(&x[off..off + d]);
        }
        drop(x);
        Ok(Tensor::from_op(
            out,
            vec![b, d],
            Op::SelectToken(self.clone(), index),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        Tensor::from_op(vec![total], vec![1], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![total / self.numel() as f64],
            vec![1],
            Op::Mean(self.clone()),
        )
    }
}

/// Mean binary cross-entropy of probabilities against `{0, 1}` targets.
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`; the gradient is
/// zero where the clamp is active.
pub fn bce_loss(prob: &Tensor, targets: &[f64]) -> Result<Tensor> {
    if prob.numel() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probabilities but {} targets",
            prob.numel(),
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let total: f64 = prob
        .data()
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(Tensor::from_op(
        vec![total / n],
        vec![1],
        Op::Bce {
            prob: prob.clone(),
            targets: targets.to_vec(),
        },
    ))
}

pub(crate) fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
