use rayon::prelude::*;

use super::{Mask, Matrix, Scalar};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

// Below this many multiply-adds a matmul runs on the calling thread.
const PARALLEL_WORK: usize = 1 << 15;

/// `a · bᵀ`; the shared kernel behind every product. Both operands are read
/// row-wise so the inner loop is contiguous.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "matmul",
            format!("{:?} · {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let (m, n, k) = (a.rows(), b.rows(), a.cols());
    let mut out = Matrix::zeros(m, n);
    if n == 0 {
        return Ok(out);
    }
    let fill_row = |(i, out_row): (usize, &mut [T])| {
        let ar = a.row(i);
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = T::from_f64(dot(ar, b.row(j)));
        }
    };
    if m * n * k >= PARALLEL_WORK {
        out.data_mut()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(fill_row);
    } else {
        out.data_mut().chunks_mut(n).enumerate().for_each(fill_row);
    }
    out.ensure_finite("matmul")
}

/// f64 dot product with four interleaved accumulators combined as
/// `(s0 + s1) + (s2 + s3)`, then the tail. The order is fixed, so results do
/// not depend on threading.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut s = [0.0f64; 4];
    let split = n - n % 4;
    for (ca, cb) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        for l in 0..4 {
            s[l] += ca[l].as_f64() * cb[l].as_f64();
        }
    }
    let mut acc = (s[0] + s[1]) + (s[2] + s[3]);
    for t in split..n {
        acc += a[t].as_f64() * b[t].as_f64();
    }
    acc
}

/// `C = A · B` with `C[i][j] = Σ_t A[i][t]·B[t][j]`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("{:?} · {:?}", a.shape(), b.shape()),
        ));
    }
    matmul_nt(a, &b.transpose())
}

/// `aᵀ · b`.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("{:?}ᵀ · {:?}", a.shape(), b.shape()),
        ));
    }
    matmul_nt(&a.transpose(), &b.transpose())
}

/// Saved operands of a matmul.
#[derive(Debug)]
pub struct MatmulTape<T: Scalar> {
    a: Matrix<T>,
    b: Matrix<T>,
}

impl<T: Scalar> MatmulTape<T> {
    pub fn forward(a: Matrix<T>, b: Matrix<T>) -> Result<(Matrix<T>, Self)> {
        let c = matmul(&a, &b)?;
        Ok((c, Self { a, b }))
    }

    /// `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
    pub fn backward(self, dc: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        if dc.shape() != (self.a.rows(), self.b.cols()) {
            return Err(Error::shape("matmul backward", format!("dC {:?}", dc.shape())));
        }
        let da = matmul_nt(dc, &self.b)?;
        let db = matmul_tn(&self.a, dc)?;
        Ok((da, db))
    }
}

#[derive(Debug)]
pub struct LayerNormTape<T: Scalar> {
    xhat: Matrix<T>,
    rstd: Vec<f64>,
    gain: Vec<T>,
}

/// Row-wise layer normalization with a fixed affine transform.
pub fn layer_norm<T: Scalar>(
    x: &Matrix<T>,
    gain: &[T],
    bias: &[T],
    eps: f64,
) -> Result<(Matrix<T>, LayerNormTape<T>)> {
    let d = x.cols();
    if d == 0 || gain.len() != d || bias.len() != d {
        return Err(Error::shape(
            "layer_norm",
            format!("d={d}, gain={}, bias={}", gain.len(), bias.len()),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::Domain(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let mut y = Matrix::zeros(x.rows(), d);
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|v| {
                let c = v.as_f64() - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd.push(rs);
        let (yr, xr) = (y.row_mut(r), xhat.row_mut(r));
        for j in 0..d {
            let xh = (row[j].as_f64() - mean) * rs;
            xr[j] = T::from_f64(xh);
            yr[j] = T::from_f64(xh * gain[j].as_f64() + bias[j].as_f64());
        }
    }
    let y = y.ensure_finite("layer_norm")?;
    Ok((
        y,
        LayerNormTape {
            xhat,
            rstd,
            gain: gain.to_vec(),
        },
    ))
}

impl<T: Scalar> LayerNormTape<T> {
    /// Gradient with respect to the input only; gain and bias are frozen.
    pub fn backward(self, dy: &Matrix<T>) -> Result<Matrix<T>> {
        if dy.shape() != self.xhat.shape() {
            return Err(Error::shape("layer_norm backward", format!("dy {:?}", dy.shape())));
        }
        let d = self.xhat.cols();
        let mut dx = Matrix::zeros(dy.rows(), d);
        let mut g = vec![0.0f64; d];
        for r in 0..dy.rows() {
            let (dyr, xr) = (dy.row(r), self.xhat.row(r));
            let mut mean_g = 0.0;
            let mut mean_gx = 0.0;
            for j in 0..d {
                g[j] = dyr[j].as_f64() * self.gain[j].as_f64();
                mean_g += g[j];
                mean_gx += g[j] * xr[j].as_f64();
            }
            mean_g /= d as f64;
            mean_gx /= d as f64;
            let rs = self.rstd[r];
            for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = T::from_f64(rs * (g[j] - mean_g - xr[j].as_f64() * mean_gx));
            }
        }
        dx.ensure_finite("layer_norm backward")
    }
}

#[derive(Debug)]
pub struct SoftmaxTape<T: Scalar> {
    probs: Matrix<T>,
}

/// Row-wise softmax over the allowed entries; masked entries are exactly 0.
pub fn masked_softmax<T: Scalar>(
    scores: &Matrix<T>,
    mask: &Mask,
) -> Result<(Matrix<T>, SoftmaxTape<T>)> {
    if (mask.rows(), mask.cols()) != scores.shape() {
        return Err(Error::shape(
            "masked_softmax",
            format!("scores {:?}, mask {}x{}", scores.shape(), mask.rows(), mask.cols()),
        ));
    }
    let mut probs = Matrix::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        let (s, m) = (scores.row(r), mask.row(r));
        let max = s
            .iter()
            .zip(m)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::FullyMaskedRow(r));
        }
        let mut exps = vec![0.0f64; s.len()];
        let mut total = 0.0;
        for j in 0..s.len() {
            if m[j] {
                exps[j] = (s[j].as_f64() - max).exp();
                total += exps[j];
            }
        }
        for (p, e) in probs.row_mut(r).iter_mut().zip(&exps) {
            *p = T::from_f64(e / total);
        }
    }
    let probs = probs.ensure_finite("masked_softmax")?;
    Ok((probs.clone(), SoftmaxTape { probs }))
}

impl<T: Scalar> SoftmaxTape<T> {
    pub fn probs(&self) -> &Matrix<T> {
        &self.probs
    }

    /// `dS = P ⊙ (dP − rowsum(P ⊙ dP))`.
    pub fn backward(self, dp: &Matrix<T>) -> Result<Matrix<T>> {
        if dp.shape() != self.probs.shape() {
            return Err(Error::shape("masked_softmax backward", format!("dP {:?}", dp.shape())));
        }
        let mut ds = Matrix::zeros(dp.rows(), dp.cols());
        for r in 0..dp.rows() {
            let (p, g) = (self.probs.row(r), dp.row(r));
            let dot: f64 = p.iter().zip(g).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            for (j, out) in ds.row_mut(r).iter_mut().enumerate() {
                *out = T::from_f64(p[j].as_f64() * (g[j].as_f64() - dot));
            }
        }
        ds.ensure_finite("masked_softmax backward")
    }
}

#[derive(Debug, Clone)]
pub struct CrossEntropy<T: Scalar> {
    /// Sum of per-position negative log-likelihoods, in nats.
    pub loss_sum: f64,
    pub valid_count: usize,
    /// Valid positions whose argmax logit equals the label.
    pub correct: usize,
    /// Gradient of `loss_sum` with respect to the logits.
    pub dlogits: Matrix<T>,
}

/// Summed cross-entropy over rows whose label is `Some`; `None` rows are ignored
/// and receive an all-zero gradient row.
pub fn cross_entropy_masked<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[Option<u32>],
) -> Result<CrossEntropy<T>> {
    if labels.len() != logits.rows() {
        return Err(Error::shape(
            "cross_entropy_masked",
            format!("{} labels for {} rows", labels.len(), logits.rows()),
        ));
    }
    let vocab = logits.cols();
    let mut dlogits = Matrix::zeros(logits.rows(), vocab);
    let mut loss_sum = 0.0f64;
    let mut valid_count = 0;
    let mut correct = 0;
    for (r, label) in labels.iter().enumerate() {
        let Some(label) = *label else { continue };
        let label = label as usize;
        if label >= vocab {
            return Err(Error::OutOfRange {
                what: "label",
                value: label,
                limit: vocab,
            });
        }
        let row = logits.row(r);
        let (mut argmax, mut max) = (0, f64::NEG_INFINITY);
        for (j, v) in row.iter().enumerate() {
            if v.as_f64() > max {
                max = v.as_f64();
                argmax = j;
            }
        }
        let sum_exp: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss_sum += lse - row[label].as_f64();
        valid_count += 1;
        if argmax == label {
            correct += 1;
        }
        let grad = dlogits.row_mut(r);
        for (j, g) in grad.iter_mut().enumerate() {
            let p = (row[j].as_f64() - lse).exp();
            *g = T::from_f64(if j == label { p - 1.0 } else { p });
        }
    }
    if valid_count == 0 {
        return Err(Error::NoValidTargets);
    }
    if !loss_sum.is_finite() {
        return Err(Error::NonFinite("cross_entropy_masked"));
    }
    Ok(CrossEntropy {
        loss_sum,
        valid_count,
        correct,
        dlogits: dlogits.ensure_finite("cross_entropy_masked")?,
    })
}
