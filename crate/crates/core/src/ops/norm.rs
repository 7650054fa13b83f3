//! Layer normalization over the channel axis at every spatial position
//! (the `channels_first` variant used inside ConvNeXt).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Forward result plus the statistics the backward pass reuses.
pub(crate) struct NormForward {
    pub output: Tensor,
    pub xhat: Vec<f64>,
    /// One reciprocal standard deviation per `(n, h, w)`.
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Tensor> {
    Ok(layer_norm_forward(x, gamma, beta, eps)?.output)
}

fn check(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<()> {
    let c = x.shape().c;
    for (axis, len) in [("gamma", gamma.len()), ("beta", beta.len())] {
        if len != c {
            return Err(Error::Dimension {
                op: "layer_norm",
                axis,
                expected: c,
                found: len,
            });
        }
    }
    Ok(())
}

pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<NormForward> {
    check(x, gamma, beta)?;
    let s = x.shape();
    let (c, plane) = (s.c, s.plane());
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    let mut xhat = vec![0.0; xd.len()];
    let mut rstd = vec![0.0; s.n * plane];
    let mut mean = vec![0.0; plane];
    let mut var = vec![0.0; plane];
    let inv_c = 1.0 / c as f64;

    for n in 0..s.n {
        let base = n * c * plane;
        mean.fill(0.0);
        var.fill(0.0);
        for ch in 0..c {
            let xp = &xd[base + ch * plane..base + (ch + 1) * plane];
            for (m, v) in mean.iter_mut().zip(xp) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        for ch in 0..c {
            let xp = &xd[base + ch * plane..base + (ch + 1) * plane];
            for ((acc, v), m) in var.iter_mut().zip(xp).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        let r = &mut rstd[n * plane..(n + 1) * plane];
        for (ri, v) in r.iter_mut().zip(&var) {
            *ri = 1.0 / (v * inv_c + eps).sqrt();
        }
        for ch in 0..c {
            let off = base + ch * plane;
            for p in 0..plane {
                let xh = (xd[off + p] - mean[p]) * r[p];
                xhat[off + p] = xh;
                out[off + p] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok(NormForward {
        output: Tensor::new(s, out)?,
        xhat,
        rstd,
    })
}

/// Returns `(d input, d gamma, d beta)`.
pub(crate) fn layer_norm_backward(
    fwd_xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    shape: crate::tensor::Shape,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (c, plane) = (shape.c, shape.plane());
    let inv_c = 1.0 / c as f64;
    let mut gx = vec![0.0; grad_out.len()];
    let mut gg = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    let mut mean_g = vec![0.0; plane];
    let mut mean_gx = vec![0.0; plane];

    for n in 0..shape.n {
        let base = n * c * plane;
        mean_g.fill(0.0);
        mean_gx.fill(0.0);
        for ch in 0..c {
            let off = base + ch * plane;
            for p in 0..plane {
                let gy = grad_out[off + p];
                let xh = fwd_xhat[off + p];
                gg[ch] += gy * xh;
                gbeta[ch] += gy;
                let gxh = gy * gamma[ch];
                mean_g[p] += gxh;
                mean_gx[p] += gxh * xh;
            }
        }
        let r = &rstd[n * plane..(n + 1) * plane];
        for ch in 0..c {
            let off = base + ch * plane;
            for p in 0..plane {
                let gxh = grad_out[off + p] * gamma[ch];
                gx[off + p] = r[p]
                    * (gxh - mean_g[p] * inv_c - fwd_xhat[off + p] * mean_gx[p] * inv_c);
            }
        }
    }
    (gx, gg, gbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tensor::Shape;

    #[test]
    fn constant_over_channels_normalizes_to_zero() {
        let x = Tensor::from_fn(Shape::new(2, 4, 3, 3), |n, _, h, w| (n + h * 3 + w) as f64);
        let y = layer_norm(&x, &[1.0; 4], &[0.0; 4], DEFAULT_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut rng = RngStream::new(2);
        let x = Tensor::randn(Shape::new(1, 3, 4, 4), 2.0, &mut rng);
        let beta = [0.5, -1.0, 2.0];
        let y = layer_norm(&x, &[0.0; 3], &beta, DEFAULT_EPS).unwrap();
        for c in 0..3 {
            assert!(y.plane(0, c).iter().all(|&v| v == beta[c]));
        }
    }

    #[test]
    fn normalized_channels_have_zero_mean_unit_variance() {
        let mut rng = RngStream::new(3);
        let x = Tensor::randn(Shape::new(1, 16, 2, 2), 3.0, &mut rng);
        let y = layer_norm(&x, &[1.0; 16], &[0.0; 16], 0.0).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                let vals: Vec<f64> = (0..16).map(|c| y.at(0, c, h, w)).collect();
                let m: f64 = vals.iter().sum::<f64>() / 16.0;
                let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 16.0;
                assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_wrong_gamma_length() {
        let x = Tensor::zeros(Shape::new(1, 3, 2, 2));
        assert!(layer_norm(&x, &[1.0; 2], &[0.0; 3], DEFAULT_EPS).is_err());
    }
}
