//! Structural ops: channel concatenation, addition, per-channel scaling.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("concat of an empty list"))?
        .shape();
    let mut c_total = 0;
    for p in parts {
        let s = p.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first.to_string(),
                right: s.to_string(),
            });
        }
        c_total += s.c;
    }
    let out_shape = first.with_channels(c_total);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for p in parts {
            let per = p.shape().c * first.plane();
            out.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::new(out_shape, out)
}

/// Splits a concatenated gradient back into per-part gradients.
pub(crate) fn concat_backward(parts: &[Shape], grad_out: &[f64]) -> Vec<Vec<f64>> {
    let n = parts[0].n;
    let plane = parts[0].plane();
    let mut grads: Vec<Vec<f64>> = parts.iter().map(|s| Vec::with_capacity(s.numel())).collect();
    let mut off = 0;
    for _ in 0..n {
        for (g, s) in grads.iter_mut().zip(parts) {
            let len = s.c * plane;
            g.extend_from_slice(&grad_out[off..off + len]);
            off += len;
        }
    }
    grads
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "add",
            left: a.shape().to_string(),
            right: b.shape().to_string(),
        });
    }
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
}

/// Multiplies channel `c` by `scale[c]`.
pub fn channel_scale(x: &Tensor, scale: &[f64]) -> Result<Tensor> {
    let s = x.shape();
    if scale.len() != s.c {
        return Err(Error::Dimension {
            op: "channel_scale",
            axis: "C",
            expected: s.c,
            found: scale.len(),
        });
    }
    let plane = s.plane();
    let out = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * scale[(i / plane) % s.c])
        .collect();
    Tensor::new(s, out)
}

/// Returns `(d x, d scale)`.
pub(crate) fn channel_scale_backward(x: &Tensor, scale: &[f64], grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let plane = s.plane();
    let mut gs = vec![0.0; s.c];
    let gx = grad_out
        .iter()
        .zip(x.data())
        .enumerate()
        .map(|(i, (g, v))| {
            let c = (i / plane) % s.c;
            gs[c] += g * v;
            g * scale[c]
        })
        .collect();
    (gx, gs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_interleaves_per_sample() {
        let a = Tensor::from_fn(Shape::new(2, 1, 1, 2), |n, _, _, w| (n * 10 + w) as f64);
        let b = Tensor::from_fn(Shape::new(2, 2, 1, 2), |n, c, _, w| (100 + n * 10 + c * 2 + w) as f64);
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 1, 2));
        assert_eq!(
            y.data(),
            &[0.0, 1.0, 100.0, 101.0, 102.0, 103.0, 10.0, 11.0, 110.0, 111.0, 112.0, 113.0]
        );
        let back = concat_backward(&[a.shape(), b.shape()], y.data());
        assert_eq!(back[0], a.data());
        assert_eq!(back[1], b.data());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::zeros(Shape::new(1, 1, 4, 4));
        assert!(concat_channels(&[&a, &b]).is_err());
    }
}
