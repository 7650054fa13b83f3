use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Softmax over channels at each pixel, max-subtracted.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.c < 2 {
        return Err(Error::Dimension {
            op: "softmax_channels",
            axis: "C",
            expected: 2,
            found: s.c,
        });
    }
    let plane = s.plane();
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for c in 0..s.c {
                m = m.max(xd[base + c * plane + p]);
            }
            let mut z = 0.0;
            for c in 0..s.c {
                let e = (xd[base + c * plane + p] - m).exp();
                out[base + c * plane + p] = e;
                z += e;
            }
            for c in 0..s.c {
                out[base + c * plane + p] /= z;
            }
        }
    }
    Tensor::new(s, out)
}

pub(crate) fn softmax_backward(y: &[f64], shape: Shape, grad_out: &[f64]) -> Vec<f64> {
    let plane = shape.plane();
    let mut gx = vec![0.0; y.len()];
    for n in 0..shape.n {
        let base = n * shape.c * plane;
        for p in 0..plane {
            let mut dot = 0.0;
            for c in 0..shape.c {
                let i = base + c * plane + p;
                dot += grad_out[i] * y[i];
            }
            for c in 0..shape.c {
                let i = base + c * plane + p;
                gx[i] = y[i] * (grad_out[i] - dot);
            }
        }
    }
    gx
}
