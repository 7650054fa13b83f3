//! Bilinear resampling with half-pixel centers (`align_corners = false`).

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Per-output-index source taps `(i0, i1, frac)` along one axis.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("bilinear_resize target size must be >= 1"));
    }
    let s = x.shape();
    if s.h == out_h && s.w == out_w {
        return Ok(x.clone());
    }
    let ys = s.with_spatial(out_h, out_w);
    let ty = taps(s.h, out_h);
    let tx = taps(s.w, out_w);
    let xd = x.data();
    let mut out = Vec::with_capacity(ys.numel());
    for nc in 0..s.n * s.c {
        let p = &xd[nc * s.plane()..(nc + 1) * s.plane()];
        for &(y0, y1, fy) in &ty {
            let (r0, r1) = (&p[y0 * s.w..], &p[y1 * s.w..]);
            for &(x0, x1, fx) in &tx {
                let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                let bot = (1.0 - fx) * r1[x0] + fx * r1[x1];
                out.push((1.0 - fy) * top + fy * bot);
            }
        }
    }
    Tensor::new(ys, out)
}

/// Scatters `grad_out` back through the same interpolation weights.
pub(crate) fn bilinear_resize_backward(input: Shape, out_h: usize, out_w: usize, grad_out: &[f64]) -> Vec<f64> {
    if input.h == out_h && input.w == out_w {
        return grad_out.to_vec();
    }
    let ty = taps(input.h, out_h);
    let tx = taps(input.w, out_w);
    let mut gx = vec![0.0; input.numel()];
    let out_plane = out_h * out_w;
    for nc in 0..input.n * input.c {
        let gp = &mut gx[nc * input.plane()..(nc + 1) * input.plane()];
        let go = &grad_out[nc * out_plane..(nc + 1) * out_plane];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = go[oy * out_w + ox];
                gp[y0 * input.w + x0] += (1.0 - fy) * (1.0 - fx) * g;
                gp[y0 * input.w + x1] += (1.0 - fy) * fx * g;
                gp[y1 * input.w + x0] += fy * (1.0 - fx) * g;
                gp[y1 * input.w + x1] += fy * fx * g;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Shape::new(1, 2, 3, 5), 2.5);
        let y = bilinear_resize(&x, 7, 4).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn same_size_is_exact_identity() {
        let mut rng = RngStream::new(9);
        let x = Tensor::randn(Shape::new(2, 3, 5, 6), 1.0, &mut rng);
        assert_eq!(bilinear_resize(&x, 5, 6).unwrap(), x);
    }

    #[test]
    fn two_by_two_ramp_to_four_by_four() {
        // Source coordinates (d + 0.5) / 2 - 0.5 clamped to [0, 1] are
        // 0, 0.25, 0.75, 1 on both axes; the input is the plane 2*row + col,
        // so every output is 2*cy + cx exactly.
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_resize(&x, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = [
            0.0, 0.25, 0.75, 1.0,
            0.5, 0.75, 1.25, 1.5,
            1.5, 1.75, 2.25, 2.5,
            2.0, 2.25, 2.75, 3.0,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn rejects_zero_target() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(bilinear_resize(&x, 0, 2).is_err());
    }
}
