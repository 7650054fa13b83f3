use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Cell `i` of `bins` covers rows `floor(i*len/bins) .. ceil((i+1)*len/bins)`.
fn bounds(len: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins)
        .map(|i| ((i * len) / bins, ((i + 1) * len).div_ceil(bins)))
        .collect()
}

fn check_bins(shape: Shape, bins: usize) -> Result<()> {
    if bins == 0 || bins > shape.h || bins > shape.w {
        return Err(Error::config(format!(
            "adaptive pool with {bins} bins needs 1 <= bins <= min(H, W) = {}",
            shape.h.min(shape.w)
        )));
    }
    Ok(())
}

pub fn adaptive_avg_pool(x: &Tensor, bins: usize) -> Result<Tensor> {
    let s = x.shape();
    check_bins(s, bins)?;
    let rows = bounds(s.h, bins);
    let cols = bounds(s.w, bins);
    let ys = s.with_spatial(bins, bins);
    let mut out = Vec::with_capacity(ys.numel());
    for nc in 0..s.n * s.c {
        let p = &x.data()[nc * s.plane()..(nc + 1) * s.plane()];
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                let mut acc = 0.0;
                for r in r0..r1 {
                    acc += p[r * s.w + c0..r * s.w + c1].iter().sum::<f64>();
                }
                out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
            }
        }
    }
    Tensor::new(ys, out)
}

pub(crate) fn adaptive_avg_pool_backward(input: Shape, bins: usize, grad_out: &[f64]) -> Vec<f64> {
    let rows = bounds(input.h, bins);
    let cols = bounds(input.w, bins);
    let mut gx = vec![0.0; input.numel()];
    for nc in 0..input.n * input.c {
        let gp = &mut gx[nc * input.plane()..(nc + 1) * input.plane()];
        let go = &grad_out[nc * bins * bins..(nc + 1) * bins * bins];
        for (i, &(r0, r1)) in rows.iter().enumerate() {
            for (j, &(c0, c1)) in cols.iter().enumerate() {
                let g = go[i * bins + j] / ((r1 - r0) * (c1 - c0)) as f64;
                for r in r0..r1 {
                    for v in &mut gp[r * input.w + c0..r * input.w + c1] {
                        *v += g;
                    }
                }
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
    fn full_bins_is_identity() {
        let mut rng = RngStream::new(4);
        let x = Tensor::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
        assert_eq!(adaptive_avg_pool(&x, 3).unwrap().data(), x.data());
    }

    #[test]
    fn one_bin_is_global_mean() {
        let x = Tensor::from_fn(Shape::new(1, 2, 4, 4), |_, c, h, w| (c * 100 + h * 4 + w) as f64);
        let y = adaptive_avg_pool(&x, 1).unwrap();
        assert_eq!(y.data(), &[7.5, 107.5]);
    }

    #[test]
    fn ramp_quadrants() {
        // 4x4 ramp 0..15: quadrants {0,1,4,5}, {2,3,6,7}, {8,9,12,13}, {10,11,14,15}.
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (h * 4 + w) as f64);
        let y = adaptive_avg_pool(&x, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn overlapping_cells_for_non_divisible_size() {
        // len 5, bins 3: rows [0,2), [1,4), [3,5).
        assert_eq!(bounds(5, 3), vec![(0, 2), (1, 4), (3, 5)]);
    }

    #[test]
    fn too_many_bins_is_config_error() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 4));
        assert!(matches!(adaptive_avg_pool(&x, 3), Err(Error::Config(_))));
    }
}
