//! Grouped 2-D cross-correlation (no kernel flip).
//!
//! Every output element accumulates bias first and then input terms in
//! fixed `(c, kh, kw)` order, so results do not depend on how callers
//! split work across threads.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Geometry of a convolution, independent of its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }

    /// One filter per channel.
    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self::new(channels, channels, kernel).with_groups(channels)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("convolution needs at least one channel"));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(Error::config("convolution kernel and stride must be >= 1"));
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::config(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        )
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "C",
                expected: self.in_channels,
                found: input.c,
            });
        }
        let padded_h = input.h + 2 * self.padding;
        let padded_w = input.w + 2 * self.padding;
        if padded_h < self.kernel_h {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "H",
                expected: self.kernel_h,
                found: padded_h,
            });
        }
        if padded_w < self.kernel_w {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "W",
                expected: self.kernel_w,
                found: padded_w,
            });
        }
        Ok(Shape::new(
            input.n,
            self.out_channels,
            (padded_h - self.kernel_h) / self.stride + 1,
            (padded_w - self.kernel_w) / self.stride + 1,
        ))
    }

    /// Output columns `lo..hi` whose input column `ox*stride + k - padding` is in bounds.
    fn valid_range(&self, k: usize, input: usize, output: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > k { (p - k).div_ceil(s).min(output) } else { 0 };
        let hi = if input + p > k {
            ((input - 1 + p - k) / s + 1).min(output)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Weights and bias of a convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub spec: ConvSpec,
    /// `(C_out, C_in / groups, kH, kW)`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(spec: ConvSpec, weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if weight.shape() != spec.weight_shape() {
            return Err(Error::ShapeMismatch {
                op: "conv2d weight",
                left: spec.weight_shape().to_string(),
                right: weight.shape().to_string(),
            });
        }
        if bias.len() != spec.out_channels {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "bias",
                expected: spec.out_channels,
                found: bias.len(),
            });
        }
        Ok(Self { spec, weight, bias })
    }
}

pub struct ConvGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d_forward(x, &p.spec, p.weight.data(), &p.bias)
}

/// Depthwise convolution: `groups == C_in == C_out`.
pub fn depthwise_conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    if !p.spec.is_depthwise() {
        return Err(Error::config(format!(
            "depthwise convolution requires groups == C_in == C_out (got groups {}, C_in {}, C_out {})",
            p.spec.groups, p.spec.in_channels, p.spec.out_channels
        )));
    }
    conv2d(x, p)
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &[f64],
    bias: &[f64],
) -> Result<Tensor> {
    let xs = x.shape();
    let ys = spec.output_shape(xs)?;
    if weight.len() != spec.weight_shape().numel() || bias.len() != spec.out_channels {
        return Err(Error::Dimension {
            op: "conv2d",
            axis: "weight",
            expected: spec.weight_shape().numel(),
            found: weight.len(),
        });
    }
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (in_plane, out_plane) = (xs.plane(), ys.plane());
    let xd = x.data();
    let mut out = vec![0.0; ys.numel()];
    let cols: Vec<(usize, usize)> = (0..kw).map(|k| spec.valid_range(k, xs.w, ys.w)).collect();
    let rows: Vec<(usize, usize)> = (0..kh).map(|k| spec.valid_range(k, xs.h, ys.h)).collect();

    for n in 0..xs.n {
        for co in 0..spec.out_channels {
            let g = co / cout_g;
            let yoff = (n * spec.out_channels + co) * out_plane;
            let y = &mut out[yoff..yoff + out_plane];
            y.fill(bias[co]);
            for cl in 0..cin_g {
                let ci = g * cin_g + cl;
                let xoff = (n * xs.c + ci) * in_plane;
                let xp = &xd[xoff..xoff + in_plane];
                let wbase = (co * cin_g + cl) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = rows[ky];
                    for kx in 0..kw {
                        let wv = weight[wbase + ky * kw + kx];
                        let (ox_lo, ox_hi) = cols[kx];
                        if ox_lo == ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - pad;
                            let yrow = &mut y[oy * ys.w..(oy + 1) * ys.w];
                            let xrow = &xp[iy * xs.w..(iy + 1) * xs.w];
                            if s == 1 {
                                let ix0 = ox_lo + kx - pad;
                                let span = ox_hi - ox_lo;
                                for (yv, xv) in yrow[ox_lo..ox_hi]
                                    .iter_mut()
                                    .zip(&xrow[ix0..ix0 + span])
                                {
                                    *yv += wv * xv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    yrow[ox] += wv * xrow[ox * s + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(ys, out)
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &[f64],
    grad_out: &[f64],
) -> Result<ConvGrads> {
    let xs = x.shape();
    let ys = spec.output_shape(xs)?;
    let (kh, kw, s, pad) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (in_plane, out_plane) = (xs.plane(), ys.plane());
    let xd = x.data();
    let mut gx = vec![0.0; xs.numel()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; spec.out_channels];
    let cols: Vec<(usize, usize)> = (0..kw).map(|k| spec.valid_range(k, xs.w, ys.w)).collect();
    let rows: Vec<(usize, usize)> = (0..kh).map(|k| spec.valid_range(k, xs.h, ys.h)).collect();

    for n in 0..xs.n {
        for co in 0..spec.out_channels {
            let g = co / cout_g;
            let yoff = (n * spec.out_channels + co) * out_plane;
            let gy = &grad_out[yoff..yoff + out_plane];
            gb[co] += gy.iter().sum::<f64>();
            for cl in 0..cin_g {
                let ci = g * cin_g + cl;
                let xoff = (n * xs.c + ci) * in_plane;
                let xp = &xd[xoff..xoff + in_plane];
                let gxp = &mut gx[xoff..xoff + in_plane];
                let wbase = (co * cin_g + cl) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = rows[ky];
                    for kx in 0..kw {
                        let wv = weight[wbase + ky * kw + kx];
                        let (ox_lo, ox_hi) = cols[kx];
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - pad;
                            let gyrow = &gy[oy * ys.w..(oy + 1) * ys.w];
                            let xrow = &xp[iy * xs.w..(iy + 1) * xs.w];
                            let gxrow = &mut gxp[iy * xs.w..(iy + 1) * xs.w];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * s + kx - pad;
                                acc += gyrow[ox] * xrow[ix];
                                gxrow[ix] += wv * gyrow[ox];
                            }
                        }
                        gw[wbase + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn params(spec: ConvSpec, weight: Tensor, bias: Vec<f64>) -> ConvParams {
        ConvParams::new(spec, weight, bias).unwrap()
    }

    /// Direct evaluation of the cross-correlation sum with explicit bounds checks.
    fn naive_conv(x: &Tensor, p: &ConvParams) -> Tensor {
        let sp = p.spec;
        let ys = sp.output_shape(x.shape()).unwrap();
        let cin_g = sp.in_channels / sp.groups;
        let cout_g = sp.out_channels / sp.groups;
        Tensor::from_fn(ys, |n, co, oy, ox| {
            let g = co / cout_g;
            let mut acc = p.bias[co];
            for cl in 0..cin_g {
                for ky in 0..sp.kernel_h {
                    for kx in 0..sp.kernel_w {
                        let iy = (oy * sp.stride + ky) as isize - sp.padding as isize;
                        let ix = (ox * sp.stride + kx) as isize - sp.padding as isize;
                        if iy < 0 || ix < 0 || iy >= x.shape().h as isize || ix >= x.shape().w as isize {
                            continue;
                        }
                        acc += p.weight.at(co, cl, ky, kx)
                            * x.at(n, g * cin_g + cl, iy as usize, ix as usize);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn ones_kernel_on_ones_image_gives_fours() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let p = params(
            ConvSpec::new(1, 1, 2),
            Tensor::full(Shape::new(1, 1, 2, 2), 1.0),
            vec![0.0],
        );
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = RngStream::new(5);
        let x = Tensor::randn(Shape::new(2, 1, 4, 6), 1.0, &mut rng);
        let p = params(
            ConvSpec::new(1, 1, 1),
            Tensor::full(Shape::new(1, 1, 1, 1), 1.0),
            vec![0.0],
        );
        assert_eq!(conv2d(&x, &p).unwrap().data(), x.data());
    }

    #[test]
    fn output_shape_formula() {
        let spec = ConvSpec::new(3, 8, 4).with_stride(4);
        assert_eq!(
            spec.output_shape(Shape::new(2, 3, 64, 64)).unwrap(),
            Shape::new(2, 8, 16, 16)
        );
        let spec = ConvSpec::new(2, 2, 3).with_stride(2).with_padding(1);
        assert_eq!(
            spec.output_shape(Shape::new(1, 2, 5, 7)).unwrap(),
            Shape::new(1, 2, 3, 4)
        );
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let spec = ConvSpec::new(3, 4, 3);
        let err = spec.output_shape(Shape::new(1, 2, 8, 8)).unwrap_err();
        assert!(err.to_string().contains("axis C"), "{err}");
        let err = spec.output_shape(Shape::new(1, 3, 2, 8)).unwrap_err();
        assert!(err.to_string().contains("axis H"), "{err}");
    }

    #[test]
    fn depthwise_rejects_dense_groups() {
        let spec = ConvSpec::new(2, 2, 3);
        let p = params(spec, Tensor::zeros(spec.weight_shape()), vec![0.0; 2]);
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        assert!(matches!(depthwise_conv2d(&x, &p), Err(Error::Config(_))));
    }

    #[test]
    fn groups_must_divide_channels() {
        assert!(ConvSpec::new(4, 6, 1).with_groups(4).validate().is_err());
        assert!(ConvSpec::new(4, 8, 1).with_groups(4).validate().is_ok());
    }

    #[test]
    fn matches_naive_sum_across_geometries() {
        let mut rng = RngStream::new(11);
        let cases = [
            ConvSpec::new(2, 3, 3).with_padding(1),
            ConvSpec::new(3, 4, 2).with_stride(2),
            ConvSpec::new(4, 4, 7).with_padding(3).with_groups(4),
            ConvSpec::new(4, 6, 3).with_stride(2).with_padding(2).with_groups(2),
            ConvSpec::new(3, 2, 4).with_stride(4),
        ];
        for spec in cases {
            let x = Tensor::randn(Shape::new(2, spec.in_channels, 9, 8), 1.0, &mut rng);
            let w = Tensor::randn(spec.weight_shape(), 1.0, &mut rng);
            let b: Vec<f64> = (0..spec.out_channels).map(|_| rng.normal()).collect();
            let p = params(spec, w, b);
            let fast = conv2d(&x, &p).unwrap();
            let slow = naive_conv(&x, &p);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn kernel_larger_than_map() {
        let mut rng = RngStream::new(12);
        let spec = ConvSpec::depthwise(3, 7).with_padding(3);
        for (h, w) in [(1, 1), (2, 2), (2, 3)] {
            let x = Tensor::randn(Shape::new(1, 3, h, w), 1.0, &mut rng);
            let p = params(spec, Tensor::randn(spec.weight_shape(), 1.0, &mut rng), vec![0.5; 3]);
            let fast = conv2d(&x, &p).unwrap();
            assert!(fast.max_abs_diff(&naive_conv(&x, &p)) < 1e-12, "{h}x{w}");
            let gy = vec![1.0; fast.numel()];
            let g = conv2d_backward(&x, &spec, p.weight.data(), &gy).unwrap();
            assert_eq!(g.input.len(), x.numel());
        }
    }
}
