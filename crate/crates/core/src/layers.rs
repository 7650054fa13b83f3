//! Parameterized building blocks shared by the encoder and decoder.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::ops::{ConvSpec, LAYER_NORM_EPS};
use crate::params::{trunc_normal, Binder, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{Shape, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvLayer {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let weight = store.add(
            format!("{name}.weight"),
            trunc_normal(spec.weight_shape(), INIT_STD, rng),
            true,
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(Shape::new(1, spec.out_channels, 1, 1)),
            false,
        );
        Ok(Self { spec, weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let w = b.var(g, self.weight);
        let bias = b.var(g, self.bias);
        g.conv2d(x, w, bias, self.spec)
    }
}

/// Channel-wise layer norm with affine parameters.
#[derive(Clone, Debug)]
pub struct NormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormLayer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            Tensor::full(Shape::new(1, channels, 1, 1), 1.0),
            false,
        );
        let beta = store.add(
            format!("{name}.beta"),
            Tensor::zeros(Shape::new(1, channels, 1, 1)),
            false,
        );
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let gamma = b.var(g, self.gamma);
        let beta = b.var(g, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}
