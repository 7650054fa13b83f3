//! Reverse-mode tape over the kernels in [`crate::ops`].
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! visits every node after all of its consumers.

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv(ConvSpec),
    LayerNorm { xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu,
    Resize,
    AvgPool(usize),
    Softmax,
    Concat,
    Add,
    ChannelScale,
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(&delta) {
                *a += d;
            }
        }
        None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Var {
        self.nodes.push(Node { value, op, inputs });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, Vec::new())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        if self.shape(weight) != spec.weight_shape() {
            return Err(Error::ShapeMismatch {
                op: "conv2d weight",
                left: spec.weight_shape().to_string(),
                right: self.shape(weight).to_string(),
            });
        }
        let y = ops::conv2d_forward(
            self.value(x),
            &spec,
            self.value(weight).data(),
            self.value(bias).data(),
        )?;
        Ok(self.push(y, Op::Conv(spec), vec![x, weight, bias]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let f = ops::layer_norm_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        )?;
        Ok(self.push(
            f.output,
            Op::LayerNorm {
                xhat: f.xhat,
                rstd: f.rstd,
            },
            vec![x, gamma, beta],
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = ops::gelu(self.value(x));
        self.push(y, Op::Gelu, vec![x])
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = ops::bilinear_resize(self.value(x), out_h, out_w)?;
        Ok(self.push(y, Op::Resize, vec![x]))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, bins: usize) -> Result<Var> {
        let y = ops::adaptive_avg_pool(self.value(x), bins)?;
        Ok(self.push(y, Op::AvgPool(bins), vec![x]))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_channels(self.value(x))?;
        Ok(self.push(y, Op::Softmax, vec![x]))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&tensors)?;
        Ok(self.push(y, Op::Concat, parts.to_vec()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add, vec![a, b]))
    }

    pub fn channel_scale(&mut self, x: Var, scale: Var) -> Result<Var> {
        let y = ops::channel_scale(self.value(x), self.value(scale).data())?;
        Ok(self.push(y, Op::ChannelScale, vec![x, scale]))
    }

    /// Back-propagates `seed` (the gradient of some scalar with respect to
    /// `output`) through every node that `output` depends on.
    pub fn backward(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        if seed.len() != self.value(output).numel() {
            return Err(Error::Dimension {
                op: "backward",
                axis: "seed",
                expected: self.value(output).numel(),
                found: seed.len(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.to_vec());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let inputs = &node.inputs;
            let contributions: Vec<Vec<f64>> = match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv(spec) => {
                    let g = ops::conv2d_backward(
                        self.value(inputs[0]),
                        spec,
                        self.value(inputs[1]).data(),
                        &gy,
                    )?;
                    vec![g.input, g.weight, g.bias]
                }
                Op::LayerNorm { xhat, rstd } => {
                    let (gx, gg, gb) = ops::layer_norm_backward(
                        xhat,
                        rstd,
                        self.value(inputs[1]).data(),
                        node.value.shape(),
                        &gy,
                    );
                    vec![gx, gg, gb]
                }
                Op::Gelu => vec![ops::gelu_backward(self.value(inputs[0]).data(), &gy)],
                Op::Resize => {
                    let out = node.value.shape();
                    vec![ops::bilinear_resize_backward(
                        self.shape(inputs[0]),
                        out.h,
                        out.w,
                        &gy,
                    )]
                }
                Op::AvgPool(bins) => vec![ops::adaptive_avg_pool_backward(
                    self.shape(inputs[0]),
                    *bins,
                    &gy,
                )],
                Op::Softmax => vec![ops::softmax_backward(
                    node.value.data(),
                    node.value.shape(),
                    &gy,
                )],
                Op::Concat => {
                    let shapes: Vec<Shape> = inputs.iter().map(|&v| self.shape(v)).collect();
                    ops::concat_backward(&shapes, &gy)
                }
                Op::Add => vec![gy.clone(), gy],
                Op::ChannelScale => {
                    let (gx, gs) = ops::channel_scale_backward(
                        self.value(inputs[0]),
                        self.value(inputs[1]).data(),
                        &gy,
                    );
                    vec![gx, gs]
                }
            };
            for (&input, g) in inputs.iter().zip(contributions) {
                accumulate(&mut grads[input.0], g);
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 2, 2), 1.5));
        let y = g.add(x, x).unwrap();
        let grads = g.backward(y, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn unused_branches_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(Shape::new(1, 2, 2, 2), 0.5));
        let unused = g.gelu(x);
        let s = g.input(Tensor::vector(vec![2.0, 3.0]).unwrap());
        let y = g.channel_scale(x, s).unwrap();
        let grads = g.backward(y, &[1.0; 8]).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get(x).unwrap(), &[2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        assert_eq!(grads.get(s).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn seed_length_checked() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert!(g.backward(x, &[1.0]).is_err());
    }
}
