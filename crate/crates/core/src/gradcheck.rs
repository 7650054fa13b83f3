//! Central-difference verification of analytic gradients.
//!
//! The checked scalar is `L = sum_i r_i * y_i` with fixed pseudo-random
//! weights `r_i` in `[0.5, 1.5]`. A plain sum would make ops whose outputs
//! sum to a constant (softmax, normalization) look trivially correct.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// An operation with an explicit vector-Jacobian product.
pub trait Differentiable {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor>;
    /// Gradients of `<grad_output, forward(inputs)>` with respect to each input.
    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>>;
}

/// Any function built on a [`Graph`] is differentiable through the tape.
pub struct GraphOp<F> {
    name: String,
    build: F,
}

impl<F> GraphOp<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    pub fn new(name: impl Into<String>, build: F) -> Self {
        Self {
            name: name.into(),
            build,
        }
    }

    fn run(&self, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = (self.build)(&mut g, &vars)?;
        Ok((g, vars, out))
    }
}

impl<F> Differentiable for GraphOp<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (g, _, out) = self.run(inputs)?;
        Ok(g.value(out).clone())
    }

    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let (g, vars, out) = self.run(inputs)?;
        let grads = g.backward(out, grad_output.data())?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| {
                let data = grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()]);
                Tensor::new(t.shape(), data)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Check at most this many coordinates per input, sampled without
    /// replacement; `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(h: f64, tol: f64) -> Self {
        Self {
            h,
            tol,
            max_coords: None,
            seed: 0x6772_6164,
        }
    }

    pub fn sampled(mut self, max_coords: usize) -> Self {
        self.max_coords = Some(max_coords);
        self
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    /// `max |analytic - cd| / max(1, |analytic|, |cd|)` over checked coordinates.
    pub max_discrepancy: f64,
    /// `(input index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

fn output_weights(t: &Tensor, seed: u64) -> Tensor {
    let mut rng = RngStream::derive(seed, "gradcheck-output-weights");
    Tensor::uniform(t.shape(), 0.5, 1.5, &mut rng)
}

fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn check_finite(op: &dyn Differentiable, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            op: op.name().to_string(),
            detail: format!("{what} = {v}"),
        })
    }
}

pub fn grad_check(op: &dyn Differentiable, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport> {
    grad_check_with(op, inputs, &GradCheckOptions::new(h, tol))
}

pub fn grad_check_with(
    op: &dyn Differentiable,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-5..=1e-2).contains(&opts.h) {
        return Err(Error::config(format!(
            "finite-difference step {} outside [1e-5, 1e-2]",
            opts.h
        )));
    }
    let y = op.forward(inputs)?;
    let r = output_weights(&y, opts.seed);
    let analytic = op.backward(inputs, &r)?;

    let mut coord_rng = RngStream::derive(opts.seed, "gradcheck-coords");
    let mut perturbed: Vec<Tensor> = inputs.to_vec();
    let mut max_discrepancy = 0.0f64;
    let mut worst = (0, 0);
    let mut checked = 0;

    for (i, input) in inputs.iter().enumerate() {
        let mut coords: Vec<usize> = (0..input.numel()).collect();
        if let Some(k) = opts.max_coords {
            if k < coords.len() {
                coord_rng.shuffle(&mut coords);
                coords.truncate(k);
                coords.sort_unstable();
            }
        }
        for &j in &coords {
            let orig = input.data()[j];
            perturbed[i].data_mut()[j] = orig + opts.h;
            let plus = weighted_sum(&op.forward(&perturbed)?, &r);
            perturbed[i].data_mut()[j] = orig - opts.h;
            let minus = weighted_sum(&op.forward(&perturbed)?, &r);
            perturbed[i].data_mut()[j] = orig;

            let cd = (plus - minus) / (2.0 * opts.h);
            let a = analytic[i].data()[j];
            check_finite(op, "central difference", cd)?;
            check_finite(op, "analytic gradient", a)?;
            let d = (a - cd).abs() / 1f64.max(a.abs()).max(cd.abs());
            if d > max_discrepancy {
                max_discrepancy = d;
                worst = (i, j);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        op: op.name().to_string(),
        max_discrepancy,
        worst,
        checked,
        tol: opts.tol,
        passed: max_discrepancy <= opts.tol,
    })
}

#[derive(Clone, Debug)]
pub struct DirectionalReport {
    pub op: String,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_err: f64,
}

/// Compares the analytic directional derivative `<grad L, v>` for a random
/// unit-scale direction `v` over all inputs with its central difference.
pub fn directional_check(op: &dyn Differentiable, inputs: &[Tensor], h: f64, seed: u64) -> Result<DirectionalReport> {
    let y = op.forward(inputs)?;
    let r = output_weights(&y, seed);
    let analytic = op.backward(inputs, &r)?;
    let mut rng = RngStream::derive(seed, "directional");
    let dirs: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::uniform(t.shape(), -1.0, 1.0, &mut rng))
        .collect();
    let jvp: f64 = analytic
        .iter()
        .zip(&dirs)
        .map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let shifted = |sign: f64| -> Result<f64> {
        let moved: Vec<Tensor> = inputs
            .iter()
            .zip(&dirs)
            .map(|(t, d)| {
                let data = t.data().iter().zip(d.data()).map(|(a, b)| a + sign * h * b).collect();
                Tensor::new(t.shape(), data)
            })
            .collect::<Result<_>>()?;
        Ok(weighted_sum(&op.forward(&moved)?, &r))
    };
    let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
    check_finite(op, "directional difference", fd)?;
    check_finite(op, "directional analytic", jvp)?;
    Ok(DirectionalReport {
        op: op.name().to_string(),
        analytic: jvp,
        finite_difference: fd,
        rel_err: (jvp - fd).abs() / 1f64.max(jvp.abs()).max(fd.abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn step_outside_range_is_rejected() {
        let op = GraphOp::new("gelu", |g: &mut Graph, v: &[Var]| Ok(g.gelu(v[0])));
        let x = Tensor::zeros(Shape::new(1, 1, 1, 2));
        assert!(grad_check(&op, std::slice::from_ref(&x), 1e-6, 1e-4).is_err());
        assert!(grad_check(&op, &[x], 0.1, 1e-4).is_err());
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let op = GraphOp::new("blowup", |g: &mut Graph, v: &[Var]| Ok(g.gelu(v[0])));
        let x = Tensor::full(Shape::new(1, 1, 1, 1), f64::NAN);
        match grad_check(&op, &[x], 1e-3, 1e-4) {
            Err(Error::Numeric { op, .. }) => assert_eq!(op, "blowup"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
