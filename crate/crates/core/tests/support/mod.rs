//! Oracles and the gradient suite shared by the integration and acceptance tests.
#![allow(dead_code)]

use tamperloc::dataforge::{procedural_corpus, LabeledImage};
use tamperloc::decoder::{PRISTINE, TAMPERED};
use tamperloc::gradcheck::{
    grad_check, grad_check_with, Differentiable, GradCheckOptions, GradCheckReport, GraphOp,
};
use tamperloc::graph::{Graph, Var};
use tamperloc::image::Mask;
use tamperloc::loss::{
    combined_loss, cross_entropy_loss, focal_loss, lovasz_loss, pixel_loss, LossConfig, LossKind,
    PixelBatch,
};
use tamperloc::ops::{ConvSpec, LAYER_NORM_EPS};
use tamperloc::params::Binder;
use tamperloc::trainer::tamper_scores;
use tamperloc::{NetConfig, Result, RngStream, Shape, TamperNet, Tensor};

// ---------------------------------------------------------------- loss oracles

/// Jaccard error of the mispredicted set `m` given ground-truth positives,
/// counted directly: `|M| / |P u M|`.
pub fn jaccard_error(in_m: &[bool], positive: &[bool]) -> f64 {
    let m = in_m.iter().filter(|&&b| b).count();
    let union = in_m.iter().zip(positive).filter(|(&a, &b)| a || b).count();
    if union == 0 {
        0.0
    } else {
        m as f64 / union as f64
    }
}

/// Lovasz extension of the Jaccard error at the non-negative margin vector,
/// integrated exactly over its level sets: `sum_k (t_k - t_{k-1}) F({m >= t_k})`.
/// Without positives the loss is defined as 0.
pub fn lovasz_extension_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let positive: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    if !positive.iter().any(|&p| p) {
        return 0.0;
    }
    let margins: Vec<f64> = scores
        .iter()
        .zip(&positive)
        .map(|(s, &p)| (1.0 - s * if p { 1.0 } else { -1.0 }).max(0.0))
        .collect();
    let mut levels: Vec<f64> = margins.iter().copied().filter(|&m| m > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut total = 0.0;
    let mut prev = 0.0;
    for &t in &levels {
        let set: Vec<bool> = margins.iter().map(|&m| m >= t).collect();
        total += (t - prev) * jaccard_error(&set, &positive);
        prev = t;
    }
    total
}

/// Mean binary cross-entropy written out directly.
pub fn bce_oracle(p: &[f64], y: &[u8], eps: f64) -> f64 {
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / p.len() as f64
}

// ------------------------------------------------------------- metric oracles

/// `(tp, fp, fn, tn)` by a coordinate loop.
pub fn naive_confusion(pred: &Mask, gt: &Mask) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fne, mut tn) = (0, 0, 0, 0);
    for y in 0..gt.height {
        for x in 0..gt.width {
            match (pred.get(x, y), gt.get(x, y)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => tn += 1,
            }
        }
    }
    (tp, fp, fne, tn)
}

/// Area under the ROC polyline obtained by sweeping the threshold over every
/// distinct score (predict positive when `p >= t`), integrated by trapezoids.
pub fn trapezoid_auc(probs: &[f64], gt: &[u8]) -> f64 {
    let pos = gt.iter().filter(|&&g| g != 0).count() as f64;
    let neg = gt.len() as f64 - pos;
    let mut thresholds: Vec<f64> = probs.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let tp = probs.iter().zip(gt).filter(|(&p, &g)| p >= t && g != 0).count() as f64;
        let fp = probs.iter().zip(gt).filter(|(&p, &g)| p >= t && g == 0).count() as f64;
        points.push((fp / neg, tp / pos));
    }
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

// ------------------------------------------------------------ optimizer oracle

/// Textbook Adam on `f(x) = x^2` with decoupled decay, one scalar.
pub fn adam_scalar_oracle(x0: f64, lr: f64, wd: f64, steps: usize) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    for t in 1..=steps {
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t as i32));
        let vhat = v / (1.0 - b2.powi(t as i32));
        x *= 1.0 - lr * wd;
        x -= lr * mhat / (vhat.sqrt() + eps);
    }
    x
}

// -------------------------------------------------------------- data helpers

pub fn desk_corpus(n: usize, seed: u64) -> Vec<LabeledImage> {
    procedural_corpus(n, 64, seed)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, s)| LabeledImage {
            name: format!("{i:06}"),
            image: s.image,
            mask: s.mask,
        })
        .collect()
}

pub fn random_mask(w: usize, h: usize, p: f64, rng: &mut RngStream) -> Mask {
    Mask::from_bits(w, h, (0..w * h).map(|_| u8::from(rng.bernoulli(p))).collect()).unwrap()
}

// ------------------------------------------------------------ gradient suite

pub const OP_STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;

fn rand(shape: Shape, rng: &mut RngStream) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn conv_case(name: &str, spec: ConvSpec, h: usize, w: usize, rng: &mut RngStream) -> Result<GradCheckReport> {
    let op = GraphOp::new(name, move |g: &mut Graph, v: &[Var]| g.conv2d(v[0], v[1], v[2], spec));
    let x = rand(Shape::new(2, spec.in_channels, h, w), rng);
    let wt = rand(spec.weight_shape(), rng);
    let b = rand(Shape::new(1, spec.out_channels, 1, 1), rng);
    grad_check(&op, &[x, wt, b], OP_STEP, OP_TOL)
}

/// Scalar loss on a flat score vector, differentiated with respect to it.
struct ScoreLoss {
    name: &'static str,
    labels: Vec<u8>,
    cfg: LossConfig,
    which: LossWhich,
}

#[derive(Clone, Copy)]
enum LossWhich {
    FocalOnP,
    CrossEntropyOnP,
    LovaszOnS,
    CombinedOnS,
}

impl ScoreLoss {
    fn batch(&self, x: &Tensor) -> Result<PixelBatch> {
        match self.which {
            LossWhich::FocalOnP | LossWhich::CrossEntropyOnP => {
                PixelBatch::from_probabilities(x.data().to_vec(), &self.labels)
            }
            _ => PixelBatch::from_scores(x.data().to_vec(), &self.labels),
        }
    }

    fn eval(&self, x: &Tensor) -> Result<(f64, Vec<f64>)> {
        let b = self.batch(x)?;
        Ok(match self.which {
            LossWhich::FocalOnP => {
                let l = focal_loss(&b, &self.cfg)?;
                (l.value, l.grad)
            }
            LossWhich::CrossEntropyOnP => {
                let l = cross_entropy_loss(&b, self.cfg.eps)?;
                (l.value, l.grad)
            }
            LossWhich::LovaszOnS => {
                let l = lovasz_loss(&b)?;
                (l.value, l.grad)
            }
            LossWhich::CombinedOnS => {
                let l = combined_loss(&b, &self.cfg)?;
                (l.value, l.grad_s)
            }
        })
    }
}

impl Differentiable for ScoreLoss {
    fn name(&self) -> &str {
        self.name
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        Ok(Tensor::full(Shape::new(1, 1, 1, 1), self.eval(&inputs[0])?.0))
    }

    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let scale = grad_output.data()[0];
        let grad = self.eval(&inputs[0])?.1.iter().map(|g| g * scale).collect();
        Ok(vec![Tensor::new(inputs[0].shape(), grad)?])
    }
}

/// Scores whose margins avoid the hinge and each other by a safe gap.
fn generic_scores(n: usize, labels: &[u8], rng: &mut RngStream) -> Vec<f64> {
    let mut s: Vec<f64> = Vec::with_capacity(n);
    while s.len() < n {
        let v = rng.uniform_range(-2.0, 2.0);
        let i = s.len();
        let y = if labels[i] != 0 { 1.0 } else { -1.0 };
        let m = 1.0 - v * y;
        let clash = m.abs() < 1e-3
            || s.iter().enumerate().any(|(j, &o)| {
                let yj = if labels[j] != 0 { 1.0 } else { -1.0 };
                ((1.0 - o * yj) - m).abs() < 1e-3
            });
        if !clash {
            s.push(v);
        }
    }
    s
}

/// Whole network from image and parameters to logits, or to the training
/// loss when `loss` is set.
pub struct NetworkOp {
    net: TamperNet,
    mask: Mask,
    loss: Option<LossKind>,
}

impl NetworkOp {
    fn run(&self, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let mut b = Binder::from_vars(self.net.params(), &vars[1..])?;
        let out = self.net.forward(&mut g, &mut b, vars[0])?;
        Ok((g, vars, out.logits))
    }

    fn loss_of(&self, logits: &Tensor, kind: LossKind) -> Result<(f64, Vec<f64>)> {
        let b = PixelBatch::from_scores(tamper_scores(logits), &self.mask.data)?;
        let l = pixel_loss(&b, &LossConfig::default(), kind)?;
        Ok((l.value, l.grad))
    }
}

impl Differentiable for NetworkOp {
    fn name(&self) -> &str {
        match self.loss {
            None => "network logits",
            Some(LossKind::Combined) => "network + combined loss",
            Some(LossKind::CrossEntropy) => "network + cross-entropy",
        }
    }

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let (g, _, out) = self.run(inputs)?;
        match self.loss {
            None => Ok(g.value(out).clone()),
            Some(kind) => Ok(Tensor::full(Shape::new(1, 1, 1, 1), self.loss_of(g.value(out), kind)?.0)),
        }
    }

    fn backward(&self, inputs: &[Tensor], grad_output: &Tensor) -> Result<Vec<Tensor>> {
        let (g, vars, out) = self.run(inputs)?;
        let seed = match self.loss {
            None => grad_output.data().to_vec(),
            Some(kind) => {
                let scale = grad_output.data()[0];
                let (_, ds) = self.loss_of(g.value(out), kind)?;
                let plane = ds.len();
                let mut seed = vec![0.0; 2 * plane];
                for (i, d) in ds.iter().enumerate() {
                    seed[TAMPERED * plane + i] = scale * d;
                    seed[PRISTINE * plane + i] = -scale * d;
                }
                seed
            }
        };
        let grads = g.backward(out, &seed)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| {
                let d = grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
                Tensor::new(t.shape(), d)
            })
            .collect()
    }
}

/// Desk network at a generic parameter point: layer scales and norm
/// affines are drawn away from their initial values so that every branch
/// carries gradient of order one.
pub fn generic_desk_network(seed: u64, loss: Option<LossKind>) -> (NetworkOp, Vec<Tensor>) {
    let mut net = TamperNet::new(&NetConfig::desk(), seed).unwrap();
    let mut rng = RngStream::derive(seed, "generic-point");
    for p in net.params_mut().iter_mut() {
        if p.name.ends_with("layer_scale") || p.name.ends_with("gamma") {
            for v in p.value.data_mut() {
                *v = rng.uniform_range(0.5, 1.5);
            }
        } else if p.name.ends_with("beta") || p.name.ends_with("bias") {
            for v in p.value.data_mut() {
                *v = rng.uniform_range(-0.2, 0.2);
            }
        } else {
            for v in p.value.data_mut() {
                *v *= 10.0;
            }
        }
    }
    let image = Tensor::randn(Shape::new(1, 3, 64, 64), 1.0, &mut rng);
    let mask = random_mask(64, 64, 0.2, &mut rng);
    let mut inputs = vec![image];
    inputs.extend(net.params().iter().map(|p| p.value.clone()));
    (NetworkOp { net, mask, loss }, inputs)
}

/// Every differentiable op and the whole desk network, with their tolerance.
pub fn gradient_suite() -> Result<Vec<GradCheckReport>> {
    let mut rng = RngStream::new(0x5eed);
    let mut reports = Vec::new();

    reports.push(conv_case("conv 3x3 pad 1", ConvSpec::new(3, 4, 3).with_padding(1), 6, 5, &mut rng)?);
    reports.push(conv_case("conv 4x4 stride 4", ConvSpec::new(3, 4, 4).with_stride(4), 8, 8, &mut rng)?);
    reports.push(conv_case("conv 2x2 stride 2", ConvSpec::new(4, 6, 2).with_stride(2), 6, 4, &mut rng)?);
    reports.push(conv_case("conv 1x1", ConvSpec::new(5, 3, 1), 4, 3, &mut rng)?);
    reports.push(conv_case("depthwise 7x7", ConvSpec::depthwise(3, 7).with_padding(3), 5, 6, &mut rng)?);
    reports.push(conv_case(
        "grouped conv",
        ConvSpec::new(4, 6, 3).with_padding(1).with_stride(2).with_groups(2),
        7,
        6,
        &mut rng,
    )?);

    let op = GraphOp::new("layer norm", |g: &mut Graph, v: &[Var]| {
        g.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)
    });
    let inputs = [
        rand(Shape::new(2, 5, 3, 4), &mut rng),
        rand(Shape::new(1, 5, 1, 1), &mut rng),
        rand(Shape::new(1, 5, 1, 1), &mut rng),
    ];
    reports.push(grad_check(&op, &inputs, OP_STEP, OP_TOL)?);

    let op = GraphOp::new("gelu", |g: &mut Graph, v: &[Var]| Ok(g.gelu(v[0])));
    let x = Tensor::randn(Shape::new(1, 3, 4, 5), 2.0, &mut rng);
    reports.push(grad_check(&op, &[x], OP_STEP, OP_TOL)?);

    for (name, (h, w), (oh, ow)) in [
        ("resize x2", (3, 4), (6, 8)),
        ("resize down", (8, 6), (3, 4)),
        ("resize uneven", (3, 5), (7, 4)),
    ] {
        let op = GraphOp::new(name, move |g: &mut Graph, v: &[Var]| g.resize(v[0], oh, ow));
        reports.push(grad_check(&op, &[rand(Shape::new(1, 2, h, w), &mut rng)], OP_STEP, OP_TOL)?);
    }

    for bins in [1, 2, 3] {
        let op = GraphOp::new(format!("adaptive pool {bins}"), move |g: &mut Graph, v: &[Var]| {
            g.adaptive_avg_pool(v[0], bins)
        });
        reports.push(grad_check(&op, &[rand(Shape::new(2, 2, 5, 7), &mut rng)], OP_STEP, OP_TOL)?);
    }

    let op = GraphOp::new("softmax", |g: &mut Graph, v: &[Var]| g.softmax(v[0]));
    reports.push(grad_check(&op, &[rand(Shape::new(2, 3, 3, 3), &mut rng)], OP_STEP, OP_TOL)?);

    let op = GraphOp::new("concat", |g: &mut Graph, v: &[Var]| g.concat(&[v[0], v[1], v[2]]));
    let inputs = [
        rand(Shape::new(2, 1, 3, 3), &mut rng),
        rand(Shape::new(2, 3, 3, 3), &mut rng),
        rand(Shape::new(2, 2, 3, 3), &mut rng),
    ];
    reports.push(grad_check(&op, &inputs, OP_STEP, OP_TOL)?);

    let op = GraphOp::new("add", |g: &mut Graph, v: &[Var]| g.add(v[0], v[1]));
    let inputs = [rand(Shape::new(1, 2, 3, 4), &mut rng), rand(Shape::new(1, 2, 3, 4), &mut rng)];
    reports.push(grad_check(&op, &inputs, OP_STEP, OP_TOL)?);

    let op = GraphOp::new("channel scale", |g: &mut Graph, v: &[Var]| g.channel_scale(v[0], v[1]));
    let inputs = [rand(Shape::new(2, 3, 2, 3), &mut rng), rand(Shape::new(1, 3, 1, 1), &mut rng)];
    reports.push(grad_check(&op, &inputs, OP_STEP, OP_TOL)?);

    let n = 40;
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
    let cfg = LossConfig::default();
    let probs = Tensor::from_fn(Shape::new(1, 1, 1, n), |_, _, _, _| rng.uniform_range(0.05, 0.95));
    let scores = Tensor::new(Shape::new(1, 1, 1, n), generic_scores(n, &labels, &mut rng))?;
    for (name, which, x) in [
        ("focal loss", LossWhich::FocalOnP, &probs),
        ("cross-entropy", LossWhich::CrossEntropyOnP, &probs),
        ("lovasz hinge", LossWhich::LovaszOnS, &scores),
        ("combined loss", LossWhich::CombinedOnS, &scores),
    ] {
        let op = ScoreLoss {
            name,
            labels: labels.clone(),
            cfg: cfg.clone(),
            which,
        };
        reports.push(grad_check(&op, std::slice::from_ref(x), OP_STEP, OP_TOL)?);
    }

    for loss in [None, Some(LossKind::Combined)] {
        let (op, inputs) = generic_desk_network(3, loss);
        let opts = GradCheckOptions::new(OP_STEP, NET_TOL).sampled(3);
        reports.push(grad_check_with(&op, &inputs, &opts)?);
    }
    Ok(reports)
}
