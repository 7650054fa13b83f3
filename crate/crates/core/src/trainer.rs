//! AdamW with warmup + poly decay, and the deterministic training loop.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataforge::{augment, AugmentConfig, ForgerySample, LabeledImage, PasteTransform, Provenance};
use crate::decoder::{PRISTINE, TAMPERED};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::{image_tensor, Mask};
use crate::loss::{pixel_loss, LossConfig, LossKind, PixelBatch};
use crate::metrics::{confusion, f1_iou, binarize, DEFAULT_THRESHOLD};
use crate::model::TamperNet;
use crate::params::{Binder, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_iters: usize,
    /// Warmup starts at `warmup_ratio * base_lr`.
    pub warmup_ratio: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub poly_power: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Intermediate checkpoint period in iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Training-set F1 is measured every this many iterations (and at the end).
    pub log_every: usize,
    pub loss: LossKind,
    pub loss_cfg: LossConfig,
    /// Augmentation applied to every drawn sample, if any.
    pub augment: Option<AugmentConfig>,
    /// Hold out a fixed tenth of the data for a final validation F1.
    pub holdout: bool,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            base_lr: 1e-4,
            warmup_iters: 1500,
            warmup_ratio: 0.01,
            max_iters: 160_000,
            batch_size: 4,
            poly_power: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.05,
            grad_clip: None,
            seed: 0,
            checkpoint_every: 0,
            log_every: 100,
            loss: LossKind::Combined,
            loss_cfg: LossConfig::default(),
            augment: Some(AugmentConfig::full()),
            holdout: false,
        }
    }

    /// Small overfitting-scale schedule for CPU runs.
    pub fn desk() -> Self {
        Self {
            base_lr: 2e-3,
            warmup_iters: 50,
            max_iters: 1000,
            log_every: 50,
            augment: None,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.warmup_iters >= self.max_iters {
            return Err(Error::config(format!(
                "warmup_iters ({}) must be below max_iters ({})",
                self.warmup_iters, self.max_iters
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::config(format!("warmup_ratio {} outside [0, 1]", self.warmup_ratio)));
        }
        if !(self.poly_power > 0.0) {
            return Err(Error::config("poly_power must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("adam eps must be positive and weight decay non-negative"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("grad_clip must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be at least 1"));
        }
        self.loss_cfg.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// Learning rate for iteration `t`: linear warmup from
/// `warmup_ratio * base_lr`, then poly decay reaching 0 at `max_iters`.
pub fn lr_at(t: usize, cfg: &TrainConfig) -> f64 {
    if t < cfg.warmup_iters {
        let frac = t as f64 / cfg.warmup_iters as f64;
        return cfg.base_lr * (cfg.warmup_ratio + (1.0 - cfg.warmup_ratio) * frac);
    }
    if t >= cfg.max_iters {
        return 0.0;
    }
    let progress = (t - cfg.warmup_iters) as f64 / (cfg.max_iters - cfg.warmup_iters) as f64;
    cfg.base_lr * (1.0 - progress).powf(cfg.poly_power)
}

/// Decoupled-weight-decay Adam over a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn from_config(store: &ParamStore, cfg: &TrainConfig) -> Self {
        Self::new(store, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Gradients are checked before anything changes, so a
    /// rejected step leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Dimension {
                op: "adamw",
                axis: "params",
                expected: store.len(),
                found: grads.len(),
            });
        }
        for (p, g) in store.iter().zip(grads) {
            if g.len() != p.value.numel() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    left: format!("{} {}", p.name, p.value.shape()),
                    right: format!("gradient of {} values", g.len()),
                });
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    op: "adamw".into(),
                    detail: format!("gradient of {} contains {bad}", p.name),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let shrink = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in store.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let decay = p.decay && self.weight_decay != 0.0;
            for (((x, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                if decay {
                    *x *= shrink;
                }
                *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Signed tamper scores `l_tampered - l_pristine` of a `(1, 2, H, W)` logit map.
pub fn tamper_scores(logits: &Tensor) -> Vec<f64> {
    logits
        .plane(0, TAMPERED)
        .iter()
        .zip(logits.plane(0, PRISTINE))
        .map(|(t, p)| t - p)
        .collect()
}

/// Loss of one image and, optionally, the parameter gradients scaled by `weight`.
fn sample_pass(
    net: &TamperNet,
    image: &Tensor,
    mask: &Mask,
    cfg: &TrainConfig,
    weight: Option<f64>,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let mut g = Graph::new();
    let mut b = Binder::new(net.params());
    let x = g.input(image.clone());
    let out = net.forward(&mut g, &mut b, x)?;
    let logits = g.value(out.logits);
    let batch = PixelBatch::from_scores(tamper_scores(logits), &mask.data)?;
    let loss = pixel_loss(&batch, &cfg.loss_cfg, cfg.loss)?;
    let Some(weight) = weight else {
        return Ok((loss.value, None));
    };
    let plane = batch.len();
    let mut seed = vec![0.0; 2 * plane];
    for (i, ds) in loss.grad.iter().enumerate() {
        seed[TAMPERED * plane + i] = weight * ds;
        seed[PRISTINE * plane + i] = -weight * ds;
    }
    let mut grads = g.backward(out.logits, &seed)?;
    Ok((loss.value, Some(b.gradients(&mut grads))))
}

/// A training pair ready for the network.
#[derive(Clone, Debug)]
struct Prepared {
    image: Tensor,
    mask: Mask,
}

fn prepare(s: &LabeledImage) -> Prepared {
    Prepared {
        image: image_tensor(&s.image),
        mask: s.mask.clone(),
    }
}

fn augmented(s: &LabeledImage, cfg: &AugmentConfig, rng: &mut RngStream) -> Result<Prepared> {
    let sample = ForgerySample {
        image: s.image.clone(),
        mask: s.mask.clone(),
        provenance: Provenance {
            host_id: s.name.clone(),
            donor_id: String::new(),
            paste: PasteTransform { x: 0, y: 0, scale: 1.0, width: 0, height: 0 },
            augmentations: Vec::new(),
        },
    };
    let out = augment(&sample, cfg, rng)?;
    Ok(Prepared {
        image: image_tensor(&out.image),
        mask: out.mask,
    })
}

/// Mean per-image F1 of the network's binarized predictions.
pub fn mean_f1(net: &TamperNet, data: &[LabeledImage], threshold: f64) -> Result<f64> {
    let f1s: Vec<f64> = data
        .par_iter()
        .map(|s| {
            let map = net.localize(&image_tensor(&s.image))?;
            let pred = binarize(map.probs.data(), s.mask.width, s.mask.height, threshold)?;
            Ok(f1_iou(confusion(&pred, &s.mask)?).0)
        })
        .collect::<Result<_>>()?;
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Mean per-image training objective without augmentation.
pub fn mean_loss(net: &TamperNet, data: &[LabeledImage], cfg: &TrainConfig) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|s| {
            let p = prepare(s);
            Ok(sample_pass(net, &p.image, &p.mask, cfg, None)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Fixed 9:1 split of `n` indices as `(train, validation)`.
pub fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::derive(seed, "split").shuffle(&mut idx);
    let val = idx.split_off(n - n / 10);
    let mut train = idx;
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub iter: usize,
    pub lr: f64,
    /// Mean loss of the iteration's batch.
    pub loss: f64,
    /// Training-set F1 after this iteration, on logging iterations.
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    /// Mean training-set loss before the first and after the last step.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_f1: f64,
    pub val_f1: Option<f64>,
}

impl TrainReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("iter,lr,loss,f1\n");
        for p in &self.curve {
            let f1 = p.f1.map(|f| f.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", p.iter, p.lr, p.loss, f1);
        }
        out
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CURVE_FILE: &str = "loss_curve.csv";

/// Trains `net` in place. With `out` set, writes the loss curve and
/// checkpoints there.
pub fn train(
    net: &mut TamperNet,
    data: &[LabeledImage],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainReport> {
    train_with_progress(net, data, cfg, out, |_| {})
}

pub fn train_with_progress(
    net: &mut TamperNet,
    data: &[LabeledImage],
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut progress: impl FnMut(&CurvePoint),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let (train_idx, val_idx) = if cfg.holdout {
        holdout_split(data.len(), cfg.seed)
    } else {
        ((0..data.len()).collect(), Vec::new())
    };
    let train_set: Vec<LabeledImage> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let val_set: Vec<LabeledImage> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let fixed: Vec<Prepared> = train_set.iter().map(prepare).collect();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }

    let initial_loss = mean_loss(net, &train_set, cfg)?;
    let mut opt = AdamW::from_config(net.params(), cfg);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut curve = Vec::with_capacity(cfg.max_iters);
    let mut final_f1 = None;

    for t in 0..cfg.max_iters {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                RngStream::derive_indexed(cfg.seed, "shuffle", epoch).shuffle(&mut order);
                cursor = 0;
                epoch += 1;
            }
            batch.push((order[cursor], (epoch - 1) * train_set.len() as u64 + cursor as u64));
            cursor += 1;
        }
        let weight = 1.0 / batch.len() as f64;
        let net_ref: &TamperNet = net;
        let results: Vec<(f64, Vec<Vec<f64>>)> = batch
            .par_iter()
            .map(|&(i, draw)| {
                let prepared;
                let p = match &cfg.augment {
                    Some(a) => {
                        let mut rng = RngStream::derive_indexed(cfg.seed, "augment", draw);
                        prepared = augmented(&train_set[i], a, &mut rng)?;
                        &prepared
                    }
                    None => &fixed[i],
                };
                let (loss, grads) = sample_pass(net_ref, &p.image, &p.mask, cfg, Some(weight))?;
                Ok((loss, grads.expect("gradients requested")))
            })
            .collect::<Result<_>>()?;

        let loss = results.iter().map(|r| r.0).sum::<f64>() * weight;
        if !loss.is_finite() {
            let names: Vec<&str> = batch.iter().map(|&(i, _)| train_set[i].name.as_str()).collect();
            return Err(Error::Numeric {
                op: format!("training iteration {t}"),
                detail: format!("loss {loss} on batch samples [{}]", names.join(", ")),
            });
        }
        let mut iter = results.into_iter();
        let mut grads = iter.next().expect("non-empty batch").1;
        for (_, g) in iter {
            for (acc, gi) in grads.iter_mut().zip(g) {
                for (a, b) in acc.iter_mut().zip(gi) {
                    *a += b;
                }
            }
        }
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        let lr = lr_at(t, cfg);
        opt.step(net.params_mut(), &grads, lr)?;

        let last = t + 1 == cfg.max_iters;
        let f1 = if (t + 1) % cfg.log_every == 0 || last {
            Some(mean_f1(net, &train_set, DEFAULT_THRESHOLD)?)
        } else {
            None
        };
        if last {
            final_f1 = f1;
        }
        let point = CurvePoint { iter: t, lr, loss, f1 };
        progress(&point);
        curve.push(point);

        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 && !last {
                net.params().save(&dir.join(format!("checkpoint_{:06}.bin", t + 1)))?;
            }
        }
    }

    let report = TrainReport {
        curve,
        initial_loss,
        final_loss: mean_loss(net, &train_set, cfg)?,
        final_f1: final_f1.expect("at least one iteration"),
        val_f1: if val_set.is_empty() {
            None
        } else {
            Some(mean_f1(net, &val_set, DEFAULT_THRESHOLD)?)
        },
    };
    if let Some(dir) = out {
        net.params().save(&dir.join(CHECKPOINT_FILE))?;
        fs::write(dir.join(CURVE_FILE), report.curve_csv())?;
    }
    Ok(report)
}
