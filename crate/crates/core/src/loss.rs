//! Focal loss, Lovasz hinge and their weighted combination.
//!
//! Pixel predictions come from a two-class softmax head, so the tampered
//! probability is `p = logistic(s)` with `s` the tampered-minus-pristine
//! logit difference. Focal loss works on `p` with 0/1 labels; the Lovasz
//! hinge works on the signed score `s` with -1/+1 labels, which is what
//! makes `max(1 - s * y, 0)` a margin rather than a constant.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Focal class weight on tampered pixels.
    pub alpha: f64,
    /// Focal focusing exponent.
    pub gamma: f64,
    pub lambda_focal: f64,
    pub lambda_lovasz: f64,
    /// Probability clamp applied before logarithms.
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            lambda_focal: 1.0,
            lambda_lovasz: 1.0,
            eps: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("focal alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::config(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        if !(self.lambda_focal >= 0.0 && self.lambda_lovasz >= 0.0)
            || self.lambda_focal + self.lambda_lovasz <= 0.0
        {
            return Err(Error::config("loss weights must be non-negative with a positive sum"));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::config(format!("probability clamp {} outside (0, 0.5)", self.eps)));
        }
        Ok(())
    }
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `lambda_focal * focal + lambda_lovasz * lovasz`.
    Combined,
    /// Plain two-class cross-entropy.
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Combined => "combined",
            LossKind::CrossEntropy => "ce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(LossKind::Combined),
            "ce" => Ok(LossKind::CrossEntropy),
            _ => Err(Error::config(format!("unknown loss `{s}` (combined | ce)"))),
        }
    }
}

pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Flattened pixels of one image (or any set the loss is reduced over).
#[derive(Clone, Debug, PartialEq)]
pub struct PixelBatch {
    /// Tampered-class probabilities.
    pub p: Vec<f64>,
    /// Signed scores (tampered logit minus pristine logit).
    pub s: Vec<f64>,
    /// Labels in {0, 1}.
    pub y01: Vec<f64>,
    /// Labels in {-1, +1}.
    pub ypm: Vec<f64>,
}

impl PixelBatch {
    pub fn from_scores(s: Vec<f64>, labels: &[u8]) -> Result<Self> {
        if s.len() != labels.len() {
            return Err(Error::Dimension {
                op: "pixel batch",
                axis: "labels",
                expected: s.len(),
                found: labels.len(),
            });
        }
        if s.is_empty() {
            return Err(Error::config("empty pixel batch"));
        }
        if let Some(v) = s.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: "pixel batch".into(),
                detail: format!("score {v}"),
            });
        }
        let y01: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l != 0))).collect();
        Ok(Self {
            p: s.iter().map(|&v| logistic(v)).collect(),
            ypm: y01.iter().map(|y| 2.0 * y - 1.0).collect(),
            s,
            y01,
        })
    }

    /// Builds a batch from probabilities; scores are the matching logits,
    /// saturated to a finite range for `p` of exactly 0 or 1.
    pub fn from_probabilities(p: Vec<f64>, labels: &[u8]) -> Result<Self> {
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric {
                op: "pixel batch".into(),
                detail: format!("probability {v}"),
            });
        }
        let s = p.iter().map(|&v| (v.ln() - (1.0 - v).ln()).clamp(-745.0, 745.0)).collect();
        let mut b = Self::from_scores(s, labels)?;
        b.p = p;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y01.iter().filter(|&&y| y > 0.5).count()
    }
}

/// A scalar loss and its gradient with respect to one input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    match p.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::Numeric {
            op: "loss".into(),
            detail: format!("probability {v}"),
        }),
        None => Ok(()),
    }
}

/// Mean focal loss over pixels; the gradient is with respect to `p` and is
/// exact for the clamped expression (zero where the clamp is active).
pub fn focal_loss(b: &PixelBatch, cfg: &LossConfig) -> Result<LossValue> {
    check_probabilities(&b.p)?;
    let (a, gm, eps) = (cfg.alpha, cfg.gamma, cfg.eps);
    let inv_n = 1.0 / b.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; b.len()];
    for (i, (&p, &y)) in b.p.iter().zip(&b.y01).enumerate() {
        let inside = (eps..=1.0 - eps).contains(&p);
        let pc = p.clamp(eps, 1.0 - eps);
        let (lp, lq) = (pc.ln(), (1.0 - pc).ln());
        let pos_w = a * (1.0 - pc).powf(gm);
        let neg_w = (1.0 - a) * pc.powf(gm);
        value -= y * pos_w * lp + (1.0 - y) * neg_w * lq;
        if inside {
            let mut d = -y * pos_w / pc + (1.0 - y) * neg_w / (1.0 - pc);
            if gm != 0.0 {
                d += y * a * gm * (1.0 - pc).powf(gm - 1.0) * lp;
                d -= (1.0 - y) * (1.0 - a) * gm * pc.powf(gm - 1.0) * lq;
            }
            grad[i] = d * inv_n;
        }
    }
    Ok(LossValue {
        value: value * inv_n,
        grad,
    })
}

/// Mean binary cross-entropy over pixels, gradient with respect to `p`.
pub fn cross_entropy_loss(b: &PixelBatch, eps: f64) -> Result<LossValue> {
    check_probabilities(&b.p)?;
    let inv_n = 1.0 / b.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; b.len()];
    for (i, (&p, &y)) in b.p.iter().zip(&b.y01).enumerate() {
        let pc = p.clamp(eps, 1.0 - eps);
        value -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if (eps..=1.0 - eps).contains(&p) {
            grad[i] = (-y / pc + (1.0 - y) / (1.0 - pc)) * inv_n;
        }
    }
    Ok(LossValue {
        value: value * inv_n,
        grad,
    })
}

/// Discrete gradient of the Jaccard loss along a sorted chain.
///
/// `gt_sorted` holds 0/1 labels ordered by decreasing error. Without any
/// positive the Jaccard loss is undefined and the result is all zeros.
pub fn lovasz_grad(gt_sorted: &[f64]) -> Vec<f64> {
    let total: f64 = gt_sorted.iter().sum();
    if total == 0.0 {
        return vec![0.0; gt_sorted.len()];
    }
    let mut grad = Vec::with_capacity(gt_sorted.len());
    let (mut cum_pos, mut cum_neg, mut prev) = (0.0, 0.0, 0.0);
    for &gt in gt_sorted {
        cum_pos += gt;
        cum_neg += 1.0 - gt;
        let jac = 1.0 - (total - cum_pos) / (total + cum_neg);
        grad.push(jac - prev);
        prev = jac;
    }
    grad
}

/// Lovasz hinge on signed scores; the gradient is with respect to `s`.
///
/// Margins are sorted in decreasing order with ties broken by ascending
/// pixel index, so the result is a deterministic function of the input.
pub fn lovasz_loss(b: &PixelBatch) -> Result<LossValue> {
    let n = b.len();
    if b.positives() == 0 {
        return Ok(LossValue {
            value: 0.0,
            grad: vec![0.0; n],
        });
    }
    let margins: Vec<f64> = b
        .s
        .iter()
        .zip(&b.ypm)
        .map(|(s, y)| (1.0 - s * y).max(0.0))
        .collect();
    if let Some(m) = margins.iter().find(|m| !m.is_finite()) {
        return Err(Error::Numeric {
            op: "lovasz_loss".into(),
            detail: format!("margin {m}"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| margins[j].total_cmp(&margins[i]).then(i.cmp(&j)));
    let gt_sorted: Vec<f64> = order.iter().map(|&i| b.y01[i]).collect();
    let g = lovasz_grad(&gt_sorted);
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        value += margins[i] * g[rank];
        if margins[i] > 0.0 {
            grad[i] = -b.ypm[i] * g[rank];
        }
    }
    Ok(LossValue { value, grad })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub value: f64,
    pub focal: f64,
    pub lovasz: f64,
    /// Gradient with respect to the signed scores `s`.
    pub grad_s: Vec<f64>,
}

/// `lambda_focal * focal + lambda_lovasz * lovasz`; a term with zero weight
/// is not evaluated.
pub fn combined_loss(b: &PixelBatch, cfg: &LossConfig) -> Result<CombinedLoss> {
    let mut grad_s = vec![0.0; b.len()];
    let mut focal = 0.0;
    let mut lovasz = 0.0;
    if cfg.lambda_focal != 0.0 {
        let f = focal_loss(b, cfg)?;
        focal = f.value;
        for ((g, df), p) in grad_s.iter_mut().zip(&f.grad).zip(&b.p) {
            *g += cfg.lambda_focal * df * p * (1.0 - p);
        }
    }
    if cfg.lambda_lovasz != 0.0 {
        let l = lovasz_loss(b)?;
        lovasz = l.value;
        for (g, dl) in grad_s.iter_mut().zip(&l.grad) {
            *g += cfg.lambda_lovasz * dl;
        }
    }
    Ok(CombinedLoss {
        value: cfg.lambda_focal * focal + cfg.lambda_lovasz * lovasz,
        focal,
        lovasz,
        grad_s,
    })
}

/// The training objective for one image, with its gradient w.r.t. `s`.
pub fn pixel_loss(b: &PixelBatch, cfg: &LossConfig, kind: LossKind) -> Result<LossValue> {
    match kind {
        LossKind::Combined => {
            let c = combined_loss(b, cfg)?;
            Ok(LossValue {
                value: c.value,
                grad: c.grad_s,
            })
        }
        LossKind::CrossEntropy => {
            let ce = cross_entropy_loss(b, cfg.eps)?;
            let grad = ce
                .grad
                .iter()
                .zip(&b.p)
                .map(|(d, p)| d * p * (1.0 - p))
                .collect();
            Ok(LossValue {
                value: ce.value,
                grad,
            })
        }
    }
}
