//! Pixel-level AUC, F1 and IoU with tampered as the positive class.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Mask;

/// Default binarization threshold on the tamper probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

fn check_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            left: format!("{}x{}", a.0, a.1),
            right: format!("{}x{}", b.0, b.1),
        });
    }
    Ok(())
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    check_dims("confusion", (pred.width, pred.height), (gt.width, gt.height))?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `(f1, iou)`; both are 1 when there is nothing to find and nothing found.
pub fn f1_iou(c: ConfusionCounts) -> (f64, f64) {
    let wrong = c.fp + c.fn_;
    if c.tp + wrong == 0 {
        return (1.0, 1.0);
    }
    let tp = c.tp as f64;
    (2.0 * tp / (2.0 * tp + wrong as f64), tp / (tp + wrong as f64))
}

/// Pixels with probability strictly above `threshold` are predicted tampered.
pub fn binarize(probs: &[f64], width: usize, height: usize, threshold: f64) -> Result<Mask> {
    Mask::from_bits(width, height, probs.iter().map(|&p| u8::from(p > threshold)).collect())
}

/// Mann-Whitney AUC with midranks for ties, or `None` when the ground
/// truth holds a single class.
pub fn pixel_auc(probs: &[f64], gt: &Mask) -> Result<Option<f64>> {
    if probs.len() != gt.data.len() {
        return Err(Error::Dimension {
            op: "pixel_auc",
            axis: "pixels",
            expected: gt.data.len(),
            found: probs.len(),
        });
    }
    if let Some(p) = probs.iter().find(|p| p.is_nan()) {
        return Err(Error::Numeric {
            op: "pixel_auc".into(),
            detail: format!("probability {p}"),
        });
    }
    let pos = gt.count();
    let neg = probs.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share their mean.
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * order[i..j].iter().filter(|&&k| gt.data[k] != 0).count() as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub auc: Option<f64>,
    pub f1: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
}

pub fn evaluate_image(name: &str, probs: &[f64], gt: &Mask, threshold: f64) -> Result<ImageMetrics> {
    let pred = binarize(probs, gt.width, gt.height, threshold)?;
    let counts = confusion(&pred, gt)?;
    let (f1, iou) = f1_iou(counts);
    Ok(ImageMetrics {
        name: name.to_string(),
        auc: pixel_auc(probs, gt)?,
        f1,
        iou,
        counts,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    pub threshold: f64,
    /// Unweighted mean over images with a defined AUC.
    pub mean_auc: Option<f64>,
    pub mean_f1: f64,
    pub mean_iou: f64,
}

impl MetricsReport {
    pub fn new(images: Vec<ImageMetrics>, threshold: f64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::config("no images to report"));
        }
        let n = images.len() as f64;
        let aucs: Vec<f64> = images.iter().filter_map(|m| m.auc).collect();
        Ok(Self {
            mean_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            mean_f1: images.iter().map(|m| m.f1).sum::<f64>() / n,
            mean_iou: images.iter().map(|m| m.iou).sum::<f64>() / n,
            images,
            threshold,
        })
    }

    /// Images left out of the AUC mean.
    pub fn auc_excluded(&self) -> Vec<&str> {
        self.images
            .iter()
            .filter(|m| m.auc.is_none())
            .map(|m| m.name.as_str())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let fmt_auc = |a: Option<f64>| a.map_or("nan".to_string(), |a| format!("{a:.6}"));
        let mut out = String::from("image,auc,f1,iou\n");
        for m in &self.images {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", m.name, fmt_auc(m.auc), m.f1, m.iou);
        }
        let _ = writeln!(
            out,
            "mean,{},{:.6},{:.6}",
            fmt_auc(self.mean_auc),
            self.mean_f1,
            self.mean_iou
        );
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.images.iter().map(|m| m.name.len()).max().unwrap_or(0).max(5);
        let fmt_auc = |a: Option<f64>| a.map_or("   n/a".to_string(), |a| format!("{a:.4}"));
        let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>6}\n", "image", "auc", "f1", "iou");
        for m in &self.images {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>6.4}  {:>6.4}",
                m.name,
                fmt_auc(m.auc),
                m.f1,
                m.iou
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6.4}  {:>6.4}",
            "mean",
            fmt_auc(self.mean_auc),
            self.mean_f1,
            self.mean_iou
        );
        let _ = writeln!(out, "threshold {}", self.threshold);
        let excluded = self.auc_excluded();
        if !excluded.is_empty() {
            let _ = writeln!(
                out,
                "auc undefined (single-class ground truth) for: {}",
                excluded.join(", ")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> Mask {
        Mask::from_bits(bits.len(), 1, bits.to_vec()).unwrap()
    }

    #[test]
    fn hand_counts() {
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 5 };
        let (f1, iou) = f1_iou(c);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((iou - 0.5).abs() < 1e-15);
        assert_eq!(f1_iou(ConfusionCounts { tn: 4, ..Default::default() }), (1.0, 1.0));
        assert_eq!(f1_iou(ConfusionCounts { fp: 3, tn: 4, ..Default::default() }), (0.0, 0.0));
    }

    #[test]
    fn inverted_prediction() {
        let gt = mask(&[1, 0, 0, 1, 1]);
        let inv = mask(&[0, 1, 1, 0, 0]);
        let c = confusion(&inv, &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        let c = confusion(&gt, &gt).unwrap();
        assert_eq!((c.fp, c.fn_, c.total()), (0, 0, 5));
        assert!(confusion(&gt, &mask(&[0, 1])).is_err());
    }

    #[test]
    fn auc_edge_cases() {
        let gt = mask(&[0, 1, 0, 1]);
        assert_eq!(pixel_auc(&[0.1, 0.9, 0.2, 0.8], &gt).unwrap(), Some(1.0));
        assert_eq!(pixel_auc(&[0.9, 0.1, 0.8, 0.2], &gt).unwrap(), Some(0.0));
        assert_eq!(pixel_auc(&[0.3; 4], &gt).unwrap(), Some(0.5));
        assert_eq!(pixel_auc(&[0.3; 2], &mask(&[1, 1])).unwrap(), None);
    }

    #[test]
    fn threshold_is_strict() {
        let m = binarize(&[0.5, 0.51, 0.0], 3, 1, 0.5).unwrap();
        assert_eq!(m.data, vec![0, 1, 0]);
        assert_eq!(binarize(&[0.0, 1e-9], 2, 1, 0.0).unwrap().data, vec![0, 1]);
    }

    #[test]
    fn report_formats() {
        let a = evaluate_image("a", &[0.9, 0.1], &mask(&[1, 0]), 0.5).unwrap();
        let b = evaluate_image("b", &[0.2, 0.1], &mask(&[0, 0]), 0.5).unwrap();
        let r = MetricsReport::new(vec![a, b], 0.5).unwrap();
        assert_eq!(r.mean_auc, Some(1.0));
        assert_eq!(r.auc_excluded(), vec!["b"]);
        let csv = r.to_csv();
        assert!(csv.starts_with("image,auc,f1,iou\na,1.000000,1.000000,1.000000\nb,nan,"));
        assert!(r.to_table().contains("auc undefined"));
    }
}
