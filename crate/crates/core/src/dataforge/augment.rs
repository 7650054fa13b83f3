//! Training-time augmentation chain.
//!
//! Fixed order: resize, crop, flip, noise, blur, photometric jitter, JPEG.
//! Resize and crop always run; the rest each fire with their own
//! probability. Masks follow the geometric ops with nearest-neighbor
//! sampling and ignore the photometric ones.

use std::fmt;

use super::jpeg::jpeg_roundtrip;
use super::synth::ForgerySample;
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub resize_range: (f64, f64),
    /// Output `(width, height)`.
    pub crop: (usize, usize),
    pub flip_p: f64,
    pub noise_p: f64,
    pub blur_p: f64,
    pub photometric_p: f64,
    pub jpeg_p: f64,
    pub jpeg_quality: (u32, u32),
    /// Relative brightness, contrast and saturation deltas.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_degrees: f64,
    /// Additive Gaussian noise sigma on the 0..255 scale.
    pub noise_sigma: (f64, f64),
    pub blur_sigma: (f64, f64),
}

impl AugmentConfig {
    pub fn with_crop(width: usize, height: usize) -> Self {
        Self {
            resize_range: (0.5, 2.0),
            crop: (width, height),
            flip_p: 0.5,
            noise_p: 0.5,
            blur_p: 0.5,
            photometric_p: 0.5,
            jpeg_p: 0.5,
            jpeg_quality: (71, 95),
            brightness: 0.25,
            contrast: 0.25,
            saturation: 0.25,
            hue_degrees: 18.0,
            noise_sigma: (1.0, 10.0),
            blur_sigma: (0.5, 2.0),
        }
    }

    pub fn full() -> Self {
        Self::with_crop(512, 512)
    }

    pub fn desk() -> Self {
        Self::with_crop(64, 64)
    }

    /// A chain that leaves `width x height` inputs untouched.
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            resize_range: (1.0, 1.0),
            flip_p: 0.0,
            noise_p: 0.0,
            blur_p: 0.0,
            photometric_p: 0.0,
            jpeg_p: 0.0,
            ..Self::with_crop(width, height)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.resize_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(format!("resize range [{lo}, {hi}] invalid")));
        }
        if self.crop.0 == 0 || self.crop.1 == 0 {
            return Err(Error::config("crop size must be positive"));
        }
        for (name, p) in [
            ("flip_p", self.flip_p),
            ("noise_p", self.noise_p),
            ("blur_p", self.blur_p),
            ("photometric_p", self.photometric_p),
            ("jpeg_p", self.jpeg_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        let (qlo, qhi) = self.jpeg_quality;
        if !(1 <= qlo && qlo <= qhi && qhi <= 100) {
            return Err(Error::config(format!("JPEG quality range [{qlo}, {qhi}] invalid")));
        }
        for (name, (a, b)) in [("noise sigma", self.noise_sigma), ("blur sigma", self.blur_sigma)] {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return Err(Error::config(format!("{name} range [{a}, {b}] invalid")));
            }
        }
        for (name, d) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::config(format!("{name} delta {d} outside [0, 1)")));
            }
        }
        if !(0.0..=180.0).contains(&self.hue_degrees) {
            return Err(Error::config(format!("hue delta {} outside [0, 180]", self.hue_degrees)));
        }
        Ok(())
    }
}

/// One applied augmentation with its drawn parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum AugOp {
    Resize { factor: f64, width: usize, height: usize },
    /// Reflect-pad to at least the crop size (centered), then crop at
    /// `(x, y)` in padded coordinates.
    Crop { x: usize, y: usize, width: usize, height: usize, pad_left: usize, pad_top: usize },
    Flip,
    Noise { sigma: f64 },
    Blur { sigma: f64, kernel: usize },
    Photometric { brightness: f64, contrast: f64, saturation: f64, hue: f64 },
    Jpeg { quality: u32 },
}

impl AugOp {
    pub fn is_geometric(&self) -> bool {
        matches!(self, AugOp::Resize { .. } | AugOp::Crop { .. } | AugOp::Flip)
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugOp::Resize { factor, width, height } => {
                write!(f, "resize(factor={factor:.6},size={width}x{height})")
            }
            AugOp::Crop { x, y, width, height, pad_left, pad_top } => write!(
                f,
                "crop(x={x},y={y},size={width}x{height},pad={pad_left},{pad_top})"
            ),
            AugOp::Flip => write!(f, "flip"),
            AugOp::Noise { sigma } => write!(f, "noise(sigma={sigma:.6})"),
            AugOp::Blur { sigma, kernel } => write!(f, "blur(sigma={sigma:.6},kernel={kernel})"),
            AugOp::Photometric { brightness, contrast, saturation, hue } => write!(
                f,
                "photometric(brightness={brightness:.6},contrast={contrast:.6},saturation={saturation:.6},hue={hue:.6})"
            ),
            AugOp::Jpeg { quality } => write!(f, "jpeg(quality={quality})"),
        }
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn nearest_index(d: usize, dst: usize, src: usize) -> usize {
    (((d as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1)
}

fn resize_bilinear(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    if (width, height) == (img.width, img.height) {
        return img.clone();
    }
    let coord = |d: usize, dst: usize, src: usize| {
        let s = ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s as usize;
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, img.height);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, img.width);
            let (a, b, c, d) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            let rgb = std::array::from_fn(|k| {
                let top = (1.0 - fx) * f64::from(a[k]) + fx * f64::from(b[k]);
                let bot = (1.0 - fx) * f64::from(c[k]) + fx * f64::from(d[k]);
                to_u8((1.0 - fy) * top + fy * bot)
            });
            out.put(x, y, rgb);
        }
    }
    out
}

fn resize_nearest(m: &Mask, width: usize, height: usize) -> Mask {
    let mut out = Mask::new(width, height);
    for y in 0..height {
        let sy = nearest_index(y, height, m.height);
        for x in 0..width {
            out.set(x, y, m.get(nearest_index(x, width, m.width), sy));
        }
    }
    out
}

/// Mirror index without repeating the edge, folding as often as needed.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    (if r >= n as isize { period - r } else { r }) as usize
}

fn crop_source(op: &AugOp, x: usize, y: usize, w: usize, h: usize) -> (usize, usize) {
    let AugOp::Crop { x: cx, y: cy, pad_left, pad_top, .. } = *op else {
        unreachable!("crop_source called with {op}")
    };
    (
        reflect((x + cx) as isize - pad_left as isize, w),
        reflect((y + cy) as isize - pad_top as isize, h),
    )
}

/// Replays the geometric part of `ops` on a mask.
pub fn apply_geometric(mask: &Mask, ops: &[AugOp]) -> Mask {
    let mut m = mask.clone();
    for op in ops {
        m = match *op {
            AugOp::Resize { width, height, .. } => resize_nearest(&m, width, height),
            AugOp::Crop { width, height, .. } => {
                let mut out = Mask::new(width, height);
                for y in 0..height {
                    for x in 0..width {
                        let (sx, sy) = crop_source(op, x, y, m.width, m.height);
                        out.set(x, y, m.get(sx, sy));
                    }
                }
                out
            }
            AugOp::Flip => {
                let mut out = m.clone();
                for y in 0..m.height {
                    for x in 0..m.width {
                        out.set(x, y, m.get(m.width - 1 - x, y));
                    }
                }
                out
            }
            _ => continue,
        };
    }
    m
}

fn crop_image(img: &RgbImage, op: &AugOp) -> RgbImage {
    let AugOp::Crop { width, height, .. } = *op else {
        unreachable!()
    };
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = crop_source(op, x, y, img.width, img.height);
            out.put(x, y, img.get(sx, sy));
        }
    }
    out
}

fn flip_image(img: &RgbImage) -> RgbImage {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.put(x, y, img.get(img.width - 1 - x, y));
        }
    }
    out
}

fn add_noise(img: &RgbImage, sigma: f64, rng: &mut RngStream) -> RgbImage {
    let mut out = img.clone();
    for v in &mut out.data {
        *v = to_u8(f64::from(*v) + sigma * rng.normal());
    }
    out
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    let radius = (2.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tmp[(y * w + x) * 3 + c] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| {
                        let sx = reflect(x as isize + k as isize - radius, w);
                        wt * f64::from(img.data[(y * w + sx) * 3 + c])
                    })
                    .sum::<f64>()
                    / norm;
            }
        }
    }
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| {
                        let sy = reflect(y as isize + k as isize - radius, h);
                        wt * tmp[(sy * w + x) * 3 + c]
                    })
                    .sum();
                out.data[(y * w + x) * 3 + c] = to_u8(v / norm);
            }
        }
    }
    out
}

fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Brightness and contrast scale, saturation blends with per-pixel gray,
/// hue rotates the chroma plane in YIQ space.
pub fn photometric(img: &RgbImage, brightness: f64, contrast: f64, saturation: f64, hue_deg: f64) -> RgbImage {
    let px: Vec<[f64; 3]> = img
        .data
        .chunks_exact(3)
        .map(|p| std::array::from_fn(|c| f64::from(p[c]) * brightness))
        .collect();
    let mean = px.iter().map(|&p| luma(p)).sum::<f64>() / px.len() as f64;
    let (sin, cos) = hue_deg.to_radians().sin_cos();
    let mut out = RgbImage::new(img.width, img.height);
    for (o, p) in out.data.chunks_exact_mut(3).zip(px) {
        let p = p.map(|v| (v - mean) * contrast + mean);
        let gray = luma(p);
        let p = p.map(|v| gray + (v - gray) * saturation);
        let yy = luma(p);
        let i = 0.595_716 * p[0] - 0.274_453 * p[1] - 0.321_263 * p[2];
        let q = 0.211_456 * p[0] - 0.522_591 * p[1] + 0.311_135 * p[2];
        let (i, q) = (i * cos - q * sin, i * sin + q * cos);
        let rgb = [
            yy + 0.956_3 * i + 0.621_0 * q,
            yy - 0.272_1 * i - 0.647_4 * q,
            yy - 1.107_0 * i + 1.704_6 * q,
        ];
        for (dst, v) in o.iter_mut().zip(rgb) {
            *dst = to_u8(v);
        }
    }
    out
}

/// Runs the chain on one sample, appending every applied op to its log.
pub fn augment(s: &ForgerySample, cfg: &AugmentConfig, rng: &mut RngStream) -> Result<ForgerySample> {
    cfg.validate()?;
    let mut ops = Vec::new();

    let factor = if cfg.resize_range.0 == cfg.resize_range.1 {
        cfg.resize_range.0
    } else {
        rng.uniform_range(cfg.resize_range.0, cfg.resize_range.1)
    };
    let rw = ((s.image.width as f64 * factor).round() as usize).max(1);
    let rh = ((s.image.height as f64 * factor).round() as usize).max(1);
    ops.push(AugOp::Resize { factor, width: rw, height: rh });
    let mut image = resize_bilinear(&s.image, rw, rh);

    let (cw, ch) = cfg.crop;
    let (pw, ph) = (rw.max(cw), rh.max(ch));
    let crop = AugOp::Crop {
        x: rng.below(pw - cw + 1),
        y: rng.below(ph - ch + 1),
        width: cw,
        height: ch,
        pad_left: (pw - rw) / 2,
        pad_top: (ph - rh) / 2,
    };
    image = crop_image(&image, &crop);
    ops.push(crop);

    if rng.bernoulli(cfg.flip_p) {
        image = flip_image(&image);
        ops.push(AugOp::Flip);
    }
    if rng.bernoulli(cfg.noise_p) {
        let sigma = rng.uniform_range(cfg.noise_sigma.0, cfg.noise_sigma.1);
        image = add_noise(&image, sigma, rng);
        ops.push(AugOp::Noise { sigma });
    }
    if rng.bernoulli(cfg.blur_p) {
        let sigma = rng.uniform_range(cfg.blur_sigma.0, cfg.blur_sigma.1);
        image = gaussian_blur(&image, sigma);
        ops.push(AugOp::Blur { sigma, kernel: 2 * (2.0 * sigma).ceil() as usize + 1 });
    }
    if rng.bernoulli(cfg.photometric_p) {
        let mut jitter = |d: f64| 1.0 + rng.uniform_range(-d, d);
        let (brightness, contrast, saturation) =
            (jitter(cfg.brightness), jitter(cfg.contrast), jitter(cfg.saturation));
        let hue = rng.uniform_range(-cfg.hue_degrees, cfg.hue_degrees);
        image = photometric(&image, brightness, contrast, saturation, hue);
        ops.push(AugOp::Photometric { brightness, contrast, saturation, hue });
    }
    if rng.bernoulli(cfg.jpeg_p) {
        let (lo, hi) = cfg.jpeg_quality;
        let quality = lo + rng.below((hi - lo + 1) as usize) as u32;
        image = jpeg_roundtrip(&image, quality)?;
        ops.push(AugOp::Jpeg { quality });
    }

    let mask = apply_geometric(&s.mask, &ops);
    let mut provenance = s.provenance.clone();
    provenance.augmentations.extend(ops);
    Ok(ForgerySample { image, mask, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_repeatedly() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(got, vec![0, 1, 2, 1, 0, 1, 2, 1, 0, 1, 2, 1]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn blur_kernel_size() {
        let s = crate::dataforge::procedural_corpus(1, 32, 2).unwrap().remove(0);
        let cfg = AugmentConfig {
            blur_p: 1.0,
            ..AugmentConfig::identity(32, 32)
        };
        let out = augment(&s, &cfg, &mut RngStream::new(1)).unwrap();
        let AugOp::Blur { sigma, kernel } = out.provenance.augmentations[2] else {
            panic!("{:?}", out.provenance.augmentations)
        };
        assert_eq!(kernel, 2 * (2.0 * sigma).ceil() as usize + 1);
    }

    #[test]
    fn constant_image_survives_blur() {
        let img = RgbImage::filled(9, 5, [17, 99, 230]);
        assert_eq!(gaussian_blur(&img, 1.7), img);
    }

    #[test]
    fn neutral_photometric_is_identity() {
        let s = crate::dataforge::procedural_corpus(1, 16, 4).unwrap().remove(0);
        let out = photometric(&s.image, 1.0, 1.0, 1.0, 0.0);
        let diff = s.image.data.iter().zip(&out.data).map(|(&a, &b)| a.abs_diff(b)).max();
        assert!(diff <= Some(1), "{diff:?}");
    }

    #[test]
    fn small_images_are_padded_to_the_crop() {
        let s = crate::dataforge::procedural_corpus(1, 32, 9).unwrap().remove(0);
        let cfg = AugmentConfig {
            resize_range: (0.5, 0.5),
            ..AugmentConfig::identity(32, 32)
        };
        let out = augment(&s, &cfg, &mut RngStream::new(0)).unwrap();
        assert_eq!((out.image.width, out.image.height), (32, 32));
        assert_eq!((out.mask.width, out.mask.height), (32, 32));
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::desk().validate().is_ok());
        let bad = AugmentConfig {
            jpeg_quality: (90, 80),
            ..AugmentConfig::desk()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            flip_p: 1.5,
            ..AugmentConfig::desk()
        };
        assert!(bad.validate().is_err());
    }
}
