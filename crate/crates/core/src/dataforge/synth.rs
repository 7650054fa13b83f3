//! Splice-style forgery synthesis and the procedural source corpus.

use rayon::prelude::*;

use super::augment::AugOp;
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};
use crate::rng::RngStream;

/// Where and how large the donor region was pasted.
#[derive(Clone, Debug, PartialEq)]
pub struct PasteTransform {
    pub x: usize,
    pub y: usize,
    pub scale: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub host_id: String,
    pub donor_id: String,
    pub paste: PasteTransform,
    pub augmentations: Vec<AugOp>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgerySample {
    pub image: RgbImage,
    /// 1 marks a pasted pixel.
    pub mask: Mask,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeOptions {
    pub scale_range: (f64, f64),
    /// Accepted tampered-pixel fraction, if constrained.
    pub ratio_range: Option<(f64, f64)>,
    pub max_tries: usize,
}

impl Default for CompositeOptions {
    fn default() -> Self {
        Self {
            scale_range: (0.5, 1.5),
            ratio_range: None,
            max_tries: 16,
        }
    }
}

/// Tampered-pixel fraction enforced on generated corpora.
pub const CORPUS_RATIO_RANGE: (f64, f64) = (0.01, 0.40);

fn bounding_box(mask: &Mask) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                bb = Some(match bb {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    bb
}

/// Pastes the masked donor region into `host` at a random scale and
/// location with hard edges. Provenance ids are left empty.
pub fn composite(
    host: &RgbImage,
    donor: &RgbImage,
    donor_mask: &Mask,
    rng: &mut RngStream,
) -> Result<ForgerySample> {
    composite_with(host, donor, donor_mask, &CompositeOptions::default(), rng)
}

pub fn composite_with(
    host: &RgbImage,
    donor: &RgbImage,
    donor_mask: &Mask,
    opts: &CompositeOptions,
    rng: &mut RngStream,
) -> Result<ForgerySample> {
    if (donor.width, donor.height) != (donor_mask.width, donor_mask.height) {
        return Err(Error::ShapeMismatch {
            op: "composite",
            left: format!("donor {}x{}", donor.width, donor.height),
            right: format!("mask {}x{}", donor_mask.width, donor_mask.height),
        });
    }
    let (bx0, by0, bx1, by1) =
        bounding_box(donor_mask).ok_or_else(|| Error::config("composite: empty donor mask"))?;
    let (bw, bh) = (bx1 - bx0 + 1, by1 - by0 + 1);
    let (hw, hh) = (host.width, host.height);
    for _ in 0..opts.max_tries {
        let scale = rng.uniform_range(opts.scale_range.0, opts.scale_range.1);
        let sw = ((bw as f64 * scale).round() as usize).max(1);
        let sh = ((bh as f64 * scale).round() as usize).max(1);
        let px = rng.below(hw.saturating_sub(sw) + 1);
        let py = rng.below(hh.saturating_sub(sh) + 1);
        if sw > hw || sh > hh {
            continue;
        }
        let src = |d: usize, s: usize, b: usize| (((d as f64 + 0.5) * b as f64 / s as f64) as usize).min(b - 1);
        let mut image = host.clone();
        let mut mask = Mask::new(hw, hh);
        for dy in 0..sh {
            let sy = by0 + src(dy, sh, bh);
            for dx in 0..sw {
                let sx = bx0 + src(dx, sw, bw);
                if donor_mask.get(sx, sy) {
                    image.put(px + dx, py + dy, donor.get(sx, sy));
                    mask.set(px + dx, py + dy, true);
                }
            }
        }
        let ratio = mask.ratio();
        let ratio_ok = opts.ratio_range.is_none_or(|(lo, hi)| (lo..=hi).contains(&ratio));
        if mask.count() == 0 || !ratio_ok {
            continue;
        }
        return Ok(ForgerySample {
            image,
            mask,
            provenance: Provenance {
                host_id: String::new(),
                donor_id: String::new(),
                paste: PasteTransform {
                    x: px,
                    y: py,
                    scale,
                    width: sw,
                    height: sh,
                },
                augmentations: Vec::new(),
            },
        });
    }
    Err(Error::config(format!(
        "composite: donor region {bw}x{bh} does not fit a {hw}x{hh} host after {} tries",
        opts.max_tries
    )))
}

/// Host, donor and donor mask feeding one synthetic sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcePair {
    pub host: RgbImage,
    pub donor: RgbImage,
    pub donor_mask: Mask,
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Smooth texture: a linear color ramp plus bilinearly upsampled 4x4 noise.
pub fn procedural_host(size: usize, rng: &mut RngStream) -> RgbImage {
    const GRID: usize = 4;
    let base: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(50.0, 205.0));
    let slope: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(-40.0, 40.0));
    let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let grid: Vec<[f64; 3]> = (0..GRID * GRID)
        .map(|_| std::array::from_fn(|_| 12.0 * rng.normal()))
        .collect();
    let mut img = RgbImage::new(size, size);
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let t = (u - 0.5) * dx + (v - 0.5) * dy;
            let gx = (u * GRID as f64 - 0.5).clamp(0.0, (GRID - 1) as f64);
            let gy = (v * GRID as f64 - 0.5).clamp(0.0, (GRID - 1) as f64);
            let (x0, y0) = ((gx as usize).min(GRID - 2), (gy as usize).min(GRID - 2));
            let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
            let at = |i: usize, j: usize, c: usize| grid[j * GRID + i][c];
            let rgb = std::array::from_fn(|c| {
                let lf = (1.0 - fy) * ((1.0 - fx) * at(x0, y0, c) + fx * at(x0 + 1, y0, c))
                    + fy * ((1.0 - fx) * at(x0, y0 + 1, c) + fx * at(x0 + 1, y0 + 1, c));
                to_u8(base[c] + 2.0 * slope[c] * t + lf)
            });
            img.put(x, y, rgb);
        }
    }
    img
}

/// White-noise texture with a wobbly elliptical object mask covering
/// 8% to 16% of the frame.
pub fn procedural_donor(size: usize, rng: &mut RngStream) -> (RgbImage, Mask) {
    let base: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(50.0, 205.0));
    let sigma = rng.uniform_range(18.0, 30.0);
    let mut img = RgbImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let rgb = std::array::from_fn(|c| to_u8(base[c] + sigma * rng.normal()));
            img.put(x, y, rgb);
        }
    }
    let s = size as f64;
    let area = rng.uniform_range(0.08, 0.16) * s * s;
    let aspect = rng.uniform_range(0.7, 1.4);
    let (ra, rb) = ((area / std::f64::consts::PI * aspect).sqrt(), (area / std::f64::consts::PI / aspect).sqrt());
    let rot = rng.uniform_range(0.0, std::f64::consts::PI);
    let lobes = 2.0 + rng.below(3) as f64;
    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let wobble = rng.uniform_range(0.0, 0.15);
    let c = s / 2.0;
    let mut mask = Mask::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
            let (u, v) = (px * rot.cos() + py * rot.sin(), -px * rot.sin() + py * rot.cos());
            let theta = v.atan2(u);
            let r = 1.0 + wobble * (lobes * theta + phase).sin();
            mask.set(x, y, (u / ra).powi(2) + (v / rb).powi(2) <= r * r);
        }
    }
    (img, mask)
}

/// Sources of procedural sample `index`.
pub fn procedural_sources(seed: u64, index: usize, size: usize) -> SourcePair {
    let mut rng = RngStream::derive_indexed(seed, "sources", index as u64);
    let host = procedural_host(size, &mut rng);
    let (donor, donor_mask) = procedural_donor(size, &mut rng);
    SourcePair {
        host,
        donor,
        donor_mask,
    }
}

/// `n` forgeries of `size x size` pixels; sample `i` depends only on
/// `(seed, i)`, so the result does not depend on the worker count.
pub fn procedural_corpus(n: usize, size: usize, seed: u64) -> Result<Vec<ForgerySample>> {
    if n == 0 {
        return Err(Error::config("corpus size must be at least 1"));
    }
    if size < 8 {
        return Err(Error::config(format!("image size {size} too small")));
    }
    let opts = CompositeOptions {
        ratio_range: Some(CORPUS_RATIO_RANGE),
        ..CompositeOptions::default()
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let src = procedural_sources(seed, i, size);
            let mut rng = RngStream::derive_indexed(seed, "sample", i as u64);
            let mut s = composite_with(&src.host, &src.donor, &src.donor_mask, &opts, &mut rng)?;
            s.provenance.host_id = format!("host{i:06}");
            s.provenance.donor_id = format!("donor{i:06}");
            Ok(s)
        })
        .collect()
}

/// Mean squared response of the 3x3 Laplacian over interior pixels and
/// all channels.
pub fn laplacian_energy(img: &RgbImage) -> f64 {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let v = |x: usize, y: usize| f64::from(img.data[(y * w + x) * 3 + c]);
                let l = 4.0 * v(x, y) - v(x - 1, y) - v(x + 1, y) - v(x, y - 1) - v(x, y + 1);
                total += l * l;
            }
        }
    }
    total / ((w - 2) * (h - 2) * 3) as f64
}
