//! In-memory baseline JPEG round trip.
//!
//! Color conversion, 4:2:0 chroma subsampling, 8x8 DCT, quantization and
//! the inverse path. Entropy coding is lossless and therefore skipped.

use crate::error::{Error, Result};
use crate::image::RgbImage;

#[rustfmt::skip]
const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality-scaled `(luma, chroma)` quantization tables, row-major.
pub fn quant_tables(quality: u32) -> Result<([u16; 64], [u16; 64])> {
    if !(1..=100).contains(&quality) {
        return Err(Error::config(format!("JPEG quality {quality} outside [1, 100]")));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let table = |base: &[u16; 64]| {
        base.map(|b| ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16)
    };
    Ok((table(&LUMA_BASE), table(&CHROMA_BASE)))
}

/// `basis[u][x] = c(u) cos((2x + 1) u pi / 16)`, orthonormal.
fn dct_basis() -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for (u, row) in t.iter_mut().enumerate() {
        let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = c * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    t
}

/// Forward DCT, quantize, dequantize, inverse DCT of one level-shifted block.
fn roundtrip_block(block: &mut [f64; 64], table: &[u16; 64], t: &[[f64; 8]; 8]) {
    let mut tmp = [0.0; 64];
    let mut coef = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| t[u][y] * block[y * 8 + x]).sum();
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            coef[u * 8 + v] = (0..8).map(|x| tmp[u * 8 + x] * t[v][x]).sum();
        }
    }
    for (c, &q) in coef.iter_mut().zip(table) {
        let q = f64::from(q);
        *c = (*c / q).round() * q;
    }
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| t[u][y] * coef[u * 8 + v]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * t[v][x]).sum();
        }
    }
}

fn roundtrip_plane(plane: &mut [f64], width: usize, height: usize, table: &[u16; 64]) {
    let t = dct_basis();
    let mut block = [0.0; 64];
    for by in (0..height).step_by(8) {
        for bx in (0..width).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * width + bx + x] - 128.0;
                }
            }
            roundtrip_block(&mut block, table, &t);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * width + bx + x] = block[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// Compresses and decompresses `img` at `quality` in [1, 100].
pub fn jpeg_roundtrip(img: &RgbImage, quality: u32) -> Result<RgbImage> {
    let (luma_q, chroma_q) = quant_tables(quality)?;
    let (w, h) = (img.width, img.height);
    // Whole 16x16 macroblocks, edge-replicated.
    let pw = w.div_ceil(16) * 16;
    let ph = h.div_ceil(16) * 16;
    let mut yp = vec![0.0; pw * ph];
    let mut cb_full = vec![0.0; pw * ph];
    let mut cr_full = vec![0.0; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let [r, g, b] = img.get(x.min(w - 1), y.min(h - 1)).map(f64::from);
            let i = y * pw + x;
            yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb_full[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            cr_full[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
        }
    }
    let (cw, ch) = (pw / 2, ph / 2);
    let subsample = |full: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; cw * ch];
        for y in 0..ch {
            for x in 0..cw {
                let i = 2 * y * pw + 2 * x;
                out[y * cw + x] = (full[i] + full[i + 1] + full[i + pw] + full[i + pw + 1]) / 4.0;
            }
        }
        out
    };
    let mut cb = subsample(&cb_full);
    let mut cr = subsample(&cr_full);

    roundtrip_plane(&mut yp, pw, ph, &luma_q);
    roundtrip_plane(&mut cb, cw, ch, &chroma_q);
    roundtrip_plane(&mut cr, cw, ch, &chroma_q);

    let mut out = RgbImage::new(w, h);
    let to_u8 = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    for y in 0..h {
        for x in 0..w {
            let l = yp[y * pw + x];
            let b = cb[(y / 2) * cw + x / 2] - 128.0;
            let r = cr[(y / 2) * cw + x / 2] - 128.0;
            out.put(
                x,
                y,
                [
                    to_u8(l + 1.402 * r),
                    to_u8(l - 0.344_136 * b - 0.714_136 * r),
                    to_u8(l + 1.772 * b),
                ],
            );
        }
    }
    Ok(out)
}

/// Peak signal-to-noise ratio in dB over all channels; infinite when equal.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            left: format!("{}x{}", a.width, a.height),
            right: format!("{}x{}", b.width, b.height),
        });
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_scaling() {
        let (l, c) = quant_tables(50).unwrap();
        assert_eq!(l, LUMA_BASE);
        assert_eq!(c, CHROMA_BASE);
        let (l, c) = quant_tables(100).unwrap();
        assert!(l.iter().chain(&c).all(|&q| q == 1));
        let (l, _) = quant_tables(1).unwrap();
        assert!(l.iter().all(|&q| q == 255));
        // 16 * (200 - 180) / 100 = 3.2 -> 3
        assert_eq!(quant_tables(90).unwrap().0[0], 3);
        assert!(quant_tables(0).is_err());
        assert!(quant_tables(101).is_err());
    }

    #[test]
    fn basis_is_orthonormal() {
        let t = dct_basis();
        for a in 0..8 {
            for b in 0..8 {
                let dot: f64 = (0..8).map(|x| t[a][x] * t[b][x]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_block_by_hand() {
        // A flat 8x8 luma block of value v has a single DC coefficient
        // 8 (v - 128); with step q it comes back as round(8 (v - 128) / q) q / 8.
        let (v, q) = (200.0, 10u16);
        let mut block = [v - 128.0; 64];
        roundtrip_block(&mut block, &[q; 64], &dct_basis());
        let dc = 8.0 * (v - 128.0);
        let want = (dc / f64::from(q)).round() * f64::from(q) / 8.0;
        assert!(block.iter().all(|&b| (b - want).abs() < 1e-9), "{block:?}");
    }

    #[test]
    fn odd_sizes_keep_dimensions() {
        let img = RgbImage::filled(13, 7, [10, 200, 90]);
        let out = jpeg_roundtrip(&img, 80).unwrap();
        assert_eq!((out.width, out.height), (13, 7));
    }
}
