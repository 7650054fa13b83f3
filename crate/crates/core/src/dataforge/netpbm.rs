//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], path: &Path) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            path,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "missing separator after header"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero-sized image"));
    }
    Ok(Header {
        width,
        height,
        data_start: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize, path: &Path) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let data = &bytes[h.data_start..];
    if data.len() != need {
        return Err(Error::format(
            path,
            format!("expected {need} bytes of pixel data, found {}", data.len()),
        ));
    }
    Ok(data)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let h = parse_header(bytes, b"P6", path)?;
    let data = payload(bytes, &h, 3, path)?;
    RgbImage::from_raw(h.width, h.height, data.to_vec())
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let h = parse_header(bytes, b"P5", path)?;
    let data = payload(bytes, &h, 1, path)?;
    GrayImage::from_raw(h.width, h.height, data.to_vec())
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?, path)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?, path)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    Ok(fs::write(path, encode_ppm(img))?)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    Ok(fs::write(path, encode_pgm(img))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let img = RgbImage::from_raw(2, 1, vec![1, 2, 3, 250, 251, 10]).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(decode_ppm(&bytes, Path::new("x.ppm")).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # made by hand\n3 # width\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let g = decode_pgm(&bytes, Path::new("x.pgm")).unwrap();
        assert_eq!((g.width, g.height, g.data), (3, 1, vec![0, 128, 255]));
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("bad.pgm");
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\0\0\0", p), Err(Error::Format { .. })));
        assert!(decode_pgm(b"P5\n2 2\n255\n\0\0", p).is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\0\0", p).is_err());
        assert!(decode_pgm(b"P5\n1", p).is_err());
    }
}
