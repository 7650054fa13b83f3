//! On-disk dataset layout.
//!
//! ```text
//! images/NNNNNN.ppm
//! masks/NNNNNN.pgm
//! manifest.txt
//! ```
//!
//! External donor corpora use `images/<id>.ppm` next to
//! `donor_masks/<id>.pgm`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
use super::synth::{composite_with, CompositeOptions, ForgerySample, CORPUS_RATIO_RANGE};
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage};
use crate::rng::RngStream;

pub const MANIFEST: &str = "manifest.txt";

/// One manifest line (without trailing newline).
pub fn manifest_line(index: usize, s: &ForgerySample) -> String {
    let p = &s.provenance;
    let aug = if p.augmentations.is_empty() {
        "none".to_string()
    } else {
        p.augmentations.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
    };
    format!(
        "{index:06} host={} donor={} paste=x:{},y:{},scale:{:.6},size:{}x{} aug={aug}",
        p.host_id, p.donor_id, p.paste.x, p.paste.y, p.paste.scale, p.paste.width, p.paste.height
    )
}

pub fn write_dataset(dir: &Path, samples: &[ForgerySample]) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        write_ppm(&dir.join(format!("images/{i:06}.ppm")), &s.image)?;
        write_pgm(&dir.join(format!("masks/{i:06}.pgm")), &s.mask.to_gray())?;
        manifest.push_str(&manifest_line(i, s));
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// An image and its ground-truth mask as loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub name: String,
    pub image: RgbImage,
    pub mask: Mask,
}

/// Loads every sample listed in the manifest, in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledImage>> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)?;
    let names: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().next().unwrap_or_default().to_string())
        .collect();
    if names.is_empty() {
        return Err(Error::format(manifest_path, "no samples listed"));
    }
    names
        .into_par_iter()
        .map(|name| {
            let image = read_ppm(&dir.join(format!("images/{name}.ppm")))?;
            let mask_path = dir.join(format!("masks/{name}.pgm"));
            let gray = read_pgm(&mask_path)?;
            if (gray.width, gray.height) != (image.width, image.height) {
                return Err(Error::format(
                    mask_path,
                    format!(
                        "mask is {}x{} but image is {}x{}",
                        gray.width, gray.height, image.width, image.height
                    ),
                ));
            }
            Ok(LabeledImage {
                name,
                mask: Mask::from_gray(&gray),
                image,
            })
        })
        .collect()
}

/// Sorted `*.<ext>` files of a directory.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Donor {
    pub id: String,
    pub image: RgbImage,
    pub mask: Mask,
}

/// Reads `images/*.ppm` with their `donor_masks/*.pgm` object masks.
pub fn load_donors(dir: &Path) -> Result<Vec<Donor>> {
    list_files(&dir.join("images"), "ppm")?
        .into_iter()
        .map(|p| {
            let id = stem(&p);
            let image = read_ppm(&p)?;
            let mask_path = dir.join(format!("donor_masks/{id}.pgm"));
            let mask = Mask::from_gray(&read_pgm(&mask_path)?);
            if (mask.width, mask.height) != (image.width, image.height) {
                return Err(Error::format(mask_path, "donor mask size differs from image"));
            }
            Ok(Donor { id, image, mask })
        })
        .collect()
}

/// Reads host images from `*.ppm` files of a directory.
pub fn load_hosts(dir: &Path) -> Result<Vec<(String, RgbImage)>> {
    list_files(dir, "ppm")?
        .into_iter()
        .map(|p| Ok((stem(&p), read_ppm(&p)?)))
        .collect()
}

/// `n` forgeries from external hosts and donors; sample `i` draws its host,
/// donor and placement from a stream keyed by `(seed, i)`.
pub fn synthesize_from(
    hosts: &[(String, RgbImage)],
    donors: &[Donor],
    n: usize,
    seed: u64,
) -> Result<Vec<ForgerySample>> {
    if hosts.is_empty() || donors.is_empty() {
        return Err(Error::config("need at least one host and one donor"));
    }
    let opts = CompositeOptions {
        ratio_range: Some(CORPUS_RATIO_RANGE),
        ..CompositeOptions::default()
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::derive_indexed(seed, "sample", i as u64);
            let (host_id, host) = &hosts[rng.below(hosts.len())];
            let donor = &donors[rng.below(donors.len())];
            let mut s = composite_with(host, &donor.image, &donor.mask, &opts, &mut rng)?;
            s.provenance.host_id = host_id.clone();
            s.provenance.donor_id = donor.id.clone();
            Ok(s)
        })
        .collect()
}
