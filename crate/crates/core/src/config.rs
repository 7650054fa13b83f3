//! Plain-text run configuration: `key = value` lines, `#` comments.
//!
//! A `preset` line selects the starting point and must come before any
//! other key. Unknown keys are rejected. [`RunConfig::to_text`] writes every
//! key in a fixed order and parses back to an identical configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataforge::AugmentConfig;
use crate::decoder::FuseSubset;
use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::NetConfig;
use crate::trainer::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(Error::config(format!("unknown preset `{s}` (desk | full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub net: NetConfig,
    /// Training settings; `train.augment` is derived from `augment` and
    /// `use_augment` by [`RunConfig::training`].
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub use_augment: bool,
    /// Sample count and side length for `synth`.
    pub n: usize,
    pub size: usize,
    pub threshold: f64,
}

const KEYS: &[&str] = &[
    "preset",
    "encoder",
    "channels",
    "blocks",
    "layer_scale_init",
    "fpn_channels",
    "ppm_bins",
    "fuse",
    "loss",
    "focal_alpha",
    "focal_gamma",
    "lambda_focal",
    "lambda_lovasz",
    "prob_eps",
    "n",
    "size",
    "augment",
    "resize_range",
    "crop",
    "flip_p",
    "noise_p",
    "blur_p",
    "photometric_p",
    "jpeg_p",
    "jpeg_quality",
    "brightness",
    "contrast",
    "saturation",
    "hue_degrees",
    "noise_sigma",
    "blur_sigma",
    "base_lr",
    "warmup_iters",
    "warmup_ratio",
    "max_iters",
    "batch_size",
    "poly_power",
    "beta1",
    "beta2",
    "adam_eps",
    "weight_decay",
    "grad_clip",
    "seed",
    "checkpoint_every",
    "log_every",
    "holdout",
    "threshold",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|t| parse_num(key, t.trim())).collect()
}

fn parse_pair<T: std::str::FromStr + Copy>(key: &str, v: &str) -> Result<(T, T)> {
    match parse_list::<T>(key, v)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err(Error::config(format!("`{key}` expects two comma-separated values"))),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("`{key}` expects true or false, got `{v}`"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                preset,
                net: NetConfig::desk(),
                train: TrainConfig::desk(),
                augment: AugmentConfig::desk(),
                use_augment: false,
                n: 16,
                size: 64,
                threshold: DEFAULT_THRESHOLD,
            },
            Preset::Full => Self {
                preset,
                net: NetConfig::full(),
                train: TrainConfig::full(),
                augment: AugmentConfig::full(),
                use_augment: true,
                n: 16,
                size: 512,
                threshold: DEFAULT_THRESHOLD,
            },
        }
    }

    /// The trainer's view, with augmentation resolved.
    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            augment: self.use_augment.then(|| self.augment.clone()),
            ..self.train.clone()
        }
    }

    /// Sets one key. `preset` is only accepted through [`RunConfig::parse_str`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let enc = &mut self.net.encoder;
        let dec = &mut self.net.decoder;
        let tr = &mut self.train;
        let lc = &mut tr.loss_cfg;
        let au = &mut self.augment;
        match key {
            "preset" => {
                return Err(Error::config("`preset` must be the first key of a config file"));
            }
            "encoder" => enc.kind = EncoderKind::parse(v)?,
            "channels" => enc.channels = parse_num(key, v)?,
            "blocks" => {
                let b: Vec<usize> = parse_list(key, v)?;
                enc.blocks_per_stage = b
                    .try_into()
                    .map_err(|_| Error::config("`blocks` expects four comma-separated counts"))?;
            }
            "layer_scale_init" => enc.layer_scale_init = parse_num(key, v)?,
            "fpn_channels" => dec.fpn_channels = parse_num(key, v)?,
            "ppm_bins" => dec.ppm_bins = parse_list(key, v)?,
            "fuse" => dec.fuse = FuseSubset::parse(v)?,
            "loss" => tr.loss = LossKind::parse(v)?,
            "focal_alpha" => lc.alpha = parse_num(key, v)?,
            "focal_gamma" => lc.gamma = parse_num(key, v)?,
            "lambda_focal" => lc.lambda_focal = parse_num(key, v)?,
            "lambda_lovasz" => lc.lambda_lovasz = parse_num(key, v)?,
            "prob_eps" => lc.eps = parse_num(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "size" => self.size = parse_num(key, v)?,
            "augment" => self.use_augment = parse_bool(key, v)?,
            "resize_range" => au.resize_range = parse_pair(key, v)?,
            "crop" => au.crop = parse_pair(key, v)?,
            "flip_p" => au.flip_p = parse_num(key, v)?,
            "noise_p" => au.noise_p = parse_num(key, v)?,
            "blur_p" => au.blur_p = parse_num(key, v)?,
            "photometric_p" => au.photometric_p = parse_num(key, v)?,
            "jpeg_p" => au.jpeg_p = parse_num(key, v)?,
            "jpeg_quality" => au.jpeg_quality = parse_pair(key, v)?,
            "brightness" => au.brightness = parse_num(key, v)?,
            "contrast" => au.contrast = parse_num(key, v)?,
            "saturation" => au.saturation = parse_num(key, v)?,
            "hue_degrees" => au.hue_degrees = parse_num(key, v)?,
            "noise_sigma" => au.noise_sigma = parse_pair(key, v)?,
            "blur_sigma" => au.blur_sigma = parse_pair(key, v)?,
            "base_lr" => tr.base_lr = parse_num(key, v)?,
            "warmup_iters" => tr.warmup_iters = parse_num(key, v)?,
            "warmup_ratio" => tr.warmup_ratio = parse_num(key, v)?,
            "max_iters" => tr.max_iters = parse_num(key, v)?,
            "batch_size" => tr.batch_size = parse_num(key, v)?,
            "poly_power" => tr.poly_power = parse_num(key, v)?,
            "beta1" => tr.beta1 = parse_num(key, v)?,
            "beta2" => tr.beta2 = parse_num(key, v)?,
            "adam_eps" => tr.adam_eps = parse_num(key, v)?,
            "weight_decay" => tr.weight_decay = parse_num(key, v)?,
            "grad_clip" => {
                tr.grad_clip = if v == "none" { None } else { Some(parse_num(key, v)?) }
            }
            "seed" => tr.seed = parse_num(key, v)?,
            "checkpoint_every" => tr.checkpoint_every = parse_num(key, v)?,
            "log_every" => tr.log_every = parse_num(key, v)?,
            "holdout" => tr.holdout = parse_bool(key, v)?,
            "threshold" => self.threshold = parse_num(key, v)?,
            _ => return Err(Error::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg: Option<Self> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| Error::config(format!("line {}: {e}", no + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(Error::config(format!("expected key = value, got `{line}`"))))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                if cfg.is_some() {
                    return Err(at(Error::config("`preset` must be the first key")));
                }
                cfg = Some(Self::preset(Preset::parse(v).map_err(at)?));
                continue;
            }
            cfg.get_or_insert_with(|| Self::preset(Preset::Desk))
                .set(k, v)
                .map_err(at)?;
        }
        Ok(cfg.unwrap_or_else(|| Self::preset(Preset::Desk)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.training().validate()?;
        self.augment.validate()?;
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if self.size < 8 {
            return Err(Error::config(format!("size {} is too small", self.size)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let enc = &self.net.encoder;
        let dec = &self.net.decoder;
        let tr = &self.train;
        let lc = &tr.loss_cfg;
        let au = &self.augment;
        match key {
            "preset" => self.preset.as_str().to_string(),
            "encoder" => enc.kind.as_str().to_string(),
            "channels" => enc.channels.to_string(),
            "blocks" => join(&enc.blocks_per_stage),
            "layer_scale_init" => enc.layer_scale_init.to_string(),
            "fpn_channels" => dec.fpn_channels.to_string(),
            "ppm_bins" => join(&dec.ppm_bins),
            "fuse" => dec.fuse.to_string(),
            "loss" => tr.loss.as_str().to_string(),
            "focal_alpha" => lc.alpha.to_string(),
            "focal_gamma" => lc.gamma.to_string(),
            "lambda_focal" => lc.lambda_focal.to_string(),
            "lambda_lovasz" => lc.lambda_lovasz.to_string(),
            "prob_eps" => lc.eps.to_string(),
            "n" => self.n.to_string(),
            "size" => self.size.to_string(),
            "augment" => self.use_augment.to_string(),
            "resize_range" => join(&[au.resize_range.0, au.resize_range.1]),
            "crop" => join(&[au.crop.0, au.crop.1]),
            "flip_p" => au.flip_p.to_string(),
            "noise_p" => au.noise_p.to_string(),
            "blur_p" => au.blur_p.to_string(),
            "photometric_p" => au.photometric_p.to_string(),
            "jpeg_p" => au.jpeg_p.to_string(),
            "jpeg_quality" => join(&[au.jpeg_quality.0, au.jpeg_quality.1]),
            "brightness" => au.brightness.to_string(),
            "contrast" => au.contrast.to_string(),
            "saturation" => au.saturation.to_string(),
            "hue_degrees" => au.hue_degrees.to_string(),
            "noise_sigma" => join(&[au.noise_sigma.0, au.noise_sigma.1]),
            "blur_sigma" => join(&[au.blur_sigma.0, au.blur_sigma.1]),
            "base_lr" => tr.base_lr.to_string(),
            "warmup_iters" => tr.warmup_iters.to_string(),
            "warmup_ratio" => tr.warmup_ratio.to_string(),
            "max_iters" => tr.max_iters.to_string(),
            "batch_size" => tr.batch_size.to_string(),
            "poly_power" => tr.poly_power.to_string(),
            "beta1" => tr.beta1.to_string(),
            "beta2" => tr.beta2.to_string(),
            "adam_eps" => tr.adam_eps.to_string(),
            "weight_decay" => tr.weight_decay.to_string(),
            "grad_clip" => tr.grad_clip.map_or("none".to_string(), |c| c.to_string()),
            "seed" => tr.seed.to_string(),
            "checkpoint_every" => tr.checkpoint_every.to_string(),
            "log_every" => tr.log_every.to_string(),
            "holdout" => tr.holdout.to_string(),
            "threshold" => self.threshold.to_string(),
            _ => unreachable!("key table out of sync: {key}"),
        }
    }

    /// Every key in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        Ok(fs::write(dir.join(RESOLVED_CONFIG_FILE), self.to_text())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        for preset in [Preset::Desk, Preset::Full] {
            let mut cfg = RunConfig::preset(preset);
            cfg.set("base_lr", "3.3e-3").unwrap();
            cfg.set("grad_clip", "1.5").unwrap();
            cfg.set("fuse", "X4,X3").unwrap();
            let text = cfg.to_text();
            let back = RunConfig::parse_str(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::preset(Preset::Desk);
        for key in KEYS.iter().filter(|&&k| k != "preset") {
            let mut c = cfg.clone();
            c.set(key, &cfg.value_of(key)).unwrap();
            assert_eq!(c, cfg, "{key}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let err = RunConfig::parse_str("# hi\nseed = 3\nlearning_rate = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn comments_and_preset() {
        let cfg = RunConfig::parse_str("preset = full # big\n\nseed = 9 # trailing\n").unwrap();
        assert_eq!(cfg.preset, Preset::Full);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.net.encoder.blocks_per_stage, [3, 3, 27, 3]);
        assert!(RunConfig::parse_str("seed = 1\npreset = desk\n").is_err());
    }

    #[test]
    fn bad_values() {
        let mut c = RunConfig::preset(Preset::Desk);
        assert!(c.set("blocks", "1,2,3").is_err());
        assert!(c.set("augment", "yes").is_err());
        assert!(c.set("crop", "64").is_err());
        assert!(c.set_assignment("seed").is_err());
        c.set("n", "0").unwrap();
        assert!(c.validate().is_err());
    }
}
