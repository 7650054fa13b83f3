//! UPerNet-style decoder.
//!
//! `X4` passes through a pyramid pooling module to give `Y4`; each lateral
//! connection upsamples `Y_{i+1}` by two, concatenates it with a 1x1
//! projection of `X_i` and smooths with a 3x3 convolution to give `Y_i`.
//! The fused maps are aligned to the finest level, concatenated, reduced by
//! a 3x3 convolution and classified per pixel into pristine/tampered.
//!
//! Every decoder convolution except the classifier is followed by GELU.

use std::fmt;

use crate::encoder::{EncoderConfig, StageOutputs};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::ConvLayer;
use crate::ops::ConvSpec;
use crate::params::{Binder, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Logit / probability channel of the tampered class.
pub const TAMPERED: usize = 1;
pub const PRISTINE: usize = 0;

/// Which encoder levels the decoder fuses: always `X4` plus the next
/// `depth - 1` finer levels (`{X4}`, `{X4,X3}`, `{X4,X3,X2}`, all four).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FuseSubset {
    depth: usize,
}

impl FuseSubset {
    pub const ALL: FuseSubset = FuseSubset { depth: 4 };
    pub const X4_ONLY: FuseSubset = FuseSubset { depth: 1 };

    pub fn with_depth(depth: usize) -> Result<Self> {
        if !(1..=4).contains(&depth) {
            return Err(Error::config(format!("fuse depth {depth} outside 1..=4")));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Encoder levels (1-based) from coarsest to finest.
    pub fn levels(&self) -> impl Iterator<Item = usize> {
        (5 - self.depth..=4).rev()
    }

    /// Parses `X4,X3,...`; the set must contain `X4` and be contiguous.
    pub fn parse(s: &str) -> Result<Self> {
        let mut levels: Vec<usize> = s
            .split(',')
            .map(|t| {
                t.trim()
                    .strip_prefix(['X', 'x'])
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|d| (1..=4).contains(d))
                    .ok_or_else(|| Error::config(format!("bad fuse level `{}`", t.trim())))
            })
            .collect::<Result<_>>()?;
        levels.sort_unstable_by(|a, b| b.cmp(a));
        levels.dedup();
        let contiguous = levels.iter().enumerate().all(|(i, &l)| l == 4 - i);
        if !contiguous {
            return Err(Error::config(format!(
                "fuse subset `{s}` must contain X4 and consecutive finer levels"
            )));
        }
        Self::with_depth(levels.len())
    }
}

impl fmt::Display for FuseSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.levels().map(|l| format!("X{l}")).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub fpn_channels: usize,
    pub ppm_bins: Vec<usize>,
    pub fuse: FuseSubset,
}

impl DecoderConfig {
    pub fn full(encoder: &EncoderConfig) -> Self {
        Self {
            fpn_channels: encoder.channels,
            ppm_bins: vec![1, 2, 3, 6],
            fuse: FuseSubset::ALL,
        }
    }

    /// `X4` is only 2x2 for 64x64 inputs, so the pyramid stops at 2 bins.
    pub fn desk(encoder: &EncoderConfig) -> Self {
        Self {
            ppm_bins: vec![1, 2],
            ..Self::full(encoder)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ppm_bins.is_empty() || self.ppm_bins[0] == 0 {
            return Err(Error::config("ppm_bins must be a non-empty list of positive sizes"));
        }
        if self.ppm_bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "ppm_bins {:?} must be strictly increasing",
                self.ppm_bins
            )));
        }
        if self.fpn_channels == 0 || !self.fpn_channels.is_multiple_of(self.ppm_bins.len()) {
            return Err(Error::config(format!(
                "fpn_channels {} must be a positive multiple of the number of pyramid bins {}",
                self.fpn_channels,
                self.ppm_bins.len()
            )));
        }
        Ok(())
    }

    /// Checks the pyramid against the spatial size of `X4`.
    pub fn check_x4_size(&self, h: usize, w: usize) -> Result<()> {
        let max = *self.ppm_bins.last().expect("validated non-empty");
        if max > h.min(w) {
            return Err(Error::config(format!(
                "largest pyramid bin {max} exceeds the {h}x{w} X4 map"
            )));
        }
        Ok(())
    }
}

/// Per-pixel tamper probabilities and the logits they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationMap {
    /// `(N, 1, H, W)` tampered-class probabilities.
    pub probs: Tensor,
    /// `(N, 2, H, W)`, channel 0 pristine, channel 1 tampered.
    pub logits: Tensor,
}

#[derive(Clone, Debug)]
struct Lateral {
    proj: ConvLayer,
    fuse: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    cfg: DecoderConfig,
    ppm_branches: Vec<ConvLayer>,
    ppm_bottleneck: ConvLayer,
    /// Indexed by encoder level - 1; only levels below 4 in the subset exist.
    laterals: Vec<Option<Lateral>>,
    head_fuse: ConvLayer,
    classifier: ConvLayer,
}

impl Decoder {
    pub fn new(cfg: &DecoderConfig, encoder: &EncoderConfig, store: &mut ParamStore, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let cf = cfg.fpn_channels;
        let c4 = encoder.stage_channels(3);
        let branch_ch = cf / cfg.ppm_bins.len();
        let ppm_branches = cfg
            .ppm_bins
            .iter()
            .map(|b| ConvLayer::new(store, &format!("decoder.ppm.bin{b}"), ConvSpec::new(c4, branch_ch, 1), rng))
            .collect::<Result<Vec<_>>>()?;
        let ppm_bottleneck = ConvLayer::new(
            store,
            "decoder.ppm.bottleneck",
            ConvSpec::new(c4 + branch_ch * cfg.ppm_bins.len(), cf, 3).with_padding(1),
            rng,
        )?;
        let mut laterals = vec![None, None, None, None];
        for level in cfg.fuse.levels().filter(|&l| l < 4) {
            let ci = encoder.stage_channels(level - 1);
            laterals[level - 1] = Some(Lateral {
                proj: ConvLayer::new(store, &format!("decoder.lateral{level}.proj"), ConvSpec::new(ci, cf, 1), rng)?,
                fuse: ConvLayer::new(
                    store,
                    &format!("decoder.lateral{level}.fuse"),
                    ConvSpec::new(2 * cf, cf, 3).with_padding(1),
                    rng,
                )?,
            });
        }
        let head_fuse = ConvLayer::new(
            store,
            "decoder.head.fuse",
            ConvSpec::new(cfg.fuse.depth() * cf, cf, 3).with_padding(1),
            rng,
        )?;
        let classifier = ConvLayer::new(store, "decoder.head.classifier", ConvSpec::new(cf, 2, 1), rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            ppm_branches,
            ppm_bottleneck,
            laterals,
            head_fuse,
            classifier,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Pyramid pooling on `X4`; the result keeps `X4`'s spatial size.
    pub fn ppm(&self, g: &mut Graph, b: &mut Binder, x4: Var) -> Result<Var> {
        let s = g.shape(x4);
        self.cfg.check_x4_size(s.h, s.w)?;
        let mut parts = Vec::with_capacity(self.ppm_branches.len() + 1);
        for (&bins, conv) in self.cfg.ppm_bins.iter().zip(&self.ppm_branches) {
            let pooled = g.adaptive_avg_pool(x4, bins)?;
            let h = conv.forward(g, b, pooled)?;
            let h = g.gelu(h);
            parts.push(g.resize(h, s.h, s.w)?);
        }
        parts.push(x4);
        let cat = g.concat(&parts)?;
        let y = self.ppm_bottleneck.forward(g, b, cat)?;
        Ok(g.gelu(y))
    }

    /// Lateral connection at encoder `level` (1..=3).
    pub fn lateral(&self, g: &mut Graph, b: &mut Binder, level: usize, y_next: Var, x: Var) -> Result<Var> {
        let lat = self
            .laterals
            .get(level.wrapping_sub(1))
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::config(format!("no lateral connection for level X{level}")))?;
        let (ys, xs) = (g.shape(y_next), g.shape(x));
        if ys.n != xs.n || 2 * ys.h != xs.h || 2 * ys.w != xs.w {
            return Err(Error::ShapeMismatch {
                op: "lateral",
                left: ys.to_string(),
                right: xs.to_string(),
            });
        }
        let up = g.resize(y_next, xs.h, xs.w)?;
        let proj = lat.proj.forward(g, b, x)?;
        let proj = g.gelu(proj);
        let cat = g.concat(&[up, proj])?;
        let y = lat.fuse.forward(g, b, cat)?;
        Ok(g.gelu(y))
    }

    /// Aligns `ys` (coarse to fine) to the finest map, fuses, classifies and
    /// upsamples to the target size. Returns `(logits, probs)` where `probs`
    /// is the two-channel softmax.
    pub fn fuse_head(&self, g: &mut Graph, b: &mut Binder, ys: &[Var], target_h: usize, target_w: usize) -> Result<(Var, Var)> {
        let finest = *ys
            .last()
            .ok_or_else(|| Error::config("fuse_head needs at least one feature map"))?;
        let fs = g.shape(finest);
        let aligned = ys
            .iter()
            .map(|&y| g.resize(y, fs.h, fs.w))
            .collect::<Result<Vec<_>>>()?;
        let cat = g.concat(&aligned)?;
        let h = self.head_fuse.forward(g, b, cat)?;
        let h = g.gelu(h);
        let logits = self.classifier.forward(g, b, h)?;
        let logits = g.resize(logits, target_h, target_w)?;
        let probs = g.softmax(logits)?;
        Ok((logits, probs))
    }

    pub fn decode(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        features: &StageOutputs<Var>,
        target_h: usize,
        target_w: usize,
    ) -> Result<(Var, Var)> {
        let mut y = self.ppm(g, b, features.x[3])?;
        let mut ys = vec![y];
        for level in self.cfg.fuse.levels().filter(|&l| l < 4) {
            y = self.lateral(g, b, level, y, features.x[level - 1])?;
            ys.push(y);
        }
        self.fuse_head(g, b, &ys, target_h, target_w)
    }
}
