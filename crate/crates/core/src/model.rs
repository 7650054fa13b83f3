//! Encoder + decoder assembled into the localization network.

use rayon::prelude::*;

use crate::decoder::{Decoder, DecoderConfig, LocalizationMap, TAMPERED};
use crate::encoder::{Encoder, EncoderConfig, StageOutputs};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Binder, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl NetConfig {
    pub fn full() -> Self {
        let encoder = EncoderConfig::full();
        let decoder = DecoderConfig::full(&encoder);
        Self { encoder, decoder }
    }

    pub fn desk() -> Self {
        let encoder = EncoderConfig::desk();
        let decoder = DecoderConfig::desk(&encoder);
        Self { encoder, decoder }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()
    }
}

/// Vars produced by one forward pass.
pub struct Forward {
    pub features: StageOutputs<Var>,
    /// `(N, 2, H, W)` at input resolution.
    pub logits: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct TamperNet {
    cfg: NetConfig,
    encoder: Encoder,
    decoder: Decoder,
    params: ParamStore,
}

impl TamperNet {
    /// Fresh network with truncated-normal weights drawn from `seed`.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RngStream::derive(seed, "init");
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&cfg.encoder, &mut params, &mut rng)?;
        let decoder = Decoder::new(&cfg.decoder, &cfg.encoder, &mut params, &mut rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            decoder,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, image: Var) -> Result<Forward> {
        let s = g.shape(image);
        let features = self.encoder.encode(g, b, image)?;
        let (logits, probs) = self.decoder.decode(g, b, &features, s.h, s.w)?;
        Ok(Forward {
            features,
            logits,
            probs,
        })
    }

    /// Logits of a single `(1, 3, H, W)` image.
    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params);
        let x = g.input(image.clone());
        let out = self.forward(&mut g, &mut b, x)?;
        Ok(g.value(out.logits).clone())
    }

    /// Tamper probability maps for a batch. Samples are independent, so
    /// they are evaluated in parallel and reassembled in input order.
    pub fn localize(&self, images: &Tensor) -> Result<LocalizationMap> {
        let s = images.shape();
        let per_sample: Vec<Tensor> = (0..s.n)
            .into_par_iter()
            .map(|n| self.logits(&images.sample(n)))
            .collect::<Result<_>>()?;
        let logits = Tensor::stack(&per_sample)?;
        let probs2 = crate::ops::softmax_channels(&logits)?;
        let probs = Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, h, w| {
            probs2.at(n, TAMPERED, h, w)
        });
        Ok(LocalizationMap { probs, logits })
    }
}
