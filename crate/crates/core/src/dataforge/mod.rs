//! Synthetic forgery data: compositing, augmentation, JPEG, file formats.

pub mod augment;
pub mod dataset;
pub mod jpeg;
pub mod netpbm;
pub mod synth;

pub use augment::{apply_geometric, augment, AugOp, AugmentConfig};
pub use dataset::{read_dataset, write_dataset, LabeledImage};
pub use jpeg::{jpeg_roundtrip, psnr};
pub use synth::{
    composite, composite_with, laplacian_energy, procedural_corpus, procedural_sources,
    CompositeOptions, ForgerySample, PasteTransform, Provenance, SourcePair,
};
