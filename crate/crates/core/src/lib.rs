//! Two-stage interactive image inpainting.
//!
//! Stage one is an autoencoder whose bottleneck runs a dilated-convolution
//! branch in parallel with an external spatial attention (ESPA) branch; it
//! produces a coarse result and the reconstructed features `F_c`. Stage two
//! is a semantic decoder built from spatially adaptive normalization blocks
//! that re-synthesizes the image from `F_c` under a (possibly user-edited)
//! semantic mask.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod espa;
pub mod evaluation;
pub mod imaging;
pub mod losses;
pub mod maskgen;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod pipeline;
pub mod synthetic;
pub mod training;
pub mod util;

pub use error::{Error, Result};
pub use ndarray;
pub use imaging::{
    apply_mask, composite, downsample_mask, labels_to_pseudocolor, pseudocolor_to_labels,
    BinaryMask, ColorPalette, Image, PaletteEntry, SemanticMask,
};
pub use networks::{
    AutoencoderConfig, DiscriminatorConfig, ModelConfig, SemanticDecoderConfig, SegmenterConfig,
};
pub use pipeline::InpaintModel;
