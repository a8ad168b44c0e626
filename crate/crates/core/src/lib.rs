//! Global image sentiment transfer.
//!
//! The pipeline has two stages. Retrieval picks, from a noun/adjective-tagged
//! image corpus, the entry whose edge structure is closest to the input image
//! (SSIM over edge responses). Transfer then imposes the retrieved reference's
//! sentiment on the input by iteratively optimizing the output image's pixels
//! against a content loss (feature distance at one tap) plus a sentiment loss
//! (Gram-matrix distance averaged over five taps) computed on a frozen
//! pretrained backbone.
//!
//! Module map:
//! - [`raster`]: float image type, PNG/JPEG IO, bilinear resize, luma.
//! - [`ssim`]: windowed structural similarity on single-channel images.
//! - [`edge`]: edge-response extraction (retrieval signature).
//! - [`corpus`]: tagged-corpus manifest ingestion and the persisted index.
//! - [`retrieval`]: subset selection and reference ranking.
//! - [`backbone`]: DenseNet121/VGG19 feature taps with a gradient pathway
//!   back to input pixels.
//! - [`transfer`]: the Gram/content loss and the Adam pixel optimizer.
//! - [`eval`]: detail-preservation scoring over input/output pairs.
//! - [`synth`]: procedural test scenes used by the bundled desk-scale corpus.

pub mod backbone;
pub mod corpus;
pub mod edge;
pub mod eval;
pub mod raster;
pub mod retrieval;
pub mod ssim;
pub mod synth;
pub mod transfer;

pub use backbone::{Backbone, BackboneId, BackboneSpec, FeaturePyramid};
pub use corpus::{CorpusEntry, CorpusIndex};
pub use edge::{EdgeBackendId, EdgeMap};
pub use raster::{GrayTensor, ImageTensor};
pub use retrieval::{RetrievalResult, SentimentQuery, Strategy};
pub use ssim::SsimParams;
pub use transfer::{LossWeights, TransferConfig, TransferResult};
