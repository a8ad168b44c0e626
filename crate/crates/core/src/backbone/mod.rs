//! Frozen pretrained feature extractors with input gradients.
//!
//! A backbone exposes five feature taps `f1..f5`, ordered shallow to deep
//! with strictly decreasing spatial size. DenseNet121 is the primary
//! backbone; VGG19 exists for the detail-preservation ablation. Both load
//! from a float32 named-tensor archive whose exact key set is pinned in
//! `docs/weights-manifest-*.txt`.

mod archive;
mod densenet;
mod graph;
mod ops;
mod tensor;
mod vgg;

pub mod init;

pub use archive::{ArchiveTensor, WeightArchive};
pub use graph::Recording;
pub use tensor::{Scalar, Tensor};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::ImageTensor;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("MissingTensor: {0:?}")]
    MissingTensor(String),
    #[error("ShapeMismatch: {key:?}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        key: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("FormatError: {0}")]
    FormatError(String),
    #[error("IntegrityError: {path}: archive hash {found} does not match recorded {expected}")]
    IntegrityError {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("InputTooSmall: {height}x{width} (long side must be >= 32)")]
    InputTooSmall { height: usize, width: usize },
    #[error("UnknownBackbone: {0:?} (expected \"densenet121\" or \"vgg19\")")]
    UnknownBackbone(String),
    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// ImageNet channel statistics used by both pretrained backbones.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Smallest long side for which the deepest tap is non-degenerate.
pub const MIN_LONG_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneId {
    Densenet121 = 1,
    Vgg19 = 2,
}

impl std::str::FromStr for BackboneId {
    type Err = BackboneError;
    fn from_str(s: &str) -> Result<Self, BackboneError> {
        match s {
            "densenet121" => Ok(Self::Densenet121),
            "vgg19" => Ok(Self::Vgg19),
            other => Err(BackboneError::UnknownBackbone(other.to_string())),
        }
    }
}

impl std::fmt::Display for BackboneId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Densenet121 => "densenet121",
            Self::Vgg19 => "vgg19",
        })
    }
}

/// Which layers are tapped and how inputs are normalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub id: BackboneId,
    pub tap_names: [String; 5],
    /// 1-based tap index whose features carry the content loss (default 4).
    pub content_tap: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl BackboneSpec {
    pub fn for_id(id: BackboneId) -> Self {
        let tap_names = match id {
            BackboneId::Densenet121 => densenet::tap_names(),
            BackboneId::Vgg19 => vgg::tap_names(),
        };
        Self {
            id,
            tap_names,
            content_tap: 4,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    pub fn densenet121() -> Self {
        Self::for_id(BackboneId::Densenet121)
    }

    pub fn vgg19() -> Self {
        Self::for_id(BackboneId::Vgg19)
    }

    /// Ordered `(key, shape)` pairs the weight archive must provide.
    pub fn weight_manifest(&self) -> Vec<(String, Vec<usize>)> {
        match self.id {
            BackboneId::Densenet121 => densenet::manifest(),
            BackboneId::Vgg19 => vgg::manifest(),
        }
    }
}

/// The five tapped feature tensors of one image, shallow to deep.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<F> {
    pub levels: [Tensor<F>; 5],
    pub backbone: BackboneId,
}

impl<F: Scalar> FeaturePyramid<F> {
    pub fn all_finite(&self) -> bool {
        self.levels.iter().all(|t| t.all_finite())
    }

    pub fn channel_counts(&self) -> [usize; 5] {
        [0, 1, 2, 3, 4].map(|i| self.levels[i].channels())
    }
}

/// A loaded, immutable feature extractor.
pub struct Backbone<F: Scalar> {
    spec: BackboneSpec,
    graph: graph::Graph<F>,
}

impl<F: Scalar> Backbone<F> {
    /// Loads a backbone from a named-tensor archive, validating every key
    /// and shape in the manifest.
    pub fn load(spec: BackboneSpec, weights: impl AsRef<Path>) -> Result<Self, BackboneError> {
        let ar = WeightArchive::load(weights)?;
        Self::from_archive(spec, &ar)
    }

    pub fn from_archive(spec: BackboneSpec, ar: &WeightArchive) -> Result<Self, BackboneError> {
        // The builders check shapes as they read keys; run a full manifest
        // sweep first so a missing tensor is reported by name even when the
        // graph build would fail earlier for another reason.
        for (key, shape) in spec.weight_manifest() {
            ar.get_checked(&key, &shape)?;
        }
        let graph = match spec.id {
            BackboneId::Densenet121 => densenet::build_graph(ar)?,
            BackboneId::Vgg19 => vgg::build_graph(ar)?,
        };
        Ok(Self { spec, graph })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn tap_channels(&self) -> [usize; 5] {
        self.graph.tap_channels()
    }

    fn check_size(&self, height: usize, width: usize) -> Result<(), BackboneError> {
        if height.max(width) < MIN_LONG_SIDE {
            return Err(BackboneError::InputTooSmall { height, width });
        }
        Ok(())
    }

    /// Normalizes an image into network input space (channel-first,
    /// `(v - mean) / std`).
    pub fn preprocess(&self, img: &ImageTensor) -> Tensor<F> {
        preprocess_with(img, &self.spec.mean, &self.spec.std)
    }

    /// Maps a network-space tensor back to an image, clamping into `[0,1]`.
    pub fn unpreprocess(&self, t: &Tensor<F>) -> ImageTensor {
        let (c, h, w) = t.shape();
        assert_eq!(c, 3);
        let plane = h * w;
        ImageTensor::from_fn(h, w, |y, x| {
            let mut px = [0.0f32; 3];
            for (ch, p) in px.iter_mut().enumerate() {
                let v = t.data()[ch * plane + y * w + x].to_f64() as f32;
                *p = (v * self.spec.std[ch] + self.spec.mean[ch]).clamp(0.0, 1.0);
            }
            px
        })
    }

    /// Clamps a network-space tensor to the preprocessed image of `[0,1]`.
    pub fn clamp_to_valid(&self, t: &mut Tensor<F>) {
        let (c, h, w) = t.shape();
        assert_eq!(c, 3);
        let plane = h * w;
        for ch in 0..3 {
            let lo = F::from_f32((0.0 - self.spec.mean[ch]) / self.spec.std[ch]);
            let hi = F::from_f32((1.0 - self.spec.mean[ch]) / self.spec.std[ch]);
            for v in &mut t.data_mut()[ch * plane..(ch + 1) * plane] {
                if *v < lo {
                    *v = lo;
                }
                if *v > hi {
                    *v = hi;
                }
            }
        }
    }

    /// Feature taps of an image (no gradient bookkeeping).
    pub fn extract_features(&self, img: &ImageTensor) -> Result<FeaturePyramid<F>, BackboneError> {
        self.check_size(img.height(), img.width())?;
        let pre = self.preprocess(img);
        Ok(self.extract_pre(&pre))
    }

    /// Feature taps of an already-preprocessed tensor.
    pub fn extract_pre(&self, pre: &Tensor<F>) -> FeaturePyramid<F> {
        let levels = self.graph.forward_taps(pre.clone());
        FeaturePyramid {
            levels,
            backbone: self.spec.id,
        }
    }

    /// Forward pass that keeps activations for [`Self::backward`].
    pub fn forward_recorded(&self, pre: &Tensor<F>) -> (FeaturePyramid<F>, Recording<F>) {
        let rec = self.graph.forward_recorded(pre.clone());
        let levels = self.graph.taps_of(&rec).map(|t| t.clone());
        (
            FeaturePyramid {
                levels,
                backbone: self.spec.id,
            },
            rec,
        )
    }

    /// Propagates gradients seeded at the taps back to the preprocessed
    /// input pixels.
    pub fn backward(&self, rec: Recording<F>, tap_grads: [Option<Tensor<F>>; 5]) -> Tensor<F> {
        self.graph.backward(rec, tap_grads)
    }
}

/// `(v - mean) / std`, channel-first output.
pub fn preprocess_with<F: Scalar>(img: &ImageTensor, mean: &[f32; 3], std: &[f32; 3]) -> Tensor<F> {
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let mut data = vec![F::ZERO; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let px = img.pixel(y, x);
            for c in 0..3 {
                data[c * plane + y * w + x] = F::from_f32((px[c] - mean[c]) / std[c]);
            }
        }
    }
    Tensor::from_vec(3, h, w, data)
}
