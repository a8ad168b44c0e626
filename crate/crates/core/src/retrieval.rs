//! Reference image retrieval.
//!
//! Given an input image, its noun and the target sentiment adjective, the
//! tag-matching corpus subset is ranked either by SSIM between fixed-size
//! edge signatures (default, structure-seeking) or by an unlearned
//! perceptual distance on backbone features (style-seeking, for
//! comparison). Ranking is deterministic: candidates are scored
//! independently and ties break on the entry id.

use serde::Serialize;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::backbone::{Backbone, BackboneError, FeaturePyramid, Scalar};
use crate::corpus::{self, CorpusEntry, CorpusIndex};
use crate::edge::{self, EdgeError};
use crate::raster::{self, ImageTensor, RasterError};
use crate::ssim::{ssim, SsimError, SsimParams};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("NoCandidates: no corpus entries tagged ({noun:?}, {adjective:?})")]
    NoCandidates { noun: String, adjective: String },
    #[error("BackendUnavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Ssim(#[from] SsimError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
}

impl From<EdgeError> for RetrievalError {
    fn from(e: EdgeError) -> Self {
        RetrievalError::BackendUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    SsimEdge,
    Perceptual,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ssim-edge" => Ok(Self::SsimEdge),
            "perceptual" => Ok(Self::Perceptual),
            other => Err(format!("unknown strategy {other:?} (expected \"ssim-edge\" or \"perceptual\")")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SsimEdge => "ssim-edge",
            Self::Perceptual => "perceptual",
        })
    }
}

/// A retrieval request; tags are normalized the same way the corpus does.
#[derive(Debug, Clone)]
pub struct SentimentQuery {
    pub input: ImageTensor,
    pub noun: String,
    pub adjective: String,
    pub strategy: Strategy,
    pub top_k: usize,
}

impl SentimentQuery {
    pub fn new(input: ImageTensor, noun: &str, adjective: &str) -> Self {
        Self {
            input,
            noun: corpus::normalize_tag(noun),
            adjective: corpus::normalize_tag(adjective),
            strategy: Strategy::SsimEdge,
            top_k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
}

/// Ranked candidates, best first. For `ssim-edge` the score is an SSIM index
/// (higher is better); for `perceptual` it is a feature distance (lower is
/// better).
#[derive(Debug, Clone, Serialize)]
pub struct RetrievalResult {
    pub strategy: Strategy,
    pub ranked: Vec<RankedEntry>,
}

/// Exactly the entries whose normalized `(noun, adjective)` match the query.
pub fn select_subset<'a>(
    index: &'a CorpusIndex,
    noun: &str,
    adjective: &str,
) -> Vec<&'a CorpusEntry> {
    let noun = corpus::normalize_tag(noun);
    let adjective = corpus::normalize_tag(adjective);
    index
        .entries
        .iter()
        .filter(|e| e.noun == noun && e.adjective == adjective)
        .collect()
}

fn score_all<T: Send, E: Send>(
    subset: &[&CorpusEntry],
    f: impl Fn(&CorpusEntry) -> Result<T, E> + Sync,
) -> Result<Vec<T>, E> {
    #[cfg(feature = "parallel")]
    {
        subset.par_iter().map(|e| f(e)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        subset.iter().map(|e| f(e)).collect()
    }
}

fn rank(
    strategy: Strategy,
    subset: &[&CorpusEntry],
    scores: Vec<f64>,
    top_k: usize,
) -> RetrievalResult {
    let mut ranked: Vec<RankedEntry> = subset
        .iter()
        .zip(scores)
        .map(|(e, score)| RankedEntry {
            id: e.id.clone(),
            score,
        })
        .collect();
    ranked.sort_by(|a, b| {
        let ord = match strategy {
            Strategy::SsimEdge => b.score.total_cmp(&a.score),
            Strategy::Perceptual => a.score.total_cmp(&b.score),
        };
        ord.then_with(|| a.id.cmp(&b.id))
    });
    ranked.truncate(top_k);
    RetrievalResult { strategy, ranked }
}

/// Ranks the tag-matching subset against the query image.
///
/// The perceptual strategy requires a loaded backbone; pass `None` for
/// `ssim-edge`.
pub fn retrieve_reference<F: Scalar>(
    index: &CorpusIndex,
    query: &SentimentQuery,
    backbone: Option<&Backbone<F>>,
) -> Result<RetrievalResult, RetrievalError> {
    let subset = select_subset(index, &query.noun, &query.adjective);
    if subset.is_empty() {
        return Err(RetrievalError::NoCandidates {
            noun: corpus::normalize_tag(&query.noun),
            adjective: corpus::normalize_tag(&query.adjective),
        });
    }
    let top_k = query.top_k.max(1);

    match query.strategy {
        Strategy::SsimEdge => {
            let size = index.retrieval_size;
            let sig_img = raster::resize_exact(&query.input, size, size);
            let sig = edge::edge_response(&sig_img, index.edge_backend)?;
            // Compare in the stored 8-bit quantization so an exact pixel
            // copy of a corpus image scores SSIM 1 bit-exactly.
            let sig = edge::quantize_edge(&sig);
            let params = SsimParams::default();
            let scores = score_all(&subset, |entry| -> Result<f64, RetrievalError> {
                let stored = edge::load_edge_png(index.edge_map_path(entry))?;
                Ok(ssim(&sig, &stored, &params)?)
            })?;
            Ok(rank(Strategy::SsimEdge, &subset, scores, top_k))
        }
        Strategy::Perceptual => {
            let Some(backbone) = backbone else {
                return Err(RetrievalError::BackendUnavailable(
                    "the perceptual strategy needs a loaded backbone".into(),
                ));
            };
            let size = index.retrieval_size;
            let probe = backbone.extract_features(&raster::resize_exact(&query.input, size, size))?;
            let scores = score_all(&subset, |entry| -> Result<f64, RetrievalError> {
                let img = raster::load_image(&entry.path)?;
                let cand = backbone.extract_features(&raster::resize_exact(&img, size, size))?;
                Ok(perceptual_distance(&probe, &cand))
            })?;
            Ok(rank(Strategy::Perceptual, &subset, scores, top_k))
        }
    }
}

/// Mean over the five taps of the mean squared difference between
/// channel-unit-normalized features: at every spatial site the channel
/// vector is scaled to unit length before comparison, so the distance
/// reflects feature direction (style statistics) rather than magnitude.
pub fn perceptual_distance<F: Scalar>(a: &FeaturePyramid<F>, b: &FeaturePyramid<F>) -> f64 {
    let mut total = 0.0f64;
    for i in 0..5 {
        let (fa, fb) = (&a.levels[i], &b.levels[i]);
        debug_assert_eq!(fa.shape(), fb.shape());
        let (c, h, w) = fa.shape();
        let plane = h * w;
        let mut level_sum = 0.0f64;
        for s in 0..plane {
            let mut na = 0.0f64;
            let mut nb = 0.0f64;
            for ch in 0..c {
                let va = fa.data()[ch * plane + s].to_f64();
                let vb = fb.data()[ch * plane + s].to_f64();
                na += va * va;
                nb += vb * vb;
            }
            let na = na.sqrt() + 1e-10;
            let nb = nb.sqrt() + 1e-10;
            for ch in 0..c {
                let d = fa.data()[ch * plane + s].to_f64() / na
                    - fb.data()[ch * plane + s].to_f64() / nb;
                level_sum += d * d;
            }
        }
        total += level_sum / (c * plane) as f64;
    }
    total / 5.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_index, ingest_manifest};
    use crate::edge::EdgeBackendId;
    use crate::synth;
    use std::path::Path;

    fn build_demo_index(dir: &Path) -> CorpusIndex {
        let mut lines = Vec::new();
        let specs = [
            ("river", "clear", 0u64),
            ("river", "muddy", 1),
            ("lake", "misty", 2),
        ];
        for (i, (noun, adj, seed)) in specs.iter().enumerate() {
            let img = synth::scene(48, 64, *seed, &synth::Palette::CLEAR);
            let name = format!("c{i}.png");
            raster::save_image(&img, dir.join(&name)).unwrap();
            lines.push(format!(
                "{{\"id\": \"c{i}\", \"path\": \"{name}\", \"noun\": \"{noun}\", \"adjective\": \"{adj}\"}}"
            ));
        }
        let manifest = dir.join("manifest.jsonl");
        std::fs::write(&manifest, lines.join("\n")).unwrap();
        let entries = ingest_manifest(&manifest).unwrap();
        build_index(&entries, EdgeBackendId::Sobel, dir.join("index")).unwrap()
    }

    #[test]
    fn subset_filter_and_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let index = build_demo_index(dir.path());
        let subset = select_subset(&index, "river", "muddy");
        assert_eq!(subset.len(), 1);
        assert_eq!(subset[0].id, "c1");
        assert!(select_subset(&index, "river", "misty").is_empty());
        let denorm = select_subset(&index, "River ", "MUDDY");
        assert_eq!(denorm.len(), 1);
        assert_eq!(denorm[0].id, "c1");
    }

    #[test]
    fn exact_copy_ranks_first_with_unit_score() {
        let dir = tempfile::tempdir().unwrap();
        let index = build_demo_index(dir.path());
        // c1 is the (river, muddy) entry; query with its exact pixels as
        // they exist on disk.
        let input = raster::load_image(dir.path().join("c1.png")).unwrap();
        let mut query = SentimentQuery::new(input, "river", "muddy");
        query.top_k = 5;
        let result = retrieve_reference::<f32>(&index, &query, None).unwrap();
        assert_eq!(result.ranked[0].id, "c1");
        assert!((result.ranked[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn no_candidates_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let index = build_demo_index(dir.path());
        let query = SentimentQuery::new(
            synth::scene(48, 64, 0, &synth::Palette::CLEAR),
            "river",
            "misty",
        );
        match retrieve_reference::<f32>(&index, &query, None) {
            Err(RetrievalError::NoCandidates { noun, adjective }) => {
                assert_eq!(noun, "river");
                assert_eq!(adjective, "misty");
            }
            other => panic!("expected NoCandidates, got {other:?}"),
        }
    }

    #[test]
    fn perceptual_without_backbone_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let index = build_demo_index(dir.path());
        let mut query = SentimentQuery::new(
            synth::scene(48, 64, 0, &synth::Palette::CLEAR),
            "river",
            "clear",
        );
        query.strategy = Strategy::Perceptual;
        assert!(matches!(
            retrieve_reference::<f32>(&index, &query, None),
            Err(RetrievalError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn ssim_edge_scores_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let index = build_demo_index(dir.path());
        let mut query = SentimentQuery::new(
            synth::scene(48, 64, 9, &synth::Palette::DARK),
            "river",
            "clear",
        );
        query.top_k = 10;
        let result = retrieve_reference::<f32>(&index, &query, None).unwrap();
        assert_eq!(result.ranked.len(), 1);
        assert!(result.ranked.iter().all(|r| (-1.0..=1.0).contains(&r.score)));
    }
}
