//! Edge-response extraction.
//!
//! The retrieval step compares images by the structure of their edges, not
//! their colors. The default backend is 3x3 Sobel gradient magnitude on luma
//! with replicate borders, max-normalized per image. A learned detector can
//! be plugged in behind [`EdgeDetector`]; none ships with the crate, so
//! requesting `learned` by id reports `BackendUnavailable`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{self, GrayTensor, ImageTensor};

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("BackendUnavailable: {0}")]
    BackendUnavailable(String),
    #[error("UnknownBackend: {0:?} (expected \"sobel\" or \"learned\")")]
    UnknownBackend(String),
}

/// Identifier of an edge-response backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeBackendId {
    Sobel,
    Learned,
}

impl std::str::FromStr for EdgeBackendId {
    type Err = EdgeError;
    fn from_str(s: &str) -> Result<Self, EdgeError> {
        match s {
            "sobel" => Ok(Self::Sobel),
            "learned" => Ok(Self::Learned),
            other => Err(EdgeError::UnknownBackend(other.to_string())),
        }
    }
}

impl std::fmt::Display for EdgeBackendId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sobel => "sobel",
            Self::Learned => "learned",
        })
    }
}

/// Single-channel edge response in `[0,1]`, same shape as its source.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap(pub GrayTensor);

impl EdgeMap {
    pub fn as_gray(&self) -> &GrayTensor {
        &self.0
    }
}

/// An edge-response extractor. Implementations must be deterministic.
pub trait EdgeDetector {
    fn response(&self, img: &ImageTensor) -> EdgeMap;
}

/// 3x3 Sobel gradient magnitude on Rec.709 luma, replicate borders,
/// normalized so the per-image maximum maps to 1 (all-zero stays all-zero).
pub struct SobelDetector;

impl EdgeDetector for SobelDetector {
    fn response(&self, img: &ImageTensor) -> EdgeMap {
        let luma = raster::rgb_to_luma(img);
        let (h, w) = (luma.height(), luma.width());
        let at = |y: isize, x: isize| -> f32 {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xx = x.clamp(0, w as isize - 1) as usize;
            luma.at(yy, xx)
        };
        let mut mag = vec![0.0f32; h * w];
        let mut max = 0.0f32;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let tl = at(y - 1, x - 1);
                let tc = at(y - 1, x);
                let tr = at(y - 1, x + 1);
                let ml = at(y, x - 1);
                let mr = at(y, x + 1);
                let bl = at(y + 1, x - 1);
                let bc = at(y + 1, x);
                let br = at(y + 1, x + 1);
                let gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
                let gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
                let m = (gx * gx + gy * gy).sqrt();
                mag[(y as usize) * w + x as usize] = m;
                max = max.max(m);
            }
        }
        if max > 0.0 {
            for v in &mut mag {
                *v /= max;
            }
        }
        EdgeMap(GrayTensor::new(h, w, mag))
    }
}

/// Edge response by backend id. `learned` has no bundled weights and reports
/// `BackendUnavailable`; supply an [`EdgeDetector`] implementation instead.
pub fn edge_response(img: &ImageTensor, backend: EdgeBackendId) -> Result<EdgeMap, EdgeError> {
    match backend {
        EdgeBackendId::Sobel => Ok(SobelDetector.response(img)),
        EdgeBackendId::Learned => Err(EdgeError::BackendUnavailable(
            "no weight archive is loaded for the learned edge backend".into(),
        )),
    }
}

// Retrieval signatures are exchanged as 8-bit grayscale PNGs, so the in-memory
// side is quantized the same way; an exact pixel copy of a corpus image then
// reproduces the stored signature bit for bit.
pub(crate) fn quantize_edge(map: &EdgeMap) -> GrayTensor {
    let q: Vec<f32> = map
        .0
        .data()
        .iter()
        .map(|&v| raster::quantize_channel(v) as f32 / 255.0)
        .collect();
    GrayTensor::new(map.0.height(), map.0.width(), q)
}

/// Writes an edge map as an 8-bit grayscale PNG (`round(255*edge)`).
pub fn save_edge_png(map: &EdgeMap, path: impl AsRef<Path>) -> Result<(), raster::RasterError> {
    let g = &map.0;
    let bytes: Vec<u8> = g.data().iter().map(|&v| raster::quantize_channel(v)).collect();
    let buf = image::GrayImage::from_raw(g.width() as u32, g.height() as u32, bytes)
        .expect("buffer sized from the tensor");
    let path = path.as_ref();
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| raster::RasterError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })
}

/// Loads an 8-bit grayscale PNG written by [`save_edge_png`].
pub fn load_edge_png(path: impl AsRef<Path>) -> Result<GrayTensor, raster::RasterError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(raster::RasterError::NotFound(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|e| raster::RasterError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Ok(GrayTensor::new(h, w, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_zero_response() {
        let img = ImageTensor::from_fn(16, 16, |_, _| [0.3, 0.3, 0.3]);
        let map = edge_response(&img, EdgeBackendId::Sobel).unwrap();
        assert!(map.0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_concentrates_response() {
        // Step from 0 to 1 between columns 7 and 8. Hand-convolving the Sobel
        // pair on that profile: |gx| = 4 on the two columns flanking the step
        // (the normalized maximum), 0 well away from it, and gy = 0 everywhere.
        let img = ImageTensor::from_fn(16, 16, |_, x| {
            let v = if x < 8 { 0.0 } else { 1.0 };
            [v, v, v]
        });
        let map = edge_response(&img, EdgeBackendId::Sobel).unwrap();
        let g = map.as_gray();
        for y in 2..14 {
            assert_eq!(g.at(y, 7), 1.0, "column left of the step carries the max");
            assert_eq!(g.at(y, 8), 1.0, "column right of the step carries the max");
            assert_eq!(g.at(y, 2), 0.0);
            assert_eq!(g.at(y, 13), 0.0);
        }
    }

    #[test]
    fn response_is_normalized_to_unit_range() {
        let img = ImageTensor::from_fn(24, 24, |y, x| {
            [((y * x) % 7) as f32 / 6.0, ((y + x) % 5) as f32 / 4.0, 0.2]
        });
        let map = edge_response(&img, EdgeBackendId::Sobel).unwrap();
        let max = map.0.data().iter().cloned().fold(0.0f32, f32::max);
        assert!(map.0.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((max - 1.0).abs() < 1e-6);
    }

    #[test]
    fn learned_backend_unavailable() {
        let img = ImageTensor::from_fn(8, 8, |_, _| [0.1, 0.2, 0.3]);
        assert!(matches!(
            edge_response(&img, EdgeBackendId::Learned),
            Err(EdgeError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn edge_png_round_trip_is_exact() {
        let img = ImageTensor::from_fn(16, 16, |y, x| {
            let v = ((y * 5 + x * 3) % 11) as f32 / 10.0;
            [v, v * 0.5, 1.0 - v]
        });
        let map = edge_response(&img, EdgeBackendId::Sobel).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edge.png");
        save_edge_png(&map, &path).unwrap();
        let loaded = load_edge_png(&path).unwrap();
        // Quantized in-memory signature equals the PNG round trip bit for bit.
        assert_eq!(quantize_edge(&map), loaded);
    }
}
