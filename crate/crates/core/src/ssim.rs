//! Windowed structural similarity (SSIM).
//!
//! Canonical formulation: an 11x11 Gaussian window (sigma 1.5) slides over
//! every position where it fits entirely inside both images; the local
//! luminance/contrast/structure product is averaged into one scalar.
//! Statistics accumulate in f64 so the score is symmetric in its arguments
//! to the last bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::GrayTensor;

#[derive(Debug, Error)]
pub enum SsimError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
}

/// SSIM window and stability constants. `dynamic_range` is the value span of
/// the inputs (1.0 for the `[0,1]` float images used throughout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    fn validate(&self) {
        assert!(self.window >= 3 && self.window % 2 == 1, "window must be odd and >= 3");
        assert!(self.sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0);
    }
}

/// Normalized 1-D Gaussian taps for the window.
pub(crate) fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window / 2) as f64;
    let mut k: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

// Separable weighted local sums, valid positions only. `plane` is row-major
// h*w; the result is (h-window+1) x (w-window+1).
fn local_sums(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let win = kernel.len();
    let ow = w - win + 1;
    let oh = h - win + 1;
    // Horizontal pass over full rows.
    let mut tmp = vec![0.0f64; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * row[x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean SSIM between two equally-shaped single-channel images.
///
/// Returns the mean of the local SSIM map over all valid window positions,
/// a value in `[-1, 1]`, symmetric in `(a, b)`.
pub fn ssim(a: &GrayTensor, b: &GrayTensor, params: &SsimParams) -> Result<f64, SsimError> {
    params.validate();
    if a.height() != b.height() || a.width() != b.width() {
        return Err(SsimError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (h, w) = (a.height(), a.width());
    if h < params.window || w < params.window {
        return Err(SsimError::ShapeMismatch(format!(
            "{}x{} smaller than the {}x{} window",
            h, w, params.window, params.window
        )));
    }

    let kernel = gaussian_kernel(params.window, params.sigma);
    let pa: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let pb: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
    let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
    let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

    let mu_a = local_sums(&pa, h, w, &kernel);
    let mu_b = local_sums(&pb, h, w, &kernel);
    let s_aa = local_sums(&paa, h, w, &kernel);
    let s_bb = local_sums(&pbb, h, w, &kernel);
    let s_ab = local_sums(&pab, h, w, &kernel);

    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);

    let mut total = 0.0f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GrayTensor;

    fn gray_from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> GrayTensor {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        GrayTensor::new(h, w, data)
    }

    #[test]
    fn identity_is_one() {
        let img = gray_from_fn(32, 24, |y, x| ((y * 31 + x * 17) % 64) as f32 / 63.0);
        let s = ssim(&img, &img, &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "s = {s}");
    }

    #[test]
    fn constant_images_closed_form() {
        // For constants the contrast/structure factor is exactly 1, leaving
        // (2*0.5*0.25 + C1) / (0.5^2 + 0.25^2 + C1) with C1 = 1e-4.
        let a = gray_from_fn(16, 16, |_, _| 0.5);
        let b = gray_from_fn(16, 16, |_, _| 0.25);
        let s = ssim(&a, &b, &SsimParams::default()).unwrap();
        let expected = (2.0 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4);
        assert!((s - expected).abs() < 1e-12, "s = {s}, expected = {expected}");
        assert!((s - 0.8001).abs() < 1e-4);
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = gray_from_fn(20, 20, |y, x| ((y * 7 + x * 13) % 50) as f32 / 49.0);
        let b = gray_from_fn(20, 20, |y, x| ((y * 3 + x * 5) % 41) as f32 / 40.0);
        let p = SsimParams::default();
        let ab = ssim(&a, &b, &p).unwrap();
        let ba = ssim(&b, &a, &p).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = gray_from_fn(16, 16, |_, _| 0.5);
        let b = gray_from_fn(16, 12, |_, _| 0.5);
        assert!(matches!(
            ssim(&a, &b, &SsimParams::default()),
            Err(SsimError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn too_small_for_window_rejected() {
        let a = gray_from_fn(8, 8, |_, _| 0.5);
        assert!(matches!(
            ssim(&a, &a, &SsimParams::default()),
            Err(SsimError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn kernel_normalized() {
        let k = gaussian_kernel(11, 1.5);
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(k[5] > k[0]);
    }
}
