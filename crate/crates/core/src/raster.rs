//! Float image tensors and deterministic image IO.
//!
//! Images are `[0,1]` float RGB in row-major `[H, W, 3]` layout. The 8-bit
//! boundary is exact: a decoded byte `v` becomes `v/255`, and saving maps
//! `v` to `round(clamp(v,0,1)*255)`, so a save/load round trip moves any
//! channel by at most `1/510`.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("NotFound: {0}")]
    NotFound(PathBuf),
    #[error("DecodeError: {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// RGB float image, values in `[0,1]`, row-major `[H, W, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f32>,
    height: usize,
    width: usize,
}

impl ImageTensor {
    /// Wraps raw `[H, W, 3]` data. Panics if the buffer length does not match
    /// or any value falls outside `[0,1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert!(height >= 1 && width >= 1, "image must be at least 1x1");
        assert_eq!(data.len(), height * width * 3, "buffer length mismatch");
        assert!(
            data.iter().all(|v| (0.0..=1.0).contains(v)),
            "image values must lie in [0,1]"
        );
        Self { data, height, width }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                data.extend_from_slice(&px);
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn long_side(&self) -> usize {
        self.height.max(self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Single-channel float image, values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayTensor {
    data: Vec<f32>,
    height: usize,
    width: usize,
}

impl GrayTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert!(height >= 1 && width >= 1, "image must be at least 1x1");
        assert_eq!(data.len(), height * width, "buffer length mismatch");
        Self { data, height, width }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Decodes a PNG or JPEG into a float tensor; `v/255` exactly per channel.
/// An alpha channel, if present, is dropped. EXIF orientation is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor, RasterError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(RasterError::NotFound(path.to_path_buf()));
    }
    let decoded = image::open(path).map_err(|e| RasterError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Ok(ImageTensor::new(height, width, data))
}

pub(crate) fn quantize_channel(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit RGB PNG; float `v` maps to `round(clamp(v,0,1)*255)`.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize_channel(v)).collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer sized from the tensor");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => RasterError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => RasterError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(other.to_string()),
            },
        })
}

// Half-pixel-center sampling: src = (dst + 0.5) * (src_size / dst_size) - 0.5,
// clamped. This is the align_corners=false convention; pinned for determinism.
fn bilinear_axis(dst: usize, src: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f32 / dst as f32;
    (0..dst)
        .map(|d| {
            let pos = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f32)
        })
        .collect()
}

fn resize_bilinear(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    if out_h == img.height() && out_w == img.width() {
        return img.clone();
    }
    let xs = bilinear_axis(out_w, img.width());
    let ys = bilinear_axis(out_h, img.height());
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = img.pixel(y0, x0);
            let p01 = img.pixel(y0, x1);
            let p10 = img.pixel(y1, x0);
            let p11 = img.pixel(y1, x1);
            for c in 0..3 {
                let top = p00[c] + (p01[c] - p00[c]) * fx;
                let bot = p10[c] + (p11[c] - p10[c]) * fx;
                data.push((top + (bot - top) * fy).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(out_h, out_w, data)
}

/// Bilinear resize so the longer side equals `target` (aspect preserved to
/// the nearest pixel, short side at least 1). Identity when the long side
/// already matches. Panics if `target < 8`.
pub fn resize_long_side(img: &ImageTensor, target: usize) -> ImageTensor {
    assert!(target >= 8, "resize target must be at least 8 pixels");
    let (h, w) = (img.height(), img.width());
    if h.max(w) == target {
        return img.clone();
    }
    let (out_h, out_w) = if w >= h {
        let oh = ((h as f64 * target as f64 / w as f64).round() as usize).max(1);
        (oh, target)
    } else {
        let ow = ((w as f64 * target as f64 / h as f64).round() as usize).max(1);
        (target, ow)
    };
    resize_bilinear(img, out_h, out_w)
}

/// Bilinear resize to an exact size, ignoring aspect ratio. Used for the
/// fixed-size retrieval signatures where both operands must agree in shape.
pub fn resize_exact(img: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    resize_bilinear(img, height, width)
}

/// Rec.709 luma: `0.2126 R + 0.7152 G + 0.0722 B`.
pub fn rgb_to_luma(img: &ImageTensor) -> GrayTensor {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| (0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2]).clamp(0.0, 1.0))
        .collect();
    GrayTensor::new(img.height(), img.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |y, x| {
            if (y + x) % 2 == 0 {
                [0.9, 0.2, 0.4]
            } else {
                [0.1, 0.7, 0.3]
            }
        })
    }

    #[test]
    fn load_maps_bytes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        let mut img = image::RgbImage::new(2, 2);
        img.put_pixel(0, 0, image::Rgb([255, 0, 0]));
        img.put_pixel(1, 0, image::Rgb([128, 64, 32]));
        img.save(&path).unwrap();

        let t = load_image(&path).unwrap();
        assert_eq!(t.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(t.pixel(0, 1), [128.0 / 255.0, 64.0 / 255.0, 32.0 / 255.0]);
    }

    #[test]
    fn alpha_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        let mut img = image::RgbaImage::new(2, 2);
        img.put_pixel(0, 0, image::Rgba([10, 20, 30, 7]));
        img.save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.pixel(0, 0), [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    }

    #[test]
    fn save_load_round_trip_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.png");
        let img = ImageTensor::from_fn(9, 7, |y, x| {
            [
                (y as f32 * 0.113) % 1.0,
                (x as f32 * 0.071) % 1.0,
                ((y * x) as f32 * 0.0137) % 1.0,
            ]
        });
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 510.0 + 1e-7, "max_err = {max_err}");
    }

    #[test]
    fn save_quantization_rule() {
        assert_eq!(quantize_channel(0.5), 128); // round(127.5) away from zero
        assert_eq!(quantize_channel(1.2), 255);
        assert_eq!(quantize_channel(-0.3), 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let img = ImageTensor::from_fn(4, 4, |_, _| [0.5, 0.5, 0.5]);
        save_image(&img, &path).unwrap();
        let raw = image::open(&path).unwrap().to_rgb8();
        assert!(raw.as_raw().iter().all(|&b| b == 128));
    }

    #[test]
    fn load_missing_is_not_found() {
        let err = load_image("definitely-missing.png").unwrap_err();
        assert!(matches!(err, RasterError::NotFound(_)), "{err}");
    }

    #[test]
    fn load_corrupt_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"not an image at all").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, RasterError::Decode { .. }), "{err}");
    }

    #[test]
    fn save_unwritable_is_io_error() {
        let img = checker(4, 4);
        let err = save_image(&img, "/no-such-dir/why/out.png").unwrap_err();
        assert!(matches!(err, RasterError::Io { .. }), "{err}");
    }

    #[test]
    fn resize_aspect_arithmetic() {
        let img = checker(600, 800);
        let out = resize_long_side(&img, 512);
        assert_eq!((out.height(), out.width()), (384, 512));

        let up = resize_long_side(&checker(50, 100), 512);
        assert_eq!((up.height(), up.width()), (256, 512));
    }

    #[test]
    fn resize_identity_when_long_side_matches() {
        let img = checker(512, 400);
        let out = resize_long_side(&img, 512);
        assert_eq!(out, img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageTensor::from_fn(40, 30, |_, _| [0.25, 0.5, 0.75]);
        let out = resize_long_side(&img, 17);
        for px in out.data().chunks_exact(3) {
            assert!((px[0] - 0.25).abs() < 1e-6);
            assert!((px[1] - 0.5).abs() < 1e-6);
            assert!((px[2] - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn luma_constants() {
        let white = ImageTensor::from_fn(3, 3, |_, _| [1.0, 1.0, 1.0]);
        assert!(rgb_to_luma(&white).data().iter().all(|&v| (v - 1.0).abs() < 1e-6));

        let red = ImageTensor::from_fn(3, 3, |_, _| [1.0, 0.0, 0.0]);
        assert!((rgb_to_luma(&red).at(1, 1) - 0.2126).abs() < 1e-6);

        let gray = ImageTensor::from_fn(3, 3, |_, _| [0.5, 0.5, 0.5]);
        assert!((rgb_to_luma(&gray).at(2, 2) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn luma_bounded_by_channel_extremes() {
        let img = checker(6, 5);
        let luma = rgb_to_luma(&img);
        for y in 0..6 {
            for x in 0..5 {
                let [r, g, b] = img.pixel(y, x);
                let lo = r.min(g).min(b) - 1e-6;
                let hi = r.max(g).max(b) + 1e-6;
                let v = luma.at(y, x);
                assert!(v >= lo && v <= hi);
            }
        }
    }
}
