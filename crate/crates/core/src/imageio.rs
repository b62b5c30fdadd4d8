//! 8-bit RGB PNG input/output. Scalars map as `value = byte / 255`; writing
//! clamps to [0,1] and rounds. Reading a PNG the writer produced and writing
//! it again is byte-identical.

use std::path::Path;

use image::{DynamicImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn read_image<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::image(path, format!("decode failed: {e}")))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(Error::image(
                path,
                format!("expected 8-bit RGB, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![S::zero(); 3 * h * w];
    for (y, row) in rgb.rows().enumerate() {
        for (x, px) in row.enumerate() {
            for c in 0..3 {
                data[(c * h + y) * w + x] = S::from_f64(px.0[c] as f64 / 255.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn write_image<S: Scalar>(path: &Path, image: &Tensor<S>) -> Result<()> {
    let (h, w) = match image.shape() {
        &[3, h, w] => (h, w),
        other => {
            return Err(Error::image(
                path,
                format!(
                    "write_image expects 3xHxW, got {}",
                    crate::error::shape_string(other)
                ),
            ))
        }
    };
    let data = image.data();
    let mut raw = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = data[(c * h + y) * w + x].as_f64().clamp(0.0, 1.0);
                raw[(y * w + x) * 3 + c] = (v * 255.0).round() as u8;
            }
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::image(path, "buffer size mismatch".to_string()))?;
    img.save(path)
        .map_err(|e| Error::image(path, format!("encode failed: {e}")))
}

/// Write a single-channel map as a grayscale PNG. With `normalize` the map is
/// min-max rescaled for inspection; otherwise values are clamped to [0,1].
pub fn write_gray<S: Scalar>(path: &Path, map: &Tensor<S>, normalize: bool) -> Result<()> {
    let (h, w) = match map.shape() {
        &[h, w] => (h, w),
        &[1, h, w] => (h, w),
        other => {
            return Err(Error::image(
                path,
                format!(
                    "write_gray expects HxW or 1xHxW, got {}",
                    crate::error::shape_string(other)
                ),
            ))
        }
    };
    let (lo, hi) = if normalize {
        let lo = map.min_value().as_f64();
        let hi = map.max_value().as_f64();
        if hi - lo < 1e-12 {
            (lo - 0.5, lo + 0.5)
        } else {
            (lo, hi)
        }
    } else {
        (0.0, 1.0)
    };
    let raw: Vec<u8> = map
        .data()
        .iter()
        .map(|v| {
            let t = ((v.as_f64() - lo) / (hi - lo)).clamp(0.0, 1.0);
            (t * 255.0).round() as u8
        })
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::image(path, "buffer size mismatch".to_string()))?;
    img.save(path)
        .map_err(|e| Error::image(path, format!("encode failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_scalar_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = Tensor::<f32>::from_f64_slice(
            &[3, 1, 2],
            &[0.0, 1.0, 128.0 / 255.0, 0.5, 0.25, 0.75],
        )
        .unwrap();
        write_image(&path, &img).unwrap();
        let back = read_image::<f32>(&path).unwrap();
        assert_eq!(back.data()[0], 0.0);
        assert_eq!(back.data()[1], 1.0);
        assert!((back.data()[2] as f64 - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let img = crate::data::procedural_clean::<f32>(24, 16, 5);
        write_image(&a, &img).unwrap();
        let back = read_image::<f32>(&a).unwrap();
        write_image(&b, &back).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        let bytes_b = std::fs::read(&b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn non_rgb_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let gray = image::GrayImage::from_raw(4, 4, vec![128; 16]).unwrap();
        gray.save(&path).unwrap();
        let err = read_image::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("gray.png"), "{err}");
    }
}
