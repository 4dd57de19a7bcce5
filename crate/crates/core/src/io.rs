//! Image files: 8-bit PNG and a lossless float sidecar.
//!
//! Sidecar layout (`.avf`): `b"AVF1" | u32 channels | u32 height | u32 width | f32 LE samples`,
//! planar channel-major like [`ImageTensor`].

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

const SIDECAR_MAGIC: &[u8; 4] = b"AVF1";
pub const SIDECAR_EXTENSION: &str = "avf";

fn unsupported(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Load a PNG (bytes mapped by /255, alpha dropped, gray replicated to RGB)
/// or a float sidecar, chosen by file extension.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    if path.extension().is_some_and(|e| e == SIDECAR_EXTENSION) {
        return load_float(path);
    }
    let bytes = fs::read(path)?;
    let format = image::guess_format(&bytes).map_err(|e| unsupported(path, e.to_string()))?;
    if format != ImageFormat::Png {
        return Err(unsupported(path, format!("{format:?} is not PNG")));
    }
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, img.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageRgba8(_) => (3, img.to_rgb8().into_raw()),
        other => return Err(unsupported(path, format!("unsupported pixel layout {:?}", other.color()))),
    };
    let mut data = vec![0f32; raw.len()];
    for (i, &b) in raw.iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        data[c * h * w + p] = b as f32 / 255.0;
    }
    Ok(ImageTensor::new(channels, h, w, data)?.to_rgb())
}

/// Save as 8-bit PNG, rounding each sample to the nearest of 256 levels.
pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let mut raw = vec![0u8; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                raw[(y * w + x) * c + ch] = (img.get(ch, y, x) * 255.0).round() as u8;
            }
        }
    }
    let dynimg = if c == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w as u32, h as u32, raw).unwrap())
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w as u32, h as u32, raw).unwrap())
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    dynimg.write_to(&mut buf, ImageFormat::Png)?;
    write_atomic(path, &buf.into_inner())
}

pub fn save_float(img: &ImageTensor, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * img.data().len());
    out.extend_from_slice(SIDECAR_MAGIC);
    for d in [img.channels(), img.height(), img.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn load_float(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != SIDECAR_MAGIC {
        return Err(unsupported(path, "bad float sidecar header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let body = &bytes[16..];
    if body.len() != 4 * c * h * w {
        return Err(unsupported(path, "float sidecar length does not match its header"));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageTensor::new(c, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_bytes_map_to_unit_range_and_gray_becomes_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap().save(&path).unwrap();
        let im = load_image(&path).unwrap();
        assert_eq!((im.channels(), im.height(), im.width()), (3, 1, 2));
        for c in 0..3 {
            assert_eq!(im.get(c, 0, 0), 0.0);
            assert_eq!(im.get(c, 0, 1), 1.0);
        }
    }

    #[test]
    fn png_save_load_of_8bit_values_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let im = ImageTensor::from_fn(3, 5, 7, |c, y, x| ((c * 50 + y * 9 + x * 31) % 256) as f32 / 255.0).unwrap();
        save_png(&im, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), im);
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![40000u16])
            .unwrap()
            .save(&path)
            .unwrap();
        assert!(matches!(load_image(&path), Err(Error::UnsupportedImage { .. })));
    }

    #[test]
    fn float_sidecar_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.avf");
        let im = ImageTensor::from_fn(3, 4, 3, |c, y, x| (c as f32 * 0.1 + y as f32 * 0.013 + x as f32 * 1e-4).sqrt()).unwrap();
        save_float(&im, &path).unwrap();
        let back = load_image(&path).unwrap();
        let bits = |i: &ImageTensor| i.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&im));
    }
}
