//! Image container with intensities in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planar (channel-major) image. Every sample lies in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Validating constructor: rejects out-of-range or non-finite samples.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Shape("empty image".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} image needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Build from unbounded samples, clamping into `[0, 1]` (NaN becomes 0).
    pub fn clamped(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(channels, height, width, data)
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::clamped(channels, height, width, data)
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )))
        }
    }

    /// Grayscale replicated into three identical channels; RGB passes through.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(3 * self.data.len());
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Self {
            channels: 3,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Snap every sample to the nearest multiple of 1/255.
    pub fn quantize_8bit(&self) -> Self {
        Self {
            data: self.data.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
            ..self.clone()
        }
    }

    /// `[1, C, H, W]` tensor view of this image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.channels, self.height, self.width], self.data.clone()).unwrap()
    }

    /// Batch entry `index` of an NCHW tensor, clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4();
        let s = t.sample(index);
        Self::clamped(c, h, w, s.into_data())
    }

    /// Stack same-shaped images into an NCHW tensor.
    pub fn batch(images: &[&ImageTensor]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            first.check_same_shape(im)?;
            data.extend_from_slice(&im.data);
        }
        Tensor::from_vec(&[images.len(), first.channels, first.height, first.width], data)
    }

    /// Copy out a `h x w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(self.channels, h, w, |c, y, x| self.get(c, y0 + y, x0 + x))
    }
}
