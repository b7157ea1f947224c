//! Images as [0,1]-valued tensors with a canonical 256-level quantization.
//!
//! The quantization rule is fixed repo-wide: `level = round(v * 255)`,
//! `v = level / 255`. Every likelihood bin in the degradation module is
//! defined on this grid.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A height x width x channels image with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    values: Tensor,
}

impl Image {
    /// Wraps a tensor shaped [height, width, channels] with values in [0,1].
    pub fn new(values: Tensor) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image tensor must be rank 3 [h,w,c], got {shape:?}"
            )));
        }
        let (height, width, channels) = (shape[0], shape[1], shape[2]);
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "image channels must be 1 or 3, got {channels}"
            )));
        }
        if values.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "image values must lie in [0,1]".into(),
            ));
        }
        Ok(Image {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Image::new(Tensor::from_vec(vec![height, width, channels], data)?)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Image::new(Tensor::zeros(vec![height, width, channels])?)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f32 {
        self.values.data()[(r * self.width + c) * self.channels + ch]
    }

    /// Quantizes a [0,1] value to its 8-bit level.
    #[inline]
    pub fn quantize_value(v: f32) -> u8 {
        (v * 255.0).round().clamp(0.0, 255.0) as u8
    }

    /// Dequantizes an 8-bit level back to [0,1].
    #[inline]
    pub fn dequantize_level(level: u8) -> f32 {
        level as f32 / 255.0
    }

    /// All pixel levels in row-major (row, col, channel) order.
    pub fn to_levels(&self) -> Vec<u8> {
        self.values.data().iter().map(|&v| Self::quantize_value(v)).collect()
    }

    pub fn from_levels(height: usize, width: usize, channels: usize, levels: &[u8]) -> Result<Self> {
        if levels.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} levels, got {}",
                height * width * channels,
                levels.len()
            )));
        }
        let data: Vec<f32> = levels.iter().map(|&l| Self::dequantize_level(l)).collect();
        Image::new(Tensor::from_vec(vec![height, width, channels], data)?)
    }

    /// Snaps every value onto the 256-level grid.
    pub fn quantized(&self) -> Image {
        Image::from_levels(self.height, self.width, self.channels, &self.to_levels())
            .expect("quantization preserves shape and range")
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.values.max_abs_diff(&other.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channels_must_be_1_or_3() {
        assert!(Image::zeros(4, 4, 1).is_ok());
        assert!(Image::zeros(4, 4, 3).is_ok());
        assert!(Image::new(Tensor::zeros(vec![4, 4, 2]).unwrap()).is_err());
    }

    #[test]
    fn range_enforced() {
        let t = Tensor::from_vec(vec![1, 1, 1], vec![1.5]).unwrap();
        assert!(Image::new(t).is_err());
    }

    #[test]
    fn quantization_round_trip_is_lossless_on_grid() {
        for level in 0..=255u8 {
            let v = Image::dequantize_level(level);
            assert_eq!(Image::quantize_value(v), level);
        }
    }

    #[test]
    fn half_maps_to_level_128() {
        assert_eq!(Image::quantize_value(0.5), 128);
    }
}
