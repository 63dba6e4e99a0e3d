//! In-memory image representation.
//!
//! Images are three-channel, stored channel-major (`[c][y][x]`), with pixel
//! values kept as reals in `[0, 1]`. Quantization to the 8-bit grid happens
//! only when the companion crate writes files; [`ImageSample::quantized`]
//! mirrors that rounding for in-memory use.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Number of color channels in every sample.
pub const CHANNELS: usize = 3;

/// A dense RGB image with values in `[0, 1]`, laid out `[c][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageSample {
    /// Creates an image filled with a constant per-channel color.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = vec![0.0; CHANNELS * height * width];
        for (c, chunk) in data.chunks_mut(height * width).enumerate() {
            chunk.fill(rgb[c]);
        }
        ImageSample {
            height,
            width,
            data,
        }
    }

    /// Wraps raw channel-major data, validating shape and value range.
    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != CHANNELS * height * width {
            return Err(Error::Validation(format!(
                "image buffer length {} does not match {}x{}x{}",
                data.len(),
                CHANNELS,
                height,
                width
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Validation(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(ImageSample {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Total pixel count (`height * width`).
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Overwrites a rectangle with a constant per-channel color.
    pub fn fill_region(&mut self, top: usize, left: usize, height: usize, width: usize, rgb: [f64; 3]) {
        let bottom = (top + height).min(self.height);
        let right = (left + width).min(self.width);
        for c in 0..CHANNELS {
            for y in top..bottom {
                let row = (c * self.height + y) * self.width;
                for x in left..right {
                    self.data[row + x] = rgb[c];
                }
            }
        }
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = self.pixels() as f64;
        let mut means = [0.0; 3];
        for (c, mean) in means.iter_mut().enumerate() {
            let chunk = &self.data[c * self.pixels()..(c + 1) * self.pixels()];
            *mean = chunk.iter().sum::<f64>() / n;
        }
        means
    }

    /// Returns a copy with every value snapped to the 8-bit grid `k / 255`,
    /// matching what a save/load round trip through the file formats yields.
    pub fn quantized(&self) -> ImageSample {
        let data = self
            .data
            .iter()
            .map(|v| libm::round(v * 255.0) / 255.0)
            .collect();
        ImageSample {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// True when both images have identical dimensions.
    pub fn same_shape(&self, other: &ImageSample) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// A boolean canvas with the same geometry as an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    /// All-clear mask.
    pub fn empty(height: usize, width: usize) -> Self {
        PixelMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Validation(format!(
                "mask buffer length {} does not match {height}x{width}",
                bits.len()
            )));
        }
        Ok(PixelMask {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    /// Marks a rectangle (clipped to bounds).
    pub fn set_region(&mut self, top: usize, left: usize, height: usize, width: usize) {
        let bottom = (top + height).min(self.height);
        let right = (left + width).min(self.width);
        for y in top..bottom {
            for x in left..right {
                self.bits[y * self.width + x] = true;
            }
        }
    }

    /// Number of set pixels.
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// 1.0 where set, 0.0 elsewhere, in image scan order.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_data_validates_range() {
        assert!(ImageSample::from_data(2, 2, vec![0.5; 12]).is_ok());
        assert!(ImageSample::from_data(2, 2, vec![1.5; 12]).is_err());
        assert!(ImageSample::from_data(2, 2, vec![0.5; 11]).is_err());
        assert!(ImageSample::from_data(0, 2, vec![]).is_err());
    }

    #[test]
    fn fill_region_clips_to_bounds() {
        let mut img = ImageSample::filled(4, 4, [0.0; 3]);
        img.fill_region(2, 2, 10, 10, [1.0, 1.0, 1.0]);
        assert_eq!(img.get(0, 3, 3), 1.0);
        assert_eq!(img.get(0, 1, 1), 0.0);
    }

    #[test]
    fn channel_means_are_per_channel() {
        let mut img = ImageSample::filled(2, 2, [0.0, 0.5, 1.0]);
        img.set(0, 0, 0, 1.0);
        let m = img.channel_means();
        assert!((m[0] - 0.25).abs() < 1e-12);
        assert!((m[1] - 0.5).abs() < 1e-12);
        assert!((m[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantized_snaps_to_8bit_grid() {
        let img = ImageSample::from_data(1, 1, vec![0.5, 0.123_456, 1.0]).unwrap();
        let q = img.quantized();
        for v in q.data() {
            let scaled = v * 255.0;
            assert!((scaled - libm::round(scaled)).abs() < 1e-9);
        }
        assert_eq!(q.quantized(), q);
    }

    #[test]
    fn mask_popcount_counts_union() {
        let mut m = PixelMask::empty(4, 4);
        m.set_region(0, 0, 2, 2);
        m.set_region(1, 1, 2, 2);
        assert_eq!(m.popcount(), 7);
    }
}
