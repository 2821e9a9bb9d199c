//! Normalized image values and deterministic resampling.
//!
//! Pixels live in [-1, 1]; byte images are mapped through v/127.5 - 1 so that
//! 0 -> -1 and 255 -> 1, matching the tanh range of the generator output.

use crate::tensor::{Bchw, Tensor};

/// A single image in CHW layout with values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Wraps raw CHW data, clamping tiny numeric overshoots and asserting the
    /// values are plausibly normalized.
    pub fn from_normalized(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        assert_eq!(data.len(), height * width * channels);
        let data = data
            .into_iter()
            .map(|v| {
                debug_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v), "value {v} outside [-1,1]");
                v.clamp(-1.0, 1.0)
            })
            .collect();
        ImageTensor {
            height,
            width,
            channels,
            data,
        }
    }

    /// Interleaved RGB bytes (HWC) to a normalized CHW image.
    pub fn from_u8_rgb(height: usize, width: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), height * width * 3);
        let mut data = vec![0.0; height * width * 3];
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data[c * height * width + y * width + x] =
                        f64::from(bytes[(y * width + x) * 3 + c]) / 127.5 - 1.0;
                }
            }
        }
        ImageTensor {
            height,
            width,
            channels: 3,
            data,
        }
    }

    /// Back to interleaved RGB bytes, rounding to nearest.
    pub fn to_u8_rgb(&self) -> Vec<u8> {
        assert_eq!(self.channels, 3);
        let plane = self.height * self.width;
        let mut out = vec![0u8; plane * 3];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    let v = (self.data[c * plane + y * self.width + x] + 1.0) * 127.5;
                    out[(y * self.width + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mean pixel value remapped to [0, 1]; the brightness statistic used by
    /// the style-adoption checks.
    pub fn mean_brightness(&self) -> f64 {
        let sum: f64 = self.data.iter().map(|v| (v + 1.0) * 0.5).sum();
        sum / self.data.len() as f64
    }

    /// Bilinear resampling with the pixel-center convention. Resizing to the
    /// same size reproduces the input exactly.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> ImageTensor {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let plane_in = self.height * self.width;
        let plane_out = height * width;
        let mut data = vec![0.0; plane_out * self.channels];
        let scale_y = self.height as f64 / height as f64;
        let scale_x = self.width as f64 / width as f64;
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = sy - y0 as f64;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = sx - x0 as f64;
                for c in 0..self.channels {
                    let p = &self.data[c * plane_in..(c + 1) * plane_in];
                    let v = p[y0 * self.width + x0] * (1.0 - fy) * (1.0 - fx)
                        + p[y0 * self.width + x1] * (1.0 - fy) * fx
                        + p[y1 * self.width + x0] * fy * (1.0 - fx)
                        + p[y1 * self.width + x1] * fy * fx;
                    data[c * plane_out + y * width + x] = v;
                }
            }
        }
        ImageTensor {
            height,
            width,
            channels: self.channels,
            data,
        }
    }
}

/// Stacks images of identical shape into a `[B,C,H,W]` batch tensor.
pub fn batch_images(images: &[&ImageTensor]) -> Tensor {
    assert!(!images.is_empty());
    let (h, w, c) = (images[0].height, images[0].width, images[0].channels);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        assert_eq!((img.height, img.width, img.channels), (h, w, c), "ragged batch");
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec(&[images.len(), c, h, w], data)
}

/// Extracts sample `idx` of a `[B,C,H,W]` tensor, clamping into range.
pub fn image_from_batch(batch: &Tensor, idx: usize) -> ImageTensor {
    let s = Bchw::of(batch);
    assert!(idx < s.batch);
    let per = s.channels * s.height * s.width;
    let data = batch.data()[idx * per..(idx + 1) * per]
        .iter()
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    ImageTensor {
        height: s.height,
        width: s.width,
        channels: s.channels,
        data,
    }
}
