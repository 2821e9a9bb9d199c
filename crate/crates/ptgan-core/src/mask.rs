//! Foreground masks: per-pixel weights in [0, 1] restricting the identity
//! loss to the person region.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl ForegroundMask {
    pub fn from_weights(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert!(height > 0 && width > 0);
        assert_eq!(data.len(), height * width);
        let data = data
            .into_iter()
            .map(|v| {
                debug_assert!((-1e-9..=1.0 + 1e-9).contains(&v), "weight {v} outside [0,1]");
                v.clamp(0.0, 1.0)
            })
            .collect();
        ForegroundMask { height, width, data }
    }

    /// Grayscale bytes to weights: 0 is background, 255 is foreground.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), height * width);
        ForegroundMask {
            height,
            width,
            data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.data
    }

    /// Nearest-neighbor resampling, the convention for masks.
    pub fn resize_nearest(&self, height: usize, width: usize) -> ForegroundMask {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut data = vec![0.0; height * width];
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize)
                .min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize)
                    .min(self.width - 1);
                data[y * width + x] = self.data[sy * self.width + sx];
            }
        }
        ForegroundMask { height, width, data }
    }

    /// Mean weight: the fraction of the image treated as foreground.
    pub fn coverage(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Stacks masks into a `[B,1,H,W]` tensor for loss evaluation.
pub fn batch_masks(masks: &[&ForegroundMask]) -> Tensor {
    assert!(!masks.is_empty());
    let (h, w) = (masks[0].height, masks[0].width);
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        assert_eq!((m.height, m.width), (h, w), "ragged mask batch");
        data.extend_from_slice(m.weights());
    }
    Tensor::from_vec(&[masks.len(), 1, h, w], data)
}

/// Parameters of the fallback prior: a centered soft ellipse that is 1 in the
/// core, falls off over a cosine band, and is 0 outside. Axes are fractions
/// of the image width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub semi_axis_x: f64,
    pub semi_axis_y: f64,
    pub border_band: f64,
}

impl Default for PriorParams {
    fn default() -> Self {
        PriorParams {
            semi_axis_x: 0.30,
            semi_axis_y: 0.45,
            border_band: 0.15,
        }
    }
}

/// Deterministic person-shaped prior for records without a segmenter mask.
pub fn baseline_prior_mask(height: usize, width: usize, params: &PriorParams) -> ForegroundMask {
    assert!(height > 0 && width > 0);
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let ax = params.semi_axis_x * width as f64;
    let ay = params.semi_axis_y * height as f64;
    let band = params.border_band.max(1e-9);
    let mut data = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 + 0.5 - cx) / ax;
            let dy = (y as f64 + 0.5 - cy) / ay;
            let r = (dx * dx + dy * dy).sqrt();
            data[y * width + x] = if r <= 1.0 - band {
                1.0
            } else if r >= 1.0 {
                0.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (r - (1.0 - band)) / band).cos())
            };
        }
    }
    ForegroundMask { height, width, data }
}
