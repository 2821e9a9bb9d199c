//! Replay history for discriminator updates.
//!
//! Discriminators train against a mixture of freshly generated images and
//! earlier ones kept in a bounded pool, which damps oscillation. Capacity 0
//! disables the history entirely and always returns the fresh image.

use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Default)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<Tensor>,
}

impl ImagePool {
    pub fn new(capacity: usize) -> Self {
        ImagePool {
            capacity,
            images: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Offers one generated image and returns the image the discriminator
    /// should see. While the pool is filling it stores the newcomer and
    /// returns it; once full, a coin flip either swaps the newcomer against a
    /// random stored image (returning the old one) or passes it through.
    pub fn push_sample<R: Rng>(&mut self, image: Tensor, rng: &mut R) -> Tensor {
        if self.capacity == 0 {
            return image;
        }
        if self.images.len() < self.capacity {
            self.images.push(image.clone());
            return image;
        }
        if rng.random::<bool>() {
            let idx = rng.random_range(0..self.images.len());
            std::mem::replace(&mut self.images[idx], image)
        } else {
            image
        }
    }
}
