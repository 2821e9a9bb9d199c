//! Baseline descriptor network: a small identity classifier whose penultimate
//! activations, L2-normalized, are the retrieval features. The backbone is
//! deliberately pluggable; anything exposing `embed` can replace it.

use crate::conv::PadMode;
use crate::error::EmbedError;
use crate::graph::Graph;
use crate::image::{batch_images, ImageTensor};
use crate::nn::{collect_grads, ConvLayer, Layer, LinearLayer, Sequential};
use crate::optim::AdamState;
use crate::seed::{derive_seed, derive_seed_indexed};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Fully pinned training recipe so experiment rows stay comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderRecipe {
    pub embed_dim: usize,
    pub base_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for EmbedderRecipe {
    fn default() -> Self {
        EmbedderRecipe {
            embed_dim: 32,
            base_channels: 12,
            epochs: 25,
            batch_size: 16,
            lr: 1e-3,
            image_size: 64,
            seed: 0,
        }
    }
}

impl EmbedderRecipe {
    pub fn validate(&self) -> Result<(), EmbedError> {
        for (field, ok) in [
            ("embed_dim", self.embed_dim >= 1),
            ("base_channels", self.base_channels >= 1),
            ("epochs", self.epochs >= 1),
            ("batch_size", self.batch_size >= 1),
            ("image_size", self.image_size >= 16),
        ] {
            if !ok {
                return Err(EmbedError::InvalidRecipe {
                    field,
                    reason: "must be positive (image_size >= 16)".into(),
                });
            }
        }
        if self.lr <= 0.0 {
            return Err(EmbedError::InvalidRecipe {
                field: "lr",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Embedder {
    pub recipe: EmbedderRecipe,
    trunk: Sequential,
    neck: LinearLayer,
    classifier: LinearLayer,
    num_classes: usize,
}

impl Embedder {
    fn new(recipe: &EmbedderRecipe, num_classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(recipe.seed, "embedder-init"));
        let c = recipe.base_channels;
        let trunk = Sequential {
            layers: vec![
                Layer::Conv(ConvLayer::he(3, c, 3, 2, 1, PadMode::Zeros, &mut rng)),
                Layer::Relu,
                Layer::Conv(ConvLayer::he(c, 2 * c, 3, 2, 1, PadMode::Zeros, &mut rng)),
                Layer::Relu,
                Layer::Conv(ConvLayer::he(2 * c, 4 * c, 3, 2, 1, PadMode::Zeros, &mut rng)),
                Layer::Relu,
            ],
        };
        let neck = LinearLayer::he(4 * c, recipe.embed_dim, &mut rng);
        let classifier = LinearLayer::he(recipe.embed_dim, num_classes, &mut rng);
        Embedder {
            recipe: recipe.clone(),
            trunk,
            neck,
            classifier,
            num_classes,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.recipe.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn features_graph(
        &self,
        g: &mut Graph,
        trainable: bool,
        x: crate::graph::Var,
    ) -> (crate::graph::Var, Vec<crate::graph::Var>, crate::nn::BoundNet) {
        let bound = self.trunk.bind(g, trainable);
        let h = self.trunk.forward_bound(g, &bound, x);
        let pooled = g.mean_spatial(h);
        let mut neck_vars = Vec::new();
        self.neck.bind(g, trainable, &mut neck_vars);
        let mut cursor = 0;
        let feat = self.neck.forward_bound(g, &neck_vars, &mut cursor, pooled);
        let feat = g.relu(feat);
        (feat, neck_vars, bound)
    }

    /// L2-normalized penultimate features for a `[B,3,H,W]` batch.
    pub fn embed(&self, batch: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let (feat, _, _) = self.features_graph(&mut g, false, x);
        let raw = g.value(feat).clone();
        let dims = raw.dims().to_vec();
        let (n, d) = (dims[0], dims[1]);
        let mut out = raw.into_data();
        for i in 0..n {
            let row = &mut out[i * d..(i + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        Tensor::from_vec(&[n, d], out)
    }

    /// Features for a list of images, resized to the recipe's working size.
    pub fn embed_images(&self, images: &[ImageTensor]) -> Tensor {
        let resized: Vec<ImageTensor> = images
            .iter()
            .map(|im| im.resize_bilinear(self.recipe.image_size, self.recipe.image_size))
            .collect();
        let refs: Vec<&ImageTensor> = resized.iter().collect();
        self.embed(&batch_images(&refs))
    }

    /// Predicted class index per sample of a `[B,3,H,W]` batch.
    pub fn classify(&self, batch: &Tensor) -> Vec<usize> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let (feat, _, _) = self.features_graph(&mut g, false, x);
        let mut cls_vars = Vec::new();
        self.classifier.bind(&mut g, false, &mut cls_vars);
        let mut cursor = 0;
        let logits = self.classifier.forward_bound(&mut g, &cls_vars, &mut cursor, feat);
        let k = self.num_classes;
        g.value(logits)
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.trunk.flat_params();
        out.extend_from_slice(self.neck.weight.data());
        out.extend_from_slice(self.neck.bias.data());
        out.extend_from_slice(self.classifier.weight.data());
        out.extend_from_slice(self.classifier.bias.data());
        out
    }
}

/// Classifier training over identities with a seeded shuffle per epoch.
/// Returns the embedder and its final-epoch training accuracy.
pub fn train_embedder(
    images: &[ImageTensor],
    person_ids: &[String],
    recipe: &EmbedderRecipe,
) -> Result<(Embedder, f64), EmbedError> {
    recipe.validate()?;
    assert_eq!(images.len(), person_ids.len());
    let mut class_of: BTreeMap<&str, usize> = BTreeMap::new();
    for pid in person_ids {
        let next = class_of.len();
        class_of.entry(pid.as_str()).or_insert(next);
    }
    let num_classes = class_of.len();
    if num_classes < 2 {
        return Err(EmbedError::TooFewIdentities(num_classes));
    }
    let labels: Vec<usize> = person_ids.iter().map(|p| class_of[p.as_str()]).collect();

    let resized: Vec<ImageTensor> = images
        .iter()
        .map(|im| im.resize_bilinear(recipe.image_size, recipe.image_size))
        .collect();

    let mut embedder = Embedder::new(recipe, num_classes);
    let shapes: Vec<Vec<usize>> = {
        let mut s = embedder.trunk.param_shapes();
        s.push(embedder.neck.weight.dims().to_vec());
        s.push(embedder.neck.bias.dims().to_vec());
        s.push(embedder.classifier.weight.dims().to_vec());
        s.push(embedder.classifier.bias.dims().to_vec());
        s
    };
    let mut adam = AdamState::new(recipe.lr, 0.9, 0.999, &shapes);

    let mut indices: Vec<usize> = (0..resized.len()).collect();
    for epoch in 0..recipe.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(
            recipe.seed,
            "embedder-epoch",
            epoch as u64,
        ));
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(recipe.batch_size) {
            let batch_imgs: Vec<&ImageTensor> = chunk.iter().map(|&i| &resized[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let batch = batch_images(&batch_imgs);

            let mut g = Graph::new();
            let x = g.constant(batch);
            let (feat, neck_vars, trunk_bound) = embedder.features_graph(&mut g, true, x);
            let mut cls_vars = Vec::new();
            embedder.classifier.bind(&mut g, true, &mut cls_vars);
            let mut cursor = 0;
            let logits = embedder
                .classifier
                .forward_bound(&mut g, &cls_vars, &mut cursor, feat);
            let loss = g.softmax_cross_entropy_mean(logits, batch_labels);
            g.backward(loss);

            let mut grads = collect_grads(&g, &embedder.trunk, &trunk_bound);
            for vars in [&neck_vars, &cls_vars] {
                for &v in vars.iter() {
                    grads.push(match g.grad(v) {
                        Some(t) => t.clone(),
                        None => Tensor::zeros(g.value(v).dims()),
                    });
                }
            }
            drop(g);

            adam.begin_step();
            let mut idx = 0;
            embedder.trunk.for_each_param_mut(&mut |p| {
                adam.update(idx, p, &grads[idx], 1.0);
                idx += 1;
            });
            embedder.neck.for_each_param_mut(&mut |p| {
                adam.update(idx, p, &grads[idx], 1.0);
                idx += 1;
            });
            embedder.classifier.for_each_param_mut(&mut |p| {
                adam.update(idx, p, &grads[idx], 1.0);
                idx += 1;
            });
        }
    }

    // Final-weights training accuracy, the recipe's smoke benchmark.
    let mut correct = 0usize;
    for chunk in (0..resized.len()).collect::<Vec<_>>().chunks(recipe.batch_size) {
        let batch_imgs: Vec<&ImageTensor> = chunk.iter().map(|&i| &resized[i]).collect();
        let preds = embedder.classify(&batch_images(&batch_imgs));
        for (&i, &p) in chunk.iter().zip(preds.iter()) {
            if p == labels[i] {
                correct += 1;
            }
        }
    }
    let accuracy = correct as f64 / resized.len() as f64;
    Ok((embedder, accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn colored_image(color: [f64; 3], size: usize, jitter: f64, rng: &mut ChaCha8Rng) -> ImageTensor {
        use rand::Rng;
        let plane = size * size;
        let mut data = vec![0.0; 3 * plane];
        for c in 0..3 {
            for p in 0..plane {
                let j = if jitter > 0.0 { rng.random_range(-jitter..jitter) } else { 0.0 };
                data[c * plane + p] = (color[c] + j).clamp(0.0, 1.0) * 2.0 - 1.0;
            }
        }
        ImageTensor::from_normalized(size, size, 3, data)
    }

    fn recipe() -> EmbedderRecipe {
        EmbedderRecipe {
            embed_dim: 8,
            base_channels: 4,
            epochs: 40,
            batch_size: 8,
            lr: 2e-3,
            image_size: 16,
            seed: 3,
        }
    }

    #[test]
    fn single_identity_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let imgs: Vec<ImageTensor> = (0..4)
            .map(|_| colored_image([0.8, 0.1, 0.1], 16, 0.02, &mut rng))
            .collect();
        let ids = vec!["p1".to_string(); 4];
        assert_eq!(
            train_embedder(&imgs, &ids, &recipe()).unwrap_err(),
            EmbedError::TooFewIdentities(1)
        );
    }

    #[test]
    fn separable_colors_reach_high_accuracy_and_unit_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let colors = [
            [0.9, 0.1, 0.1],
            [0.1, 0.9, 0.1],
            [0.1, 0.1, 0.9],
            [0.8, 0.8, 0.1],
        ];
        let mut imgs = Vec::new();
        let mut ids = Vec::new();
        for (i, c) in colors.iter().enumerate() {
            for _ in 0..6 {
                imgs.push(colored_image(*c, 16, 0.03, &mut rng));
                ids.push(format!("p{i}"));
            }
        }
        let (embedder, acc) = train_embedder(&imgs, &ids, &recipe()).unwrap();
        assert!(acc > 0.9, "training accuracy {acc}");
        let feats = embedder.embed_images(&imgs);
        assert_eq!(feats.dims(), &[24, 8]);
        for i in 0..24 {
            let row = &feats.data()[i * 8..(i + 1) * 8];
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "row {i} norm {norm}");
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut imgs = Vec::new();
        let mut ids = Vec::new();
        for i in 0..3 {
            for _ in 0..4 {
                imgs.push(colored_image([0.2 + 0.3 * i as f64, 0.5, 0.4], 16, 0.02, &mut rng));
                ids.push(format!("p{i}"));
            }
        }
        let (e1, _) = train_embedder(&imgs, &ids, &recipe()).unwrap();
        let (e2, _) = train_embedder(&imgs, &ids, &recipe()).unwrap();
        assert_eq!(e1.flat_params(), e2.flat_params());
    }

    #[test]
    fn duplicate_images_embed_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = colored_image([0.6, 0.3, 0.2], 16, 0.0, &mut rng);
        let mut imgs = vec![img.clone(), img];
        imgs.push(colored_image([0.1, 0.8, 0.3], 16, 0.0, &mut rng));
        imgs.push(colored_image([0.1, 0.2, 0.9], 16, 0.0, &mut rng));
        let ids = vec!["a".into(), "a".into(), "b".into(), "c".into()];
        let (embedder, _) = train_embedder(&imgs, &ids, &recipe()).unwrap();
        let feats = embedder.embed_images(&imgs);
        let (r0, r1) = (&feats.data()[0..8], &feats.data()[8..16]);
        assert_eq!(r0, r1);
    }
}
