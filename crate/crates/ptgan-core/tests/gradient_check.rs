//! Analytic gradients of the full objective against central finite
//! differences on the reduced model. A denser sweep runs in the acceptance
//! suite; this one keeps the core crate self-verifying.

use ptgan_core::image::batch_images;
use ptgan_core::loss::{total_loss, AdversarialForm, IdentityLossForm};
use ptgan_core::mask::batch_masks;
use ptgan_core::model::{DiscriminatorSpec, GeneratorSpec, TransferModel};
use ptgan_core::synth::{synth_generate, SynthConfig};
use ptgan_core::train::{all_param_grads, StepBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reduced_model(seed: u64) -> TransferModel {
    TransferModel::new(
        GeneratorSpec {
            input_size: 16,
            base_channels: 8,
            num_residual_blocks: 1,
        },
        DiscriminatorSpec {
            patch_receptive_field: 70,
            base_channels: 4,
        },
        seed,
    )
    .unwrap()
}

fn reduced_batch() -> StepBatch {
    let cfg = SynthConfig {
        num_identities: 2,
        cameras_per_domain: 1,
        images_per_identity_per_camera: 1,
        image_size: 16,
        seed: 31,
        ..Default::default()
    };
    let (a, b) = synth_generate(&cfg).unwrap();
    StepBatch {
        images_a: batch_images(&[&a[0].image]),
        images_b: batch_images(&[&b[0].image]),
        masks_a: batch_masks(&[&a[0].mask]),
        masks_b: batch_masks(&[&b[0].mask]),
        indices_a: vec![0],
        indices_b: vec![0],
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    let model = reduced_model(29);
    let batch = reduced_batch();
    let (l1, l2) = (10.0, 10.0);
    let adv = AdversarialForm::LeastSquares;
    let idf = IdentityLossForm::default();

    let grads = all_param_grads(&model, &batch, l1, l2, adv, idf);
    let eval = |m: &TransferModel| {
        total_loss(m, &batch.images_a, &batch.images_b, &batch.masks_a, &batch.masks_b, l1, l2, adv, idf)
            .unwrap()
            .l_total
    };

    let step = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let counts: Vec<usize> = grads
        .iter()
        .map(|g| g.iter().map(|t| t.len()).sum())
        .collect();
    let mut checked = 0;
    let mut within = 0;
    let mut max_rel: f64 = 0.0;
    for _ in 0..60 {
        let net = rng.random_range(0..4);
        let idx = rng.random_range(0..counts[net]);
        let mut plus = model.clone();
        plus.perturb_param(net, idx, step);
        let mut minus = model.clone();
        minus.perturb_param(net, idx, -step);
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
        let analytic = {
            let mut offset = 0;
            let mut found = 0.0;
            for t in &grads[net] {
                if idx < offset + t.len() {
                    found = t.data()[idx - offset];
                    break;
                }
                offset += t.len();
            }
            found
        };
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        max_rel = max_rel.max(rel);
        checked += 1;
        if rel < 1e-3 {
            within += 1;
        }
    }
    assert!(
        within as f64 >= 0.95 * checked as f64,
        "{within}/{checked} coordinates within 1e-3 (max rel {max_rel:.2e})"
    );
    assert!(max_rel < 1e-2, "max relative error {max_rel:.2e} exceeds 1e-2");
}
