//! Invariants of the alternating optimization step, checked on a reduced
//! model so the whole file runs in seconds.

use ptgan_core::image::batch_images;
use ptgan_core::loss::{AdversarialForm, IdentityLossForm};
use ptgan_core::mask::batch_masks;
use ptgan_core::model::{DiscriminatorSpec, GeneratorSpec, TransferModel};
use ptgan_core::synth::{synth_generate, StyleParams, SynthConfig};
use ptgan_core::train::{
    generator_param_grads, identity_param_grads, train_step, OptState, ReplayPools, StepBatch,
    TrainConfig,
};
use ptgan_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_model(seed: u64) -> TransferModel {
    TransferModel::new(
        GeneratorSpec {
            input_size: 16,
            base_channels: 4,
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

fn tiny_config() -> TrainConfig {
    TrainConfig {
        image_size: 16,
        batch_size: 1,
        epochs: 1,
        history_buffer_size: 4,
        ..Default::default()
    }
}

fn synth_batches(n: usize) -> Vec<StepBatch> {
    let cfg = SynthConfig {
        num_identities: 8,
        cameras_per_domain: 2,
        images_per_identity_per_camera: 4,
        image_size: 16,
        style_a: StyleParams {
            background_base: [0.45, 0.46, 0.5],
            background_range: 0.04,
            brightness_offset: 0.0,
            hue_shift: 0.0,
            noise_level: 0.02,
            camera_tint: 0.04,
        },
        style_b: StyleParams {
            background_base: [0.35, 0.4, 0.3],
            background_range: 0.04,
            brightness_offset: 0.12,
            hue_shift: 0.3,
            noise_level: 0.02,
            camera_tint: 0.06,
        },
        seed: 17,
        paired_identities: false,
    };
    let (a, b) = synth_generate(&cfg).unwrap();
    (0..n)
        .map(|i| {
            let ia = &a[i % a.len()];
            let ib = &b[(i * 7 + 3) % b.len()];
            StepBatch {
                images_a: batch_images(&[&ia.image]),
                images_b: batch_images(&[&ib.image]),
                masks_a: batch_masks(&[&ia.mask]),
                masks_b: batch_masks(&[&ib.mask]),
                indices_a: vec![i % a.len()],
                indices_b: vec![(i * 7 + 3) % b.len()],
            }
        })
        .collect()
}

#[test]
fn zero_learning_rates_freeze_parameters() {
    let mut model = tiny_model(3);
    let cfg = TrainConfig {
        lr_generator: 0.0,
        lr_discriminator: 0.0,
        ..tiny_config()
    };
    let before = model.param_vectors();
    let mut opt = OptState::new(&model, &cfg);
    let mut pools = ReplayPools::new(cfg.history_buffer_size);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batches = synth_batches(3);
    let mut first = None;
    for (i, batch) in batches.iter().enumerate() {
        let losses = train_step(&mut model, &mut opt, &mut pools, batch, &cfg, &mut rng, i as u64, 1.0)
            .unwrap();
        if i == 0 {
            first = Some(losses);
        }
    }
    assert_eq!(model.param_vectors(), before, "parameters moved at lr 0");

    // Same batch re-evaluated on the frozen model must repeat the loss.
    let mut opt2 = OptState::new(&model, &cfg);
    let mut pools2 = ReplayPools::new(cfg.history_buffer_size);
    let mut rng2 = ChaCha8Rng::seed_from_u64(1);
    let again = train_step(&mut model, &mut opt2, &mut pools2, &batches[0], &cfg, &mut rng2, 0, 1.0)
        .unwrap();
    assert_eq!(again.breakdown, first.unwrap().breakdown);
}

#[test]
fn fixed_seed_reproduces_loss_trajectory_bitwise() {
    let run = || {
        let mut model = tiny_model(5);
        let cfg = tiny_config();
        let mut opt = OptState::new(&model, &cfg);
        let mut pools = ReplayPools::new(cfg.history_buffer_size);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        synth_batches(50)
            .iter()
            .enumerate()
            .map(|(i, batch)| {
                train_step(&mut model, &mut opt, &mut pools, batch, &cfg, &mut rng, i as u64, 1.0)
                    .unwrap()
            })
            .collect::<Vec<_>>()
    };
    let t1 = run();
    let t2 = run();
    assert_eq!(t1.len(), 50);
    for (a, b) in t1.iter().zip(t2.iter()) {
        assert_eq!(a.breakdown, b.breakdown);
        assert_eq!(a.d_a_loss, b.d_a_loss);
        assert_eq!(a.d_b_loss, b.d_b_loss);
    }
}

#[test]
fn generator_and_discriminator_updates_stay_disjoint() {
    let mut model = tiny_model(7);
    let cfg = tiny_config();
    let mut opt = OptState::new(&model, &cfg);
    let mut pools = ReplayPools::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = &synth_batches(1)[0];

    // Generator-only learning: discriminators must stay put.
    let cfg_g = TrainConfig {
        lr_discriminator: 0.0,
        ..cfg.clone()
    };
    let before = model.param_vectors();
    train_step(&mut model, &mut opt, &mut pools, batch, &cfg_g, &mut rng, 0, 1.0).unwrap();
    let after = model.param_vectors();
    assert_ne!(after[0], before[0], "g_ab should move");
    assert_ne!(after[1], before[1], "g_ba should move");
    assert_eq!(after[2], before[2], "d_a must not move");
    assert_eq!(after[3], before[3], "d_b must not move");

    // Discriminator-only learning: generators must stay put.
    let cfg_d = TrainConfig {
        lr_generator: 0.0,
        ..cfg
    };
    let mut opt2 = OptState::new(&model, &cfg_d);
    let before = model.param_vectors();
    train_step(&mut model, &mut opt2, &mut pools, batch, &cfg_d, &mut rng, 1, 1.0).unwrap();
    let after = model.param_vectors();
    assert_eq!(after[0], before[0], "g_ab must not move");
    assert_eq!(after[1], before[1], "g_ba must not move");
    assert_ne!(after[2], before[2], "d_a should move");
    assert_ne!(after[3], before[3], "d_b should move");
}

#[test]
fn lambda1_scales_the_identity_gradient_linearly() {
    let model = tiny_model(11);
    let batch = &synth_batches(1)[0];
    let form = IdentityLossForm::default();
    let adv = AdversarialForm::LeastSquares;
    let g10 = generator_param_grads(&model, batch, 10.0, 10.0, adv, form);
    let g0 = generator_param_grads(&model, batch, 0.0, 10.0, adv, form);
    let gid = identity_param_grads(&model, batch, form);
    assert_eq!(g10.len(), g0.len());
    assert_eq!(g10.len(), gid.len());
    for ((a, b), c) in g10.iter().zip(g0.iter()).zip(gid.iter()) {
        for ((&x, &y), &z) in a.data().iter().zip(b.data()).zip(c.data()) {
            let expect = 10.0 * z;
            let denom = x.abs().max(expect.abs()).max(1e-12);
            assert!(
                ((x - y) - expect).abs() / denom < 1e-9,
                "grad difference {} vs 10*id {}",
                x - y,
                expect
            );
        }
    }
}

#[test]
fn breakdown_recomposition_holds_across_random_steps() {
    let mut model = tiny_model(13);
    let cfg = tiny_config();
    let mut opt = OptState::new(&model, &cfg);
    let mut pools = ReplayPools::new(cfg.history_buffer_size);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (i, batch) in synth_batches(20).iter().enumerate() {
        let losses =
            train_step(&mut model, &mut opt, &mut pools, batch, &cfg, &mut rng, i as u64, 1.0)
                .unwrap();
        assert!(
            losses.breakdown.recomposition_error() < 1e-6,
            "step {i}: {:?}",
            losses.breakdown
        );
        assert!(losses.breakdown.l_cyc >= 0.0);
        assert!(losses.breakdown.l_id >= 0.0);
    }
}

#[test]
fn oversized_lambda_values_reject_nothing_but_nan_does() {
    let mut model = tiny_model(17);
    let cfg = tiny_config();
    let mut opt = OptState::new(&model, &cfg);
    let mut pools = ReplayPools::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut batch = synth_batches(1).remove(0);
    let poisoned: Vec<f64> = batch
        .images_a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == 0 { f64::NAN } else { v })
        .collect();
    batch.images_a = Tensor::from_vec(batch.images_a.dims(), poisoned);
    let err = train_step(&mut model, &mut opt, &mut pools, &batch, &cfg, &mut rng, 9, 1.0)
        .unwrap_err();
    match err {
        ptgan_core::TrainError::NonFiniteLoss { step, batch_a, .. } => {
            assert_eq!(step, 9);
            assert_eq!(batch_a, vec![0]);
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}
