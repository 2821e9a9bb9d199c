//! One alternating optimization step and its configuration.

use crate::error::TrainError;
use crate::graph::Graph;
use crate::loss::{
    adversarial_loss_graph, total_loss_graph, AdversarialForm, AdversarialTarget,
    GeneratorPassNets, IdentityLossForm, LossBreakdown,
};
use crate::model::TransferModel;
use crate::nn::collect_grads;
use crate::optim::AdamState;
use crate::pool::ImagePool;
use crate::tensor::{Bchw, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Training hyperparameters. Defaults follow the reference recipe: Adam with
/// generator rate 2e-4 and discriminator rate 1e-4, trade-off weights
/// lambda1 = lambda2 = 10, 40 epochs at 256x256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub image_size: usize,
    pub history_buffer_size: usize,
    pub seed: u64,
    pub adversarial_form: AdversarialForm,
    pub identity_loss_form: IdentityLossForm,
    /// Linear decay of both learning rates to zero over the epochs.
    /// Off by default: the reference recipe keeps constant rates.
    pub lr_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 10.0,
            lambda2: 10.0,
            lr_generator: 2e-4,
            lr_discriminator: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            epochs: 40,
            batch_size: 1,
            image_size: 256,
            history_buffer_size: 50,
            seed: 0,
            adversarial_form: AdversarialForm::LeastSquares,
            identity_loss_form: IdentityLossForm::default(),
            lr_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr_generator >= 0.0 && self.lr_discriminator >= 0.0) {
            return Err(TrainError::InvalidConfig {
                field: "lr",
                reason: "learning rates must be non-negative".into(),
            });
        }
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig {
                field: "epochs",
                reason: "must be at least 1".into(),
            });
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig {
                field: "batch_size",
                reason: "must be at least 1".into(),
            });
        }
        if self.image_size % 4 != 0 || self.image_size < 16 {
            return Err(TrainError::InvalidConfig {
                field: "image_size",
                reason: format!("{} must be >= 16 and divisible by 4", self.image_size),
            });
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(TrainError::InvalidConfig {
                field: "lambda",
                reason: "trade-off weights must be non-negative".into(),
            });
        }
        Ok(())
    }
}

/// Optimizer state for all four networks. Generators and discriminators have
/// separate rates; each network keeps its own moment buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub g_ab: AdamState,
    pub g_ba: AdamState,
    pub d_a: AdamState,
    pub d_b: AdamState,
}

impl OptState {
    pub fn new(model: &TransferModel, cfg: &TrainConfig) -> Self {
        OptState {
            g_ab: AdamState::new(
                cfg.lr_generator,
                cfg.adam_beta1,
                cfg.adam_beta2,
                &model.g_ab.net.param_shapes(),
            ),
            g_ba: AdamState::new(
                cfg.lr_generator,
                cfg.adam_beta1,
                cfg.adam_beta2,
                &model.g_ba.net.param_shapes(),
            ),
            d_a: AdamState::new(
                cfg.lr_discriminator,
                cfg.adam_beta1,
                cfg.adam_beta2,
                &model.d_a.net.param_shapes(),
            ),
            d_b: AdamState::new(
                cfg.lr_discriminator,
                cfg.adam_beta1,
                cfg.adam_beta2,
                &model.d_b.net.param_shapes(),
            ),
        }
    }
}

/// Replay pools for the two discriminators.
#[derive(Debug, Clone, Default)]
pub struct ReplayPools {
    pub fake_a: ImagePool,
    pub fake_b: ImagePool,
}

impl ReplayPools {
    pub fn new(capacity: usize) -> Self {
        ReplayPools {
            fake_a: ImagePool::new(capacity),
            fake_b: ImagePool::new(capacity),
        }
    }
}

/// One batch pair with single-channel masks and the record indices the
/// samples came from (reported in diagnostics).
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub images_a: Tensor,
    pub images_b: Tensor,
    pub masks_a: Tensor,
    pub masks_b: Tensor,
    pub indices_a: Vec<usize>,
    pub indices_b: Vec<usize>,
}

/// Losses of one step, measured before the parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub breakdown: LossBreakdown,
    pub d_a_loss: f64,
    pub d_b_loss: f64,
}

fn split_batch(batch: &Tensor) -> Vec<Tensor> {
    let s = Bchw::of(batch);
    let per = s.channels * s.height * s.width;
    (0..s.batch)
        .map(|bi| {
            Tensor::from_vec(
                &[1, s.channels, s.height, s.width],
                batch.data()[bi * per..(bi + 1) * per].to_vec(),
            )
        })
        .collect()
}

fn stack_batch(samples: &[Tensor]) -> Tensor {
    let s = Bchw::of(&samples[0]);
    let mut data = Vec::with_capacity(samples.len() * samples[0].len());
    for t in samples {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[samples.len(), s.channels, s.height, s.width], data)
}

/// One alternating update: generators first against frozen discriminators,
/// then each discriminator against real images and replayed fakes. Reported
/// losses are the pre-update values. All randomness comes from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut TransferModel,
    opt: &mut OptState,
    pools: &mut ReplayPools,
    batch: &StepBatch,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    step: u64,
    lr_scale: f64,
) -> Result<StepLosses, TrainError> {
    let sa = Bchw::of(&batch.images_a);
    let sb = Bchw::of(&batch.images_b);
    if sa.batch != sb.batch {
        return Err(TrainError::InvalidConfig {
            field: "batch_size",
            reason: format!("domain batches differ: {} vs {}", sa.batch, sb.batch),
        });
    }

    // Generator pass: discriminators participate frozen.
    let mut g = Graph::new();
    let a = g.constant(batch.images_a.clone());
    let b = g.constant(batch.images_b.clone());
    let ma = g.constant(crate::loss::expand_mask(&batch.masks_a, sa.channels));
    let mb = g.constant(crate::loss::expand_mask(&batch.masks_b, sb.channels));
    let bound_g_ab = model.g_ab.bind(&mut g, true);
    let bound_g_ba = model.g_ba.bind(&mut g, true);
    let bound_d_a = model.d_a.bind(&mut g, false);
    let bound_d_b = model.d_b.bind(&mut g, false);
    let nets = GeneratorPassNets {
        model,
        g_ab: &bound_g_ab,
        g_ba: &bound_g_ba,
        d_a: &bound_d_a,
        d_b: &bound_d_b,
    };
    let vars = total_loss_graph(
        &mut g,
        &nets,
        a,
        b,
        ma,
        mb,
        cfg.lambda1,
        cfg.lambda2,
        cfg.adversarial_form,
        cfg.identity_loss_form,
    );
    let breakdown = LossBreakdown {
        l_gan_a_to_b: g.value(vars.l_gan_a_to_b).item(),
        l_gan_b_to_a: g.value(vars.l_gan_b_to_a).item(),
        l_cyc: g.value(vars.l_cyc).item(),
        l_id: g.value(vars.l_id).item(),
        l_style: g.value(vars.l_style).item(),
        l_total: g.value(vars.l_total).item(),
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
    };
    if !breakdown.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            step,
            batch_a: batch.indices_a.clone(),
            batch_b: batch.indices_b.clone(),
        });
    }
    let fake_b_value = g.value(vars.fake_b).clone();
    let fake_a_value = g.value(vars.fake_a).clone();
    g.backward(vars.l_total);
    let grads_g_ab = collect_grads(&g, &model.g_ab.net, &bound_g_ab);
    let grads_g_ba = collect_grads(&g, &model.g_ba.net, &bound_g_ba);
    drop(g);

    opt.g_ab.begin_step();
    let mut idx = 0;
    model.g_ab.net.for_each_param_mut(&mut |p| {
        opt.g_ab.update(idx, p, &grads_g_ab[idx], lr_scale);
        idx += 1;
    });
    opt.g_ba.begin_step();
    let mut idx = 0;
    model.g_ba.net.for_each_param_mut(&mut |p| {
        opt.g_ba.update(idx, p, &grads_g_ba[idx], lr_scale);
        idx += 1;
    });

    // Discriminator pass: fakes are detached and routed through the replay
    // pools, per sample. Pool order: domain B fakes first, then domain A.
    let fakes_b: Vec<Tensor> = split_batch(&fake_b_value)
        .into_iter()
        .map(|img| pools.fake_b.push_sample(img, rng))
        .collect();
    let fakes_a: Vec<Tensor> = split_batch(&fake_a_value)
        .into_iter()
        .map(|img| pools.fake_a.push_sample(img, rng))
        .collect();
    let pool_fake_b = stack_batch(&fakes_b);
    let pool_fake_a = stack_batch(&fakes_a);

    let d_b_loss = update_discriminator(
        &mut model.d_b,
        &mut opt.d_b,
        &batch.images_b,
        &pool_fake_b,
        cfg.adversarial_form,
        lr_scale,
    );
    let d_a_loss = update_discriminator(
        &mut model.d_a,
        &mut opt.d_a,
        &batch.images_a,
        &pool_fake_a,
        cfg.adversarial_form,
        lr_scale,
    );

    Ok(StepLosses {
        breakdown,
        d_a_loss,
        d_b_loss,
    })
}

/// Half-weighted classification loss against real and fake batches, then one
/// Adam step. Returns the pre-update loss value.
fn update_discriminator(
    disc: &mut crate::model::PatchDiscriminator,
    adam: &mut AdamState,
    real: &Tensor,
    fake: &Tensor,
    form: AdversarialForm,
    lr_scale: f64,
) -> f64 {
    let mut g = Graph::new();
    let real_v = g.constant(real.clone());
    let fake_v = g.constant(fake.clone());
    let bound = disc.bind(&mut g, true);
    let scores_real = disc.forward_bound(&mut g, &bound, real_v);
    let scores_fake = disc.forward_bound(&mut g, &bound, fake_v);
    let loss_real = adversarial_loss_graph(&mut g, scores_real, AdversarialTarget::Real, form);
    let loss_fake = adversarial_loss_graph(&mut g, scores_fake, AdversarialTarget::Fake, form);
    let sum = g.add(loss_real, loss_fake);
    let loss = g.scale(sum, 0.5);
    let value = g.value(loss).item();
    g.backward(loss);
    let grads = collect_grads(&g, &disc.net, &bound);
    drop(g);
    adam.begin_step();
    let mut idx = 0;
    disc.net.for_each_param_mut(&mut |p| {
        adam.update(idx, p, &grads[idx], lr_scale);
        idx += 1;
    });
    value
}

/// Parameter gradients of the full generator-side objective at the current
/// parameters, without touching the model. Order: all of `g_ab`'s parameters,
/// then all of `g_ba`'s.
pub fn generator_param_grads(
    model: &TransferModel,
    batch: &StepBatch,
    lambda1: f64,
    lambda2: f64,
    adv_form: AdversarialForm,
    id_form: IdentityLossForm,
) -> Vec<Tensor> {
    let sa = Bchw::of(&batch.images_a);
    let mut g = Graph::new();
    let a = g.constant(batch.images_a.clone());
    let b = g.constant(batch.images_b.clone());
    let ma = g.constant(crate::loss::expand_mask(&batch.masks_a, sa.channels));
    let mb = g.constant(crate::loss::expand_mask(&batch.masks_b, sa.channels));
    let bound_g_ab = model.g_ab.bind(&mut g, true);
    let bound_g_ba = model.g_ba.bind(&mut g, true);
    let bound_d_a = model.d_a.bind(&mut g, false);
    let bound_d_b = model.d_b.bind(&mut g, false);
    let nets = GeneratorPassNets {
        model,
        g_ab: &bound_g_ab,
        g_ba: &bound_g_ba,
        d_a: &bound_d_a,
        d_b: &bound_d_b,
    };
    let vars = total_loss_graph(&mut g, &nets, a, b, ma, mb, lambda1, lambda2, adv_form, id_form);
    g.backward(vars.l_total);
    let mut grads = collect_grads(&g, &model.g_ab.net, &bound_g_ab);
    grads.extend(collect_grads(&g, &model.g_ba.net, &bound_g_ba));
    grads
}

/// Gradients of the full objective with respect to every parameter of all
/// four networks, in model order (`g_ab`, `g_ba`, `d_a`, `d_b`). Used by
/// finite-difference verification.
pub fn all_param_grads(
    model: &TransferModel,
    batch: &StepBatch,
    lambda1: f64,
    lambda2: f64,
    adv_form: AdversarialForm,
    id_form: IdentityLossForm,
) -> [Vec<Tensor>; 4] {
    let sa = Bchw::of(&batch.images_a);
    let mut g = Graph::new();
    let a = g.constant(batch.images_a.clone());
    let b = g.constant(batch.images_b.clone());
    let ma = g.constant(crate::loss::expand_mask(&batch.masks_a, sa.channels));
    let mb = g.constant(crate::loss::expand_mask(&batch.masks_b, sa.channels));
    let bound_g_ab = model.g_ab.bind(&mut g, true);
    let bound_g_ba = model.g_ba.bind(&mut g, true);
    let bound_d_a = model.d_a.bind(&mut g, true);
    let bound_d_b = model.d_b.bind(&mut g, true);
    let nets = GeneratorPassNets {
        model,
        g_ab: &bound_g_ab,
        g_ba: &bound_g_ba,
        d_a: &bound_d_a,
        d_b: &bound_d_b,
    };
    let vars = total_loss_graph(&mut g, &nets, a, b, ma, mb, lambda1, lambda2, adv_form, id_form);
    g.backward(vars.l_total);
    [
        collect_grads(&g, &model.g_ab.net, &bound_g_ab),
        collect_grads(&g, &model.g_ba.net, &bound_g_ba),
        collect_grads(&g, &model.d_a.net, &bound_d_a),
        collect_grads(&g, &model.d_b.net, &bound_d_b),
    ]
}

/// Gradients of the identity term alone, same ordering as
/// [`generator_param_grads`].
pub fn identity_param_grads(
    model: &TransferModel,
    batch: &StepBatch,
    id_form: IdentityLossForm,
) -> Vec<Tensor> {
    let sa = Bchw::of(&batch.images_a);
    let mut g = Graph::new();
    let a = g.constant(batch.images_a.clone());
    let b = g.constant(batch.images_b.clone());
    let ma = g.constant(crate::loss::expand_mask(&batch.masks_a, sa.channels));
    let mb = g.constant(crate::loss::expand_mask(&batch.masks_b, sa.channels));
    let bound_g_ab = model.g_ab.bind(&mut g, true);
    let bound_g_ba = model.g_ba.bind(&mut g, true);
    let fake_b = model.g_ab.forward_bound(&mut g, &bound_g_ab, a);
    let fake_a = model.g_ba.forward_bound(&mut g, &bound_g_ba, b);
    let l_id_a = crate::loss::identity_direction_graph(&mut g, a, fake_b, ma, id_form);
    let l_id_b = crate::loss::identity_direction_graph(&mut g, b, fake_a, mb, id_form);
    let l_id = g.add(l_id_a, l_id_b);
    g.backward(l_id);
    let mut grads = collect_grads(&g, &model.g_ab.net, &bound_g_ab);
    grads.extend(collect_grads(&g, &model.g_ba.net, &bound_g_ba));
    grads
}
