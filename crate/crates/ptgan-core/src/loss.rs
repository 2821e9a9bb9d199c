//! Loss terms of the transfer objective.
//!
//! The total objective splits into a style part (two adversarial terms plus a
//! weighted cycle-consistency term) and a foreground-masked identity part:
//!
//! ```text
//! total = gan(A->B) + gan(B->A) + lambda2 * cycle + lambda1 * identity
//!         \------------- style -------------/
//! ```
//!
//! Each term exists both as a graph builder (used inside training steps) and
//! as a plain-tensor function returning a scalar, which is what the tests'
//! independent oracles are checked against.

use crate::error::ModelError;
use crate::graph::{Graph, Var};
use crate::model::TransferModel;
use crate::tensor::{Bchw, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversarialForm {
    /// Least-squares scoring: mean((score - target)^2).
    LeastSquares,
    /// Mean binary cross-entropy; scores are treated as logits.
    CrossEntropy,
}

impl Default for AdversarialForm {
    fn default() -> Self {
        AdversarialForm::LeastSquares
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialTarget {
    Real,
    Fake,
}

impl AdversarialTarget {
    fn value(self) -> f64 {
        match self {
            AdversarialTarget::Real => 1.0,
            AdversarialTarget::Fake => 0.0,
        }
    }
}

/// How the identity term reduces the masked difference. The default is the
/// per-image Frobenius norm divided by the pixel count, which keeps the
/// trade-off weight transferable across image sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityLossForm {
    /// Divide each sample's norm by its pixel count (height * width).
    pub normalized: bool,
    /// Use the squared norm instead of the norm.
    pub squared: bool,
}

impl Default for IdentityLossForm {
    fn default() -> Self {
        IdentityLossForm {
            normalized: true,
            squared: false,
        }
    }
}

/// All reported loss components of one step, with the recomposition
/// identities `style = gan_ab + gan_ba + lambda2 * cyc` and
/// `total = style + lambda1 * id` holding to accumulation tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gan_a_to_b: f64,
    pub l_gan_b_to_a: f64,
    pub l_cyc: f64,
    pub l_id: f64,
    pub l_style: f64,
    pub l_total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    /// Largest relative violation of the two recomposition identities.
    pub fn recomposition_error(&self) -> f64 {
        let style_ref = self.l_gan_a_to_b + self.l_gan_b_to_a + self.lambda2 * self.l_cyc;
        let total_ref = self.l_style + self.lambda1 * self.l_id;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        rel(self.l_style, style_ref).max(rel(self.l_total, total_ref))
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_gan_a_to_b,
            self.l_gan_b_to_a,
            self.l_cyc,
            self.l_id,
            self.l_style,
            self.l_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<(), ModelError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch {
            expected: format!("{:?}", a.dims()),
            got: format!("{:?}", b.dims()),
        })
    }
}

/// Expands a `[B,1,H,W]` mask across `channels`.
pub fn expand_mask(mask: &Tensor, channels: usize) -> Tensor {
    let s = Bchw::of(mask);
    assert_eq!(s.channels, 1, "masks are single-channel");
    let plane = s.pixels();
    let mut out = Tensor::zeros(&[s.batch, channels, s.height, s.width]);
    for bi in 0..s.batch {
        let src = &mask.data()[bi * plane..(bi + 1) * plane];
        for c in 0..channels {
            let off = (bi * channels + c) * plane;
            out.data_mut()[off..off + plane].copy_from_slice(src);
        }
    }
    out
}

pub fn adversarial_loss_graph(
    g: &mut Graph,
    scores: Var,
    target: AdversarialTarget,
    form: AdversarialForm,
) -> Var {
    match form {
        AdversarialForm::LeastSquares => {
            let t = g.constant(Tensor::filled(g.value(scores).dims(), target.value()));
            let diff = g.sub(scores, t);
            let sq = g.mul(diff, diff);
            g.mean_all(sq)
        }
        AdversarialForm::CrossEntropy => g.bce_with_logits_mean(scores, target.value()),
    }
}

/// Scalar adversarial loss of a score grid against a real/fake target.
pub fn adversarial_loss(
    scores: &Tensor,
    target: AdversarialTarget,
    form: AdversarialForm,
) -> Result<f64, ModelError> {
    if !scores.all_finite() {
        return Err(ModelError::NonFiniteScores);
    }
    let mut g = Graph::new();
    let s = g.constant(scores.clone());
    let loss = adversarial_loss_graph(&mut g, s, target, form);
    Ok(g.value(loss).item())
}

pub fn cycle_loss_graph(g: &mut Graph, a: Var, recon_a: Var, b: Var, recon_b: Var) -> Var {
    let da = g.sub(recon_a, a);
    let da = g.abs(da);
    let ma = g.mean_all(da);
    let db = g.sub(recon_b, b);
    let db = g.abs(db);
    let mb = g.mean_all(db);
    g.add(ma, mb)
}

/// Mean absolute reconstruction error, summed over both cycle directions.
pub fn cycle_loss(a: &Tensor, recon_a: &Tensor, b: &Tensor, recon_b: &Tensor) -> Result<f64, ModelError> {
    check_same_shape(a, recon_a)?;
    check_same_shape(b, recon_b)?;
    let mut g = Graph::new();
    let (av, rav, bv, rbv) = (
        g.constant(a.clone()),
        g.constant(recon_a.clone()),
        g.constant(b.clone()),
        g.constant(recon_b.clone()),
    );
    let loss = cycle_loss_graph(&mut g, av, rav, bv, rbv);
    Ok(g.value(loss).item())
}

/// One direction of the identity term: the masked difference's per-sample
/// Frobenius norm (optionally squared, optionally divided by pixel count),
/// averaged over the batch. `mask` must already be channel-expanded.
pub fn identity_direction_graph(
    g: &mut Graph,
    source: Var,
    transferred: Var,
    mask: Var,
    form: IdentityLossForm,
) -> Var {
    let s = Bchw::of(g.value(source));
    let diff = g.sub(transferred, source);
    let masked = g.mul(diff, mask);
    let sq = g.mul(masked, masked);
    let per_sample = g.sum_per_sample(sq);
    let reduced = if form.squared {
        per_sample
    } else {
        g.sqrt(per_sample)
    };
    let scaled = if form.normalized {
        g.scale(reduced, 1.0 / s.pixels() as f64)
    } else {
        reduced
    };
    g.mean_all(scaled)
}

/// Foreground-masked identity loss over both transfer directions.
///
/// Masks are `[B,1,H,W]` with weights in [0,1], paired with the source image
/// of each direction. Pixels with zero mask weight cannot influence the
/// result.
pub fn identity_loss(
    a: &Tensor,
    transferred_a: &Tensor,
    mask_a: &Tensor,
    b: &Tensor,
    transferred_b: &Tensor,
    mask_b: &Tensor,
    form: IdentityLossForm,
) -> Result<f64, ModelError> {
    check_same_shape(a, transferred_a)?;
    check_same_shape(b, transferred_b)?;
    let sa = Bchw::of(a);
    let sb = Bchw::of(b);
    let ma = Bchw::of(mask_a);
    let mb = Bchw::of(mask_b);
    if (ma.height, ma.width, ma.batch) != (sa.height, sa.width, sa.batch) {
        return Err(ModelError::ShapeMismatch {
            expected: format!("mask {}x{}x{}", sa.batch, sa.height, sa.width),
            got: format!("mask {}x{}x{}", ma.batch, ma.height, ma.width),
        });
    }
    if (mb.height, mb.width, mb.batch) != (sb.height, sb.width, sb.batch) {
        return Err(ModelError::ShapeMismatch {
            expected: format!("mask {}x{}x{}", sb.batch, sb.height, sb.width),
            got: format!("mask {}x{}x{}", mb.batch, mb.height, mb.width),
        });
    }
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let tav = g.constant(transferred_a.clone());
    let mav = g.constant(expand_mask(mask_a, sa.channels));
    let bv = g.constant(b.clone());
    let tbv = g.constant(transferred_b.clone());
    let mbv = g.constant(expand_mask(mask_b, sb.channels));
    let la = identity_direction_graph(&mut g, av, tav, mav, form);
    let lb = identity_direction_graph(&mut g, bv, tbv, mbv, form);
    let loss = g.add(la, lb);
    Ok(g.value(loss).item())
}

/// Variables of every loss component built for one batch pair.
pub struct LossVars {
    pub l_gan_a_to_b: Var,
    pub l_gan_b_to_a: Var,
    pub l_cyc: Var,
    pub l_id: Var,
    pub l_style: Var,
    pub l_total: Var,
    pub fake_b: Var,
    pub fake_a: Var,
}

/// Builds the full generator-side objective on `g`: both translations, both
/// reconstructions, discriminator scores on the fakes (against the realness
/// target), cycle term, and masked identity term.
///
/// `bound_*` control which networks are trainable in this graph; the
/// discriminators are typically bound frozen here.
pub struct GeneratorPassNets<'m> {
    pub model: &'m TransferModel,
    pub g_ab: &'m crate::nn::BoundNet,
    pub g_ba: &'m crate::nn::BoundNet,
    pub d_a: &'m crate::nn::BoundNet,
    pub d_b: &'m crate::nn::BoundNet,
}

#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph(
    g: &mut Graph,
    nets: &GeneratorPassNets<'_>,
    batch_a: Var,
    batch_b: Var,
    mask_a: Var,
    mask_b: Var,
    lambda1: f64,
    lambda2: f64,
    adv_form: AdversarialForm,
    id_form: IdentityLossForm,
) -> LossVars {
    let model = nets.model;
    let fake_b = model.g_ab.forward_bound(g, nets.g_ab, batch_a);
    let rec_a = model.g_ba.forward_bound(g, nets.g_ba, fake_b);
    let fake_a = model.g_ba.forward_bound(g, nets.g_ba, batch_b);
    let rec_b = model.g_ab.forward_bound(g, nets.g_ab, fake_a);

    let scores_fake_b = model.d_b.forward_bound(g, nets.d_b, fake_b);
    let scores_fake_a = model.d_a.forward_bound(g, nets.d_a, fake_a);
    let l_gan_a_to_b = adversarial_loss_graph(g, scores_fake_b, AdversarialTarget::Real, adv_form);
    let l_gan_b_to_a = adversarial_loss_graph(g, scores_fake_a, AdversarialTarget::Real, adv_form);

    let l_cyc = cycle_loss_graph(g, batch_a, rec_a, batch_b, rec_b);

    let l_id_a = identity_direction_graph(g, batch_a, fake_b, mask_a, id_form);
    let l_id_b = identity_direction_graph(g, batch_b, fake_a, mask_b, id_form);
    let l_id = g.add(l_id_a, l_id_b);

    let gan_sum = g.add(l_gan_a_to_b, l_gan_b_to_a);
    let cyc_weighted = g.scale(l_cyc, lambda2);
    let l_style = g.add(gan_sum, cyc_weighted);
    let id_weighted = g.scale(l_id, lambda1);
    let l_total = g.add(l_style, id_weighted);

    LossVars {
        l_gan_a_to_b,
        l_gan_b_to_a,
        l_cyc,
        l_id,
        l_style,
        l_total,
        fake_b,
        fake_a,
    }
}

fn breakdown_from_vars(g: &Graph, vars: &LossVars, lambda1: f64, lambda2: f64) -> LossBreakdown {
    LossBreakdown {
        l_gan_a_to_b: g.value(vars.l_gan_a_to_b).item(),
        l_gan_b_to_a: g.value(vars.l_gan_b_to_a).item(),
        l_cyc: g.value(vars.l_cyc).item(),
        l_id: g.value(vars.l_id).item(),
        l_style: g.value(vars.l_style).item(),
        l_total: g.value(vars.l_total).item(),
        lambda1,
        lambda2,
    }
}

/// Evaluates every component on frozen parameters. The style fields are the
/// generator-side objective; `l_total` adds the weighted identity term.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    model: &TransferModel,
    batch_a: &Tensor,
    batch_b: &Tensor,
    mask_a: &Tensor,
    mask_b: &Tensor,
    lambda1: f64,
    lambda2: f64,
    adv_form: AdversarialForm,
    id_form: IdentityLossForm,
) -> Result<LossBreakdown, ModelError> {
    model.g_ab.check_input(batch_a)?;
    model.g_ab.check_input(batch_b)?;
    let mut g = Graph::new();
    let a = g.constant(batch_a.clone());
    let b = g.constant(batch_b.clone());
    let ma = g.constant(expand_mask(mask_a, 3));
    let mb = g.constant(expand_mask(mask_b, 3));
    let bound_g_ab = model.g_ab.bind(&mut g, false);
    let bound_g_ba = model.g_ba.bind(&mut g, false);
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
    Ok(breakdown_from_vars(&g, &vars, lambda1, lambda2))
}

/// The style part alone (`lambda1` fixed at 0 in the returned breakdown).
pub fn style_loss(
    model: &TransferModel,
    batch_a: &Tensor,
    batch_b: &Tensor,
    lambda2: f64,
    adv_form: AdversarialForm,
) -> Result<LossBreakdown, ModelError> {
    let dims = batch_a.dims();
    let zero_mask = Tensor::zeros(&[dims[0], 1, dims[2], dims[3]]);
    let dims_b = batch_b.dims();
    let zero_mask_b = Tensor::zeros(&[dims_b[0], 1, dims_b[2], dims_b[3]]);
    total_loss(
        model,
        batch_a,
        batch_b,
        &zero_mask,
        &zero_mask_b,
        0.0,
        lambda2,
        adv_form,
        IdentityLossForm::default(),
    )
}
