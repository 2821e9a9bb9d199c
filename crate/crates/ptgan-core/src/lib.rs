//! Core algorithms for identity-preserving person transfer between
//! re-identification domains: the translation networks and their losses, the
//! alternating training step, retrieval metrics, the split protocol, and a
//! synthetic two-domain benchmark generator.
//!
//! Everything here is pure computation over in-memory data in double
//! precision, and deterministic given explicit seeds. File formats, image
//! codecs, and the command-line workflow live in the companion `ptgan` crate.

pub mod conv;
pub mod data;
pub mod embedder;
pub mod error;
pub mod graph;
pub mod image;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pool;
pub mod rf;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;

pub use data::{
    apply_split, assign_query_gallery, merge_manifests, parse_reid_filename, DatasetManifest,
    FilenameConvention, PersonRecord, SplitRole,
};
pub use embedder::{train_embedder, Embedder, EmbedderRecipe};
pub use error::{DataError, EmbedError, MaskError, MetricError, ModelError, TrainError};
pub use image::ImageTensor;
pub use loss::{
    adversarial_loss, cycle_loss, identity_loss, style_loss, total_loss, AdversarialForm,
    AdversarialTarget, IdentityLossForm, LossBreakdown,
};
pub use mask::{baseline_prior_mask, ForegroundMask, PriorParams};
pub use metrics::{cmc, evaluate_retrieval, mean_ap, EvalReport, QueryDiagnostic, RetrievalMeta};
pub use model::{
    DiscriminatorSpec, Generator, GeneratorSpec, PatchDiscriminator, TransferDirection,
    TransferModel,
};
pub use pool::ImagePool;
pub use synth::{synth_generate, DomainSide, StyleParams, SynthConfig, SynthItem};
pub use tensor::Tensor;
pub use train::{train_step, OptState, ReplayPools, StepBatch, StepLosses, TrainConfig};
