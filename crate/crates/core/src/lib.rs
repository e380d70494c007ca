//! Self-supervised sign representation learning at desk scale.
//!
//! The pipeline: a synthetic signer renders tiny videos from procedural pose
//! streams, a masked video encoder is pretrained to regress skeletal sign
//! priors (keypoints, joint angles, pairwise displacements, hand activity)
//! under variance/covariance and adversarial style regularization, and the
//! pooled embeddings are evaluated with activity-weighted dictionary
//! retrieval plus a temperature-scaled class probability distribution.

pub mod diffcore;
pub mod discriminator;
pub mod model;
pub mod objectives;
pub mod pose;
pub mod priors;
pub mod retrieval;
pub mod synth;
pub mod trainer;

pub use diffcore::{grad_check, Tape, Tensor, Var};
pub use discriminator::{Discriminator, EmaPair};
pub use model::{EncoderConfig, SignModel};
pub use objectives::LossWeights;
pub use pose::{BoneLengths, PoseStream};
pub use priors::PriorSet;
pub use retrieval::{ClassDistribution, RetrievalIndex, SegmentEmbedding};
pub use synth::{Manifest, SignClassSpec, StyleSpec};
pub use trainer::PretrainConfig;
