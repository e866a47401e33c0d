//! Per-site neural guides.
//!
//! Every choice site owns a one-hidden-layer tanh MLP mapping a feature
//! vector (normalized call arguments plus pixel windows of the partial
//! output and the target) to the parameters of a proposal distribution.
//! Outputs are bounded relative to the prior at the call: a network whose
//! output layer is zero proposes exactly the prior.

pub mod features;
pub mod mixture;
pub mod network;
pub mod store;

pub use features::{assemble_features, assemble_features_into, Ablation, ArgRange, FeatureSet};
pub use mixture::{bound_outputs, guide_logpdf_grad, raw_logpdf_grad, MixtureParams};
pub use network::{GuideNetwork, Head};
pub use store::{GuideConfig, ParameterStore};
