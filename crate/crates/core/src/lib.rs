//! Knowledge-inspired subdomain adaptation.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`numeric`] | dense matrices, seeded RNG, feed-forward nets with manual backprop, gradient checking |
//! | [`data`] | datasets, CSV + schema ingestion, synthetic two-domain generator, knowledge screening, stratified batches |
//! | [`division`] | knowledge-constrained subdomain division (1-D dynamic programming, graph label propagation) |
//! | [`divergence`] | Gaussian kernels, MMD, class-conditional subdomain divergence, subdomain matching |
//! | [`alignment`] | the subdomain-aware alignment loss and its gradient |
//! | [`adaptnet`] | one per-knowledge adaptation network and its training loop |
//! | [`fusion`] | attentive fusion of several frozen extractors |
//! | [`metrics`] | AUC, average precision, RMSE |
//! | [`codec`] | the flat binary parameter format |

pub mod adaptnet;
pub mod alignment;
pub mod codec;
pub mod data;
pub mod divergence;
pub mod division;
mod error;
pub mod fusion;
pub mod metrics;
pub mod numeric;

pub use error::{Error, Result};
