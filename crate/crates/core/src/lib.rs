//! k-anonymous synthetic averaging with local style alignment.
//!
//! Records are inverted into a generator's latent space, grouped into
//! clusters of exactly `k` by greedy same-size clustering, and each cluster is
//! replaced by one synthetic image. The k-SALSA averager starts from the latent
//! centroid and minimizes a blend of a content loss and a patch-aligned Gram
//! style loss with Adam. Baselines (pixel mean, PCA mean, latent centroid) and
//! evaluation harnesses (Fréchet distance, top-k membership inference) share
//! the same data path.

pub mod alignment;
pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod latent;
pub mod numerics;
pub mod objective;
pub mod pipeline;
pub mod style;
pub mod synthesis;
pub mod toydata;

pub use error::{Error, Result};
