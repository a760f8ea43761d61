//! Adaptively weighted matrix factorization for implicit feedback.
//!
//! The model scores user-item pairs with latent factors and weights every
//! squared-error term by a learned exposure probability: each user is
//! softly assigned to latent communities, each item carries a per-community
//! activation derived from who consumed it, and the inner product of the
//! two gives the confidence that the user actually saw the item. Training
//! runs full-batch gradient descent over all `n x m` cells, made tractable
//! by caching the user- and item-independent parts of the nested sums so
//! that each epoch costs `O((n + m) K^2 D + |X+| (K + D))` instead of
//! `O(n m K D)`.
//!
//! Crate layout:
//!
//! * [`ingest`] — interaction-log loading, binarization, filtering, k-fold
//!   splitting.
//! * [`model`] — parameters, the exposure network, and both objective
//!   routes (naive double loop and cached).
//! * [`fbgd`] — the cached full-batch trainer.
//! * [`oracle`] — slow reference gradients and finite-difference checks
//!   that certify the fast path.
//! * [`sgd`] — negative-sampling stochastic baselines.
//! * [`evalrank`] — top-K recommendation and ranking metrics.
//! * [`synth`] — seeded generators for synthetic instances (benchmarks,
//!   gradient checks, tests).

pub mod checkpoint;
pub mod error;
pub mod evalrank;
pub mod fbgd;
pub mod ingest;
pub mod mat;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sgd;
pub mod synth;

pub use error::{Error, Result};
