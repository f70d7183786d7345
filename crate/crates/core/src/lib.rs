//! Multi-view prototype bank for visual-prompt classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`bank`]: the fixed-capacity, category-keyed bank and its update policies.
//! * [`fusion`]: the projection MLP and the softmax alignment head.
//! * [`learner`]: cross-entropy, analytic gradients, AdamW and the training loop.
//! * [`synth`]: the synthetic world standing in for the image encoders.
//! * [`harness`]: prompt-budget sweep, update-policy ablation, open-set evaluation.
//! * [`io`]: config loading, report writing and the binary bank format.

pub mod bank;
pub mod cli;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod io;
pub mod learner;
pub mod linalg;
pub mod synth;

pub use bank::{cosine_similarity, CategoryId, FeatureVector, UpdatePolicy, VisualBank};
pub use error::{Error, Result};
