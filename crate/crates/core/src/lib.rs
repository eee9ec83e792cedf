//! Hyperbolic contrastive graph representation learning for session-based
//! next-item recommendation.
//!
//! Items are embedded on the Lorentz hyperboloid; each session is turned into
//! a weighted directed graph, aggregated with hyperbolic graph attention,
//! read out through hyperbolic self-attention and a long/short-term gate, and
//! scored against the whole catalog. Training combines cross-entropy with a
//! hyperbolic margin loss.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod lorentz_tape;
pub mod manifold;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{HcgrError, Result};
