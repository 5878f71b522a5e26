//! Explainability as communication.
//!
//! Attention classifiers with softmax, entmax or sparsemax heads; explainers
//! that turn a classifier decision into a bag-of-words message; laypeople that
//! try to recover the decision from the message; and the statistics that score
//! how well that communication works.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod autodiff;
pub mod error;
pub mod explain;
pub mod game;
pub mod models;
pub mod simplex;
pub mod text;

pub use error::{Error, Result};
pub use simplex::{Distribution, ScoreVector, Transform};
