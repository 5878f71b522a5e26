//! Reverse-mode automatic differentiation over dense 2-D `f64` arrays.
//!
//! A [`Graph`] records each operation as it is evaluated; [`Graph::backward`]
//! replays the tape in reverse. Parameters live in a [`ParamSet`] and are bound
//! into a fresh graph per example.

mod graph;
mod lstm;
mod optim;
mod params;
pub mod serialize;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use lstm::{lstm_cell, lstm_sequence, BiLstm, BiLstmOutput, LstmParams};
pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use params::{Bound, GradBuffer, Param, ParamId, ParamSet};
pub use tensor::Tensor;
