//! Neural building blocks on top of the tape: LSTM cell, embedding table,
//! affine layer and dot-product attention head, plus named parameter sets.

mod layers;
mod params;

pub use layers::{AttentionHead, Embedding, Linear, LstmCell};
pub use params::{Bound, Gradients, ParamSet, ParamSpec};

#[cfg(test)]
mod tests;
