//! Hidden-state guided training of caption decoders.
//!
//! A caption autoencoder teacher, conditioned on synthetic object features,
//! supervises the hidden states of a student caption decoder. The student is
//! trained with maximum likelihood plus a state-matching loss, or with
//! self-critical REINFORCE where the state losses act as word-level
//! intermediate rewards.

pub mod autodiff;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod run;
pub mod student;
pub mod teacher;
pub mod training;

pub use autodiff::{grad_check, Tape, Tensor, Var};
pub use error::{Error, Result};
