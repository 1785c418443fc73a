#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod autograd;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod losses;
pub mod model;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};
