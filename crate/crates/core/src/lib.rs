#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod silver;
pub mod synthetic;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use tape::{Gradients, ParamId, Primitive, Tape, Var};
pub use tensor::Tensor;
