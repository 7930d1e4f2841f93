//! Square-piece jigsaw solving with boundary pseudo-labels and adversarial
//! auxiliary learning.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod checkpoint;
pub mod compat;
pub mod puzzle;
pub mod synth;
pub mod warp;
pub mod tensor;
pub mod training;

pub use error::{Error, ExitClass, Result};
pub use exec::Exec;
pub use tensor::{Real, Tensor};
