pub mod encoder;
pub mod error;
pub mod eval;
pub mod inference;
pub mod numeric;
pub mod par;
pub mod synth;
pub mod tkg;
pub mod toy;
pub mod trainer;

pub use error::{CaperError, Result};
