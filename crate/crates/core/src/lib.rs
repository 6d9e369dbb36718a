//! Compression-robust facial-forgery detection with paired high/low quality
//! inputs.
//!
//! Two encoder branches see the same content at two compression levels. Their
//! heads are independent, their tails share weights, and training combines an
//! origin-radius metric loss, attention supervision with high-to-low transfer,
//! and a discriminator that tries to tell which branch's features come first
//! in a channel concatenation.

pub mod autograd;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
