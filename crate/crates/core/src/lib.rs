pub mod diffcore;
pub mod graphdata;
pub mod models;
pub mod trajectory;
pub mod theory;
pub mod training;
pub mod upsampler;
mod error;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
