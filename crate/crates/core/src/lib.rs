pub mod align;
pub mod datagen;
pub mod error;
pub mod image;
pub mod lexicon;
pub mod matching;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
